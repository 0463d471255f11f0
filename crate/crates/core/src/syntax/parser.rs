//! Recursive-descent parsers for the SAPIC and StatVerif dialects.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use super::lexer::{lex, Tok, Token};
use super::{msr_pattern_vars, nil, Dialect, Event, Fact, Proc, Process};
use crate::terms::{
    sym, DestructorRule, FuncKind, RuleMode, Sym, SymbolicModel, Term, TermError, TermKind, DEFAULT_CHANNEL,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, col: usize, msg: impl Into<String>) -> Self {
        ParseError { line, col, msg: msg.into() }
    }
}

/// Property forms recognised in lemma declarations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LemmaKind {
    /// `not(Ex ... . E(..)@i)`
    Absence(Sym),
    /// `not(Ex x y ... . E(x,y)@i & K(x)@j & K(y)@k)`
    Exclusive(Sym),
}

#[derive(Debug, Clone)]
pub struct Lemma {
    pub name: String,
    pub text: String,
    /// `None` if the formula is outside the supported forms.
    pub kind: Option<LemmaKind>,
}

/// A parsed input file.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub dialect: Dialect,
    pub theory: Option<String>,
    pub model: SymbolicModel,
    /// True when the file declared its own function symbols.
    pub declared_model: bool,
    pub process: Proc,
    pub lemmas: Vec<Lemma>,
    /// Secrecy queries `query att: M.`
    pub queries: Vec<Term>,
}

pub fn parse_sapic(text: &str) -> Result<Parsed, ParseError> {
    parse(text, Dialect::Sapic)
}

pub fn parse_statverif(text: &str) -> Result<Parsed, ParseError> {
    parse(text, Dialect::StatVerif)
}

pub fn parse(text: &str, dialect: Dialect) -> Result<Parsed, ParseError> {
    let toks = lex(text)?;
    let declares = toks.iter().any(|t| {
        matches!(&t.tok, Tok::Ident(s) if
            (dialect == Dialect::Sapic && s == "functions")
            || (dialect == Dialect::StatVerif && (s == "fun" || s == "reduc")))
    });
    let model = if declares {
        let mut m = SymbolicModel::new();
        m.set_mode(match dialect {
            Dialect::Sapic => RuleMode::Sapic,
            Dialect::StatVerif => RuleMode::StatVerif,
        });
        m
    } else {
        SymbolicModel::pkenc_sig(match dialect {
            Dialect::Sapic => RuleMode::Sapic,
            Dialect::StatVerif => RuleMode::StatVerif,
        })
    };
    let mut p = Parser {
        toks,
        pos: 0,
        dialect,
        model,
        macros: HashMap::new(),
        lemmas: Vec::new(),
        queries: Vec::new(),
        theory: None,
    };
    let process = match dialect {
        Dialect::Sapic => p.sapic_file()?,
        Dialect::StatVerif => p.statverif_file()?,
    };
    let process = resolve(&process, &Scope::default());
    Ok(Parsed {
        dialect,
        theory: p.theory,
        model: p.model,
        declared_model: declares,
        process,
        lemmas: p.lemmas,
        queries: p.queries,
    })
}

/// Parses a standalone model declaration: `functions:` and `equations:`
/// blocks, or `fun f/n.` and `reduc` declarations.
pub fn parse_model(text: &str) -> Result<SymbolicModel, TermError> {
    let conv = |e: ParseError| TermError::ModelSyntax { line: e.line, col: e.col, msg: e.msg };
    let toks = lex(text).map_err(conv)?;
    let statverif = toks.iter().any(|t| matches!(&t.tok, Tok::Ident(s) if s == "fun" || s == "reduc"));
    let mut model = SymbolicModel::new();
    model.set_mode(if statverif { RuleMode::StatVerif } else { RuleMode::Sapic });
    let mut p = Parser {
        toks,
        pos: 0,
        dialect: if statverif { Dialect::StatVerif } else { Dialect::Sapic },
        model,
        macros: HashMap::new(),
        lemmas: Vec::new(),
        queries: Vec::new(),
        theory: None,
    };
    loop {
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::Ident(s) if s == "functions" && !statverif => p.functions_block().map_err(conv)?,
            Tok::Ident(s) if s == "equations" && !statverif => p.equations_block().map_err(conv)?,
            Tok::Ident(s) if s == "fun" && statverif => p.fun_decl().map_err(conv)?,
            Tok::Ident(s) if s == "reduc" && statverif => p.reduc_decl().map_err(conv)?,
            _ => return Err(conv(p.err("expected a model declaration"))),
        }
    }
    Ok(p.model)
}

const KEYWORDS: &[&str] = &["new", "in", "out", "if", "then", "else", "let", "event", "as", "lock", "unlock"];
const SAPIC_KEYWORDS: &[&str] =
    &["insert", "delete", "lookup", "theory", "begin", "end", "functions", "equations", "lemma", "process"];
const STATVERIF_KEYWORDS: &[&str] = &["read", "process", "fun", "reduc", "query", "free"];

fn is_keyword(dialect: Dialect, s: &str) -> bool {
    KEYWORDS.contains(&s)
        || match dialect {
            Dialect::Sapic => SAPIC_KEYWORDS.contains(&s),
            Dialect::StatVerif => STATVERIF_KEYWORDS.contains(&s),
        }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    dialect: Dialect,
    model: SymbolicModel,
    macros: HashMap<String, Proc>,
    lemmas: Vec<Lemma>,
    queries: Vec<Term>,
    theory: Option<String>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        let t = &self.toks[self.pos];
        let found = match &t.tok {
            Tok::Ident(s) | Tok::Quoted(s) => format!("`{s}`"),
            Tok::Number(n) => format!("`{n}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Other(c) => format!("`{c}`"),
            Tok::Eof => "end of input".to_string(),
        };
        ParseError::new(t.line, t.col, format!("{}, found {found}", msg.into()))
    }

    fn err_here(&self, msg: impl Into<String>) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError::new(t.line, t.col, msg)
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{p}`")))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{k}`")))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(self.dialect, &s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.err("expected an identifier")),
        }
    }

    fn number(&mut self) -> PResult<u64> {
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                Ok(n)
            }
            _ => Err(self.err("expected a number")),
        }
    }

    // ---- files ----

    fn sapic_file(&mut self) -> PResult<Proc> {
        let wrapped = self.eat_kw("theory");
        if wrapped {
            self.theory = Some(self.ident()?);
            self.expect_kw("begin")?;
        }
        let mut main: Option<Proc> = None;
        loop {
            match self.peek().clone() {
                Tok::Eof if !wrapped => break,
                Tok::Ident(s) if s == "end" && wrapped => {
                    self.bump();
                    if *self.peek() != Tok::Eof {
                        return Err(self.err("expected end of input"));
                    }
                    break;
                }
                Tok::Ident(s) if s == "functions" => self.functions_block()?,
                Tok::Ident(s) if s == "equations" => self.equations_block()?,
                Tok::Ident(s) if s == "builtins" => {
                    return Err(self.err_here("builtins are not supported; declare functions explicitly"))
                }
                Tok::Ident(s) if s == "lemma" => self.lemma()?,
                Tok::Ident(s) if s == "let" && matches!(self.peek_at(2), Tok::Punct("=")) && !self.is_let_in() => {
                    self.bump();
                    let name = self.ident()?;
                    self.expect_punct("=")?;
                    let body = self.process()?;
                    self.eat_punct(".");
                    self.macros.insert(name, body);
                }
                Tok::Eof => return Err(self.err("expected `end`")),
                _ => {
                    if main.is_some() {
                        return Err(self.err("unexpected input after the main process"));
                    }
                    self.eat_kw("process");
                    main = Some(self.process()?);
                }
            }
        }
        main.ok_or_else(|| self.err_here("no process given"))
    }

    /// Whether `let x = t` at the cursor continues with `in`, making it a
    /// process rather than a macro definition.
    fn is_let_in(&mut self) -> bool {
        let saved = self.pos;
        self.pos += 3;
        let found = self.term(false).is_ok() && matches!(self.peek(), Tok::Ident(s) if s == "in");
        self.pos = saved;
        found
    }

    fn statverif_file(&mut self) -> PResult<Proc> {
        loop {
            match self.peek().clone() {
                Tok::Ident(s) if s == "fun" => self.fun_decl()?,
                Tok::Ident(s) if s == "reduc" => self.reduc_decl()?,
                Tok::Ident(s) if s == "free" => {
                    self.bump();
                    while !self.is_punct(".") && *self.peek() != Tok::Eof {
                        self.bump();
                    }
                    self.expect_punct(".")?;
                }
                Tok::Ident(s) if s == "query" => {
                    self.bump();
                    let att = self.ident()?;
                    if att != "att" && att != "attacker" {
                        return Err(self.err("only `query att: M.` is supported"));
                    }
                    self.expect_punct(":")?;
                    loop {
                        let t = self.term(false)?;
                        self.queries.push(t);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                    self.expect_punct(".")?;
                }
                Tok::Ident(s) if s == "let" && matches!(self.peek_at(2), Tok::Punct("=")) => {
                    self.bump();
                    let name = self.ident()?;
                    self.expect_punct("=")?;
                    let body = self.process()?;
                    self.expect_punct(".")?;
                    self.macros.insert(name, body);
                }
                Tok::Ident(s) if s == "process" => {
                    self.bump();
                    let p = self.process()?;
                    self.eat_punct(".");
                    if *self.peek() != Tok::Eof {
                        return Err(self.err("expected end of input"));
                    }
                    return Ok(p);
                }
                Tok::Eof => return Err(self.err_here("no process given")),
                _ => {
                    let p = self.process()?;
                    self.eat_punct(".");
                    if *self.peek() != Tok::Eof {
                        return Err(self.err("expected end of input"));
                    }
                    return Ok(p);
                }
            }
        }
    }

    fn model_err(&self, e: TermError) -> ParseError {
        self.err_here(e.to_string())
    }

    fn functions_block(&mut self) -> PResult<()> {
        self.bump();
        self.expect_punct(":")?;
        loop {
            if !(matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Punct("/"))) {
                break;
            }
            let name = self.ident()?;
            self.expect_punct("/")?;
            let arity = self.number()? as usize;
            if self.model.symbol(&name).is_some_and(|s| s.arity != arity) {
                return Err(self.err_here(format!("`{name}` redeclared with arity {arity}")));
            }
            if self.model.symbol(&name).is_none() {
                self.model.declare(&name, arity, FuncKind::Constructor).map_err(|e| self.model_err(e))?;
            }
            self.eat_punct(",");
        }
        Ok(())
    }

    fn equations_block(&mut self) -> PResult<()> {
        self.bump();
        self.expect_punct(":")?;
        loop {
            if !(matches!(self.peek(), Tok::Ident(s) if !is_keyword(self.dialect, s))
                && matches!(self.peek_at(1), Tok::Punct("(")))
            {
                break;
            }
            self.rule(false)?;
            if !self.eat_punct(",") {
                break;
            }
        }
        Ok(())
    }

    fn fun_decl(&mut self) -> PResult<()> {
        self.bump();
        let name = self.ident()?;
        self.expect_punct("/")?;
        let arity = self.number()? as usize;
        self.expect_punct(".")?;
        self.model.declare(&name, arity, FuncKind::Constructor).map_err(|e| self.model_err(e))
    }

    fn reduc_decl(&mut self) -> PResult<()> {
        self.bump();
        loop {
            self.rule(true)?;
            if !self.eat_punct(";") {
                break;
            }
        }
        self.expect_punct(".")
    }

    /// `d(p1, ..., pn) = rhs`; declares `d` as a destructor.
    fn rule(&mut self, implicit_head: bool) -> PResult<()> {
        let start = self.pos;
        let head = self.ident()?;
        let mut arity = 0;
        if implicit_head {
            // Count top-level arguments to declare the head before parsing.
            self.expect_punct("(")?;
            let mut depth = 1;
            let mut seen_arg = false;
            while depth > 0 {
                match self.bump() {
                    Tok::Punct("(") => depth += 1,
                    Tok::Punct(")") => depth -= 1,
                    Tok::Punct(",") if depth == 1 => arity += 1,
                    Tok::Eof => return Err(self.err("unbalanced parentheses")),
                    _ => {}
                }
                if depth > 0 {
                    seen_arg = true;
                }
            }
            if seen_arg {
                arity += 1;
            }
            self.pos = start + 1;
        } else {
            arity = self
                .model
                .symbol(&head)
                .map(|s| s.arity)
                .ok_or_else(|| self.err_here(format!("unknown function symbol `{head}`")))?;
        }
        self.pos = start;
        self.model.declare(&head, arity, FuncKind::Destructor).map_err(|e| self.model_err(e))?;
        let lhs = self.term(true)?;
        self.expect_punct("=")?;
        let rhs = self.term(true)?;
        let args = lhs.args().to_vec();
        let rule = DestructorRule { head: sym(&head), lhs: args, rhs };
        if self.dialect == Dialect::Sapic {
            let mut probe = SymbolicModel::new();
            for s in self.model.symbols() {
                probe.declare(&s.name, s.arity, s.kind).map_err(|e| self.model_err(e))?;
            }
            probe.add_rule(rule.clone()).map_err(|e| self.model_err(e))?;
            if !probe.filtered_rules().is_empty() {
                return Err(self.err_here(format!("equation `{rule}` is not subterm-convergent")));
            }
        }
        self.model.add_rule(rule).map_err(|e| self.model_err(e))
    }

    fn lemma(&mut self) -> PResult<()> {
        self.bump();
        let name = self.ident()?;
        let mut text = Vec::new();
        while !(self.is_kw("lemma") || self.is_kw("end") || *self.peek() == Tok::Eof) {
            text.push(self.bump());
        }
        let kind = recognise_lemma(&text);
        let rendered = text
            .iter()
            .map(|t| match t {
                Tok::Ident(s) | Tok::Quoted(s) => s.clone(),
                Tok::Number(n) => n.to_string(),
                Tok::Punct(p) => p.to_string(),
                Tok::Other(c) => c.to_string(),
                Tok::Eof => String::new(),
            })
            .collect::<Vec<_>>()
            .join(" ");
        self.lemmas.push(Lemma { name, text: rendered, kind });
        Ok(())
    }

    // ---- terms ----

    /// Parses a term. In rule context, bare identifiers are variables.
    fn term(&mut self, rule_ctx: bool) -> PResult<Term> {
        let tok = &self.toks[self.pos];
        let (line, col) = (tok.line, tok.col);
        match self.peek().clone() {
            Tok::Quoted(s) => {
                self.bump();
                Ok(Term::constant(&s))
            }
            Tok::Ident(s) if !is_keyword(self.dialect, &s) => {
                self.bump();
                if self.eat_punct("(") {
                    let mut args = Vec::new();
                    if !self.eat_punct(")") {
                        loop {
                            args.push(self.term(rule_ctx)?);
                            if self.eat_punct(")") {
                                break;
                            }
                            self.expect_punct(",")?;
                        }
                    }
                    let f = self
                        .model
                        .symbol(&s)
                        .ok_or_else(|| ParseError::new(line, col, format!("unknown function symbol `{s}`")))?;
                    if f.arity != args.len() {
                        return Err(ParseError::new(
                            line,
                            col,
                            format!("`{s}` expects {} argument(s), got {}", f.arity, args.len()),
                        ));
                    }
                    return Ok(Term::app(&s, args));
                }
                if self.model.symbol(&s).is_some_and(|f| f.arity == 0) {
                    return Ok(Term::constant(&s));
                }
                // Symbols with arguments and names live in separate namespaces.
                Ok(if rule_ctx { Term::var(&s) } else { Term::name(&s) })
            }
            _ => Err(self.err("expected a term")),
        }
    }

    fn event_label(&mut self) -> PResult<Event> {
        let name = self.ident()?;
        let mut args = Vec::new();
        if self.eat_punct("(") && !self.eat_punct(")") {
            loop {
                args.push(self.term(false)?);
                if self.eat_punct(")") {
                    break;
                }
                self.expect_punct(",")?;
            }
        }
        Ok(Event { symbol: sym(&name), args })
    }

    fn fact(&mut self) -> PResult<Fact> {
        let persistent = self.eat_punct("!");
        let e = self.event_label()?;
        Ok(Fact { symbol: e.symbol, persistent, args: e.args })
    }

    fn fact_list(&mut self, close: &str) -> PResult<Vec<Fact>> {
        let mut out = Vec::new();
        if self.eat_punct(close) {
            return Ok(out);
        }
        loop {
            out.push(self.fact()?);
            if self.eat_punct(close) {
                return Ok(out);
            }
            self.expect_punct(",")?;
        }
    }

    // ---- processes ----

    fn process(&mut self) -> PResult<Proc> {
        let mut parts = vec![self.unary()?];
        while self.eat_punct("|") || self.eat_punct("||") {
            parts.push(self.unary()?);
        }
        Ok(par_chain(parts))
    }

    fn cont(&mut self) -> PResult<Proc> {
        if self.eat_punct(";") {
            self.process()
        } else {
            Ok(nil())
        }
    }

    fn else_branch(&mut self) -> PResult<Option<Proc>> {
        if self.eat_kw("else") {
            Ok(Some(self.process()?))
        } else {
            Ok(None)
        }
    }

    fn unary(&mut self) -> PResult<Proc> {
        let sv = self.dialect == Dialect::StatVerif;
        match self.peek().clone() {
            Tok::Number(0) => {
                self.bump();
                Ok(nil())
            }
            Tok::Punct("(") => {
                self.bump();
                let p = self.process()?;
                self.expect_punct(")")?;
                Ok(p)
            }
            Tok::Punct("!") => {
                self.bump();
                let body = self.unary()?;
                Ok(Process::Repl { body, copies: 0 }.arc())
            }
            Tok::Punct("[") if sv => {
                self.bump();
                let cell = self.ident()?;
                self.expect_punct("|->")?;
                let value = self.term(false)?;
                self.expect_punct("]")?;
                Ok(Process::SvInit { cell: Term::name(&cell), value }.arc())
            }
            Tok::Punct("[") => {
                self.bump();
                let lhs = self.fact_list("]")?;
                let mut events = Vec::new();
                if self.eat_punct("-[") || self.eat_punct("--[") {
                    if !self.eat_punct("]->") {
                        loop {
                            events.push(self.event_label()?);
                            if self.eat_punct("]->") {
                                break;
                            }
                            self.expect_punct(",")?;
                        }
                    }
                } else {
                    self.expect_punct("-->")?;
                }
                self.expect_punct("[")?;
                let rhs = self.fact_list("]")?;
                let cont = self.cont()?;
                Ok(Process::Msr { lhs, events, rhs, cont }.arc())
            }
            Tok::Ident(kw) => self.keyword_process(&kw),
            _ => Err(self.err("expected a process")),
        }
    }

    fn keyword_process(&mut self, kw: &str) -> PResult<Proc> {
        let sv = self.dialect == Dialect::StatVerif;
        let p = match kw {
            "new" => {
                self.bump();
                let n = self.ident()?;
                Process::New(sym(&n), self.cont()?)
            }
            "in" => {
                self.bump();
                self.expect_punct("(")?;
                let first = self.term(false)?;
                let (chan, pat) = if self.eat_punct(",") {
                    (first, self.term(false)?)
                } else {
                    (Term::constant(DEFAULT_CHANNEL), first)
                };
                self.expect_punct(")")?;
                let cont = self.cont()?;
                match pat.kind() {
                    TermKind::Name(x) => Process::In { chan, var: x.clone(), cont },
                    _ => Process::InPattern { chan, pattern: pat, cont },
                }
            }
            "out" => {
                self.bump();
                self.expect_punct("(")?;
                let first = self.term(false)?;
                let (chan, msg) = if self.eat_punct(",") {
                    (first, self.term(false)?)
                } else {
                    (Term::constant(DEFAULT_CHANNEL), first)
                };
                self.expect_punct(")")?;
                Process::Out { chan, msg, cont: self.cont()? }
            }
            "event" => {
                self.bump();
                let e = self.event_label()?;
                Process::Event(e, self.cont()?)
            }
            "if" => {
                self.bump();
                let lhs = self.term(false)?;
                self.expect_punct("=")?;
                let rhs = self.term(false)?;
                self.expect_kw("then")?;
                let then = self.process()?;
                let else_ = self.else_branch()?.unwrap_or_else(nil);
                Process::If { lhs, rhs, then, else_ }
            }
            "let" => {
                self.bump();
                let var = self.ident()?;
                self.expect_punct("=")?;
                let expr = self.term(false)?;
                self.expect_kw("in")?;
                let then = self.process()?;
                let else_ = self.else_branch()?.unwrap_or_else(nil);
                Process::Let { var: sym(&var), expr, then, else_ }
            }
            "lock" if sv => {
                self.bump();
                Process::SvLock(self.cont()?)
            }
            "unlock" if sv => {
                self.bump();
                Process::SvUnlock(self.cont()?)
            }
            "read" if sv => {
                self.bump();
                let cell = self.ident()?;
                self.expect_kw("as")?;
                let var = self.ident()?;
                Process::SvRead { cell: Term::name(&cell), var: sym(&var), cont: self.cont()? }
            }
            "insert" if !sv => {
                self.bump();
                let key = self.term(false)?;
                self.expect_punct(",")?;
                let value = self.term(false)?;
                Process::Insert { key, value, cont: self.cont()? }
            }
            "delete" if !sv => {
                self.bump();
                let key = self.term(false)?;
                Process::Delete { key, cont: self.cont()? }
            }
            "lookup" if !sv => {
                self.bump();
                let key = self.term(false)?;
                self.expect_kw("as")?;
                let var = self.ident()?;
                self.expect_kw("in")?;
                let then = self.process()?;
                let else_ = self.else_branch()?;
                Process::Lookup { key, var: sym(&var), then, else_ }
            }
            "lock" if !sv => {
                self.bump();
                let t = self.term(false)?;
                Process::Lock(t, self.cont()?)
            }
            "unlock" if !sv => {
                self.bump();
                let t = self.term(false)?;
                Process::Unlock(t, self.cont()?)
            }
            _ if is_keyword(self.dialect, kw) => {
                return Err(self.err(format!("`{kw}` cannot start a {} process", self.dialect)))
            }
            _ if sv && matches!(self.peek_at(1), Tok::Punct(":=")) => {
                self.bump();
                self.bump();
                let value = self.term(false)?;
                Process::SvAssign { cell: Term::name(kw), value, cont: self.cont()? }
            }
            _ => {
                if matches!(self.peek_at(1), Tok::Punct("(")) {
                    return Err(self.err("expected a process"));
                }
                let body =
                    self.macros.get(kw).cloned().ok_or_else(|| self.err_here(format!("unknown process `{kw}`")))?;
                self.bump();
                return Ok(body);
            }
        };
        Ok(Arc::new(p))
    }
}

fn par_chain(mut parts: Vec<Proc>) -> Proc {
    let last = parts.pop().expect("at least one part");
    parts.into_iter().rev().fold(last, |acc, p| Process::Par(p, acc).arc())
}

fn recognise_lemma(toks: &[Tok]) -> Option<LemmaKind> {
    let body: Vec<&Tok> = toks.iter().filter(|t| !matches!(t, Tok::Other('"'))).collect();
    let colon = body.iter().position(|t| matches!(t, Tok::Punct(":")))?;
    let f = &body[colon + 1..];
    let is_ident = |t: &Tok, s: &str| matches!(t, Tok::Ident(x) if x == s);
    if f.len() < 4 || !is_ident(f[0], "not") || !matches!(f[1], Tok::Punct("(")) || !is_ident(f[2], "Ex") {
        return None;
    }
    let dot = f.iter().position(|t| matches!(t, Tok::Punct(".")))?;
    let inner = &f[dot + 1..f.len() - 1];
    if !matches!(f[f.len() - 1], Tok::Punct(")")) {
        return None;
    }
    let mut facts: Vec<(String, Vec<String>)> = Vec::new();
    for conj in inner.split(|t| matches!(t, Tok::Punct("&"))) {
        let name = match conj.first() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => return None,
        };
        if !matches!(conj.get(1), Some(Tok::Punct("("))) {
            return None;
        }
        let close = conj.iter().position(|t| matches!(t, Tok::Punct(")")))?;
        let args: Vec<String> = conj[2..close]
            .iter()
            .filter_map(|t| match t {
                Tok::Ident(s) => Some(s.clone()),
                _ => None,
            })
            .collect();
        if !matches!(conj.get(close + 1), Some(Tok::Punct("@"))) {
            return None;
        }
        facts.push((name, args));
    }
    let (ks, es): (Vec<_>, Vec<_>) = facts.into_iter().partition(|(n, _)| n == "K");
    if es.len() != 1 {
        return None;
    }
    let (e, args) = &es[0];
    if ks.is_empty() {
        return Some(LemmaKind::Absence(sym(e)));
    }
    if args.len() == 2 && ks.len() == 2 {
        let known: HashSet<&String> = ks.iter().filter_map(|(_, a)| a.first()).collect();
        if known.contains(&args[0]) && known.contains(&args[1]) {
            return Some(LemmaKind::Exclusive(sym(e)));
        }
    }
    None
}

/// Which identifiers are bound, and as what.
#[derive(Clone, Default)]
struct Scope {
    vars: HashSet<Sym>,
    names: HashSet<Sym>,
}

impl Scope {
    fn with_var(&self, v: &Sym) -> Scope {
        let mut s = self.clone();
        s.names.remove(v);
        s.vars.insert(v.clone());
        s
    }

    fn with_name(&self, n: &Sym) -> Scope {
        let mut s = self.clone();
        s.vars.remove(n);
        s.names.insert(n.clone());
        s
    }
}

fn resolve_term(t: &Term, scope: &Scope) -> Term {
    let map: HashMap<Sym, Term> = {
        let mut ns = Vec::new();
        t.names(&mut ns);
        ns.into_iter().filter(|n| scope.vars.contains(n)).map(|n| (n.clone(), Term::var_sym(n))).collect()
    };
    t.subst_names(&map)
}

/// Turns identifiers bound by variable binders into variables; msr
/// left-hand sides bind every otherwise unbound identifier.
fn resolve(p: &Proc, scope: &Scope) -> Proc {
    let rt = |t: &Term| resolve_term(t, scope);
    Arc::new(match &**p {
        Process::New(n, q) => Process::New(n.clone(), resolve(q, &scope.with_name(n))),
        Process::In { chan, var, cont } => {
            Process::In { chan: rt(chan), var: var.clone(), cont: resolve(cont, &scope.with_var(var)) }
        }
        Process::Let { var, expr, then, else_ } => Process::Let {
            var: var.clone(),
            expr: rt(expr),
            then: resolve(then, &scope.with_var(var)),
            else_: resolve(else_, scope),
        },
        Process::Lookup { key, var, then, else_ } => Process::Lookup {
            key: rt(key),
            var: var.clone(),
            then: resolve(then, &scope.with_var(var)),
            else_: else_.as_ref().map(|e| resolve(e, scope)),
        },
        Process::SvRead { cell, var, cont } => {
            Process::SvRead { cell: rt(cell), var: var.clone(), cont: resolve(cont, &scope.with_var(var)) }
        }
        Process::Msr { lhs, events, rhs, cont } => {
            let mut inner = scope.clone();
            let mut pattern = Vec::new();
            for f in lhs {
                for a in &f.args {
                    a.names(&mut pattern);
                }
            }
            pattern.retain(|n| !scope.names.contains(n));
            for v in &pattern {
                inner = inner.with_var(v);
            }
            let lhs2: Vec<Fact> = lhs
                .iter()
                .map(|f| Fact {
                    symbol: f.symbol.clone(),
                    persistent: f.persistent,
                    args: f.args.iter().map(|a| resolve_term(a, &inner)).collect(),
                })
                .collect();
            // Unbound identifiers on the right become (free) variables so the
            // well-formedness check can report them.
            let rhs_scope = {
                let mut s = inner.clone();
                for f in rhs {
                    for a in &f.args {
                        let mut ns = Vec::new();
                        a.names(&mut ns);
                        for n in ns {
                            if !s.names.contains(&n) {
                                s.vars.insert(n);
                            }
                        }
                    }
                }
                s
            };
            debug_assert!(msr_pattern_vars(&lhs2).len() <= pattern.len());
            Process::Msr {
                lhs: lhs2,
                events: events
                    .iter()
                    .map(|e| Event {
                        symbol: e.symbol.clone(),
                        args: e.args.iter().map(|a| resolve_term(a, &inner)).collect(),
                    })
                    .collect(),
                rhs: rhs
                    .iter()
                    .map(|f| Fact {
                        symbol: f.symbol.clone(),
                        persistent: f.persistent,
                        args: f.args.iter().map(|a| resolve_term(a, &rhs_scope)).collect(),
                    })
                    .collect(),
                cont: resolve(cont, &inner),
            }
        }
        other => other.rebuild(&|t| resolve_term(t, scope), &mut |q| resolve(q, scope)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_level_let_in_is_a_process() {
        let p = parse_sapic("let x = fst(pair(a, b)) in out(c, x) else out(c, b)").unwrap();
        assert!(matches!(&*p.process, Process::Let { .. }), "{:?}", p.process);
        let m = parse_sapic("let P = lookup s as y in 0\nP | P").unwrap();
        assert!(matches!(&*m.process, Process::Par(..)), "{:?}", m.process);
    }

    #[test]
    fn sapic_insert_with_constant() {
        let p = parse_sapic("insert s,'init'; 0").unwrap();
        match &*p.process {
            Process::Insert { key, value, cont } => {
                assert_eq!(key, &Term::name("s"));
                assert_eq!(value, &Term::constant("'init'"));
                assert!(cont.is_nil());
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_sapic("0").unwrap().process.is_nil());
    }

    #[test]
    fn sapic_msr() {
        let p = parse_sapic("functions: fun/2\n[Iter(x)]-[]->[Iter(fun(x,x))]").unwrap();
        match &*p.process {
            Process::Msr { lhs, events, rhs, .. } => {
                assert_eq!(lhs.len(), 1);
                assert!(events.is_empty());
                assert_eq!(rhs.len(), 1);
                assert!(!lhs[0].persistent);
                assert_eq!(lhs[0].args[0], Term::var("x"));
                assert_eq!(rhs[0].args[0].to_string(), "fun(x, x)");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn statverif_examples() {
        let p = parse_statverif("[s |-> init]").unwrap();
        assert_eq!(*p.process, Process::SvInit { cell: Term::name("s"), value: Term::name("init") });
        let p = parse_statverif("lock; in(c,x); read s as y; 0").unwrap();
        match &*p.process {
            Process::SvLock(q) => match &**q {
                Process::In { var, cont, .. } => {
                    assert_eq!(&**var, "x");
                    assert!(matches!(&**cont, Process::SvRead { .. }));
                }
                other => panic!("{other:?}"),
            },
            other => panic!("{other:?}"),
        }
        let p = parse_statverif("in(c, x); s := x; unlock").unwrap();
        match &*p.process {
            Process::In { cont, .. } => assert_eq!(
                **cont,
                Process::SvAssign {
                    cell: Term::name("s"),
                    value: Term::var("x"),
                    cont: Process::SvUnlock(nil()).arc()
                }
            ),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_sapic("out(c, nosuch(a))").unwrap_err();
        assert_eq!((e.line, e.col), (1, 8));
        assert!(e.msg.contains("unknown function symbol"));
        let e = parse_sapic("out(c, pair(a))").unwrap_err();
        assert!(e.msg.contains("expects 2"));
        assert!(parse_sapic("out(c").is_err());
    }

    #[test]
    fn pattern_input_is_kept_for_diagnostics() {
        let p = parse_sapic("functions: h/1\nin(c, h(x)); 0").unwrap();
        assert!(matches!(&*p.process, Process::InPattern { .. }));
    }

    #[test]
    fn lemma_recognition() {
        let src = "theory T begin\nevent A; 0\nlemma secrecy:\n not(Ex x y #i #k1 #k2. Exclusive(x,y)@i & K(x)@k1 & K(y)@k2)\nlemma l2: not(Ex #i. Bad()@i)\nlemma other: All x #i. A(x)@i ==> B(x)@i\nend";
        let p = parse_sapic(src).unwrap();
        assert_eq!(p.lemmas[0].kind, Some(LemmaKind::Exclusive(sym("Exclusive"))));
        assert_eq!(p.lemmas[1].kind, Some(LemmaKind::Absence(sym("Bad"))));
        assert_eq!(p.lemmas[2].kind, None);
    }

    #[test]
    fn variables_resolved_by_scope() {
        let p = parse_sapic("in(c, x); out(c, x); new x; out(c, x)").unwrap();
        let fv = p.process.free_vars();
        assert!(fv.is_empty());
        let fns: Vec<String> = p.process.free_names().iter().map(|s| s.to_string()).collect();
        assert_eq!(fns, vec!["c"]);
    }

    #[test]
    fn model_file() {
        let m = parse_model("functions: h/1, pair/2, fst/1\nequations: fst(pair(x, y)) = x").unwrap();
        assert!(m.is_destructor("fst"));
        assert!(m.is_constructor("h"));
        assert!(parse_model("functions: f/1, d/1\nequations: d(f(x)) = y").is_err());
        let sv = parse_model("fun ek/1. fun dk/1.\nreduc ekofdk(dk(t)) = ek(t).").unwrap();
        assert_eq!(sv.filtered_rules().len(), 1);
        assert!(parse_model("functions: ek/1, dk/1, ekofdk/1\nequations: ekofdk(dk(t)) = ek(t)").is_err());
    }
}

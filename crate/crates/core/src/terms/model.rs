//! Symbolic models: function symbols, destructor rules, message grammar.

use std::collections::HashMap;

use super::eval::{match_term, MatchOutcome};
use super::{sym, Sym, Term, TermError, TermKind};

pub use crate::syntax::parse_model;

/// The equality destructor present in every model.
pub const EQUAL: &str = "equal";

/// Public channel used by the one-argument `in`/`out` forms.
pub const DEFAULT_CHANNEL: &str = "'pub'";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum FuncKind {
    Constructor,
    Destructor,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FuncSymbol {
    pub name: Sym,
    pub arity: usize,
    pub kind: FuncKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DestructorRule {
    pub head: Sym,
    pub lhs: Vec<Term>,
    pub rhs: Term,
}

impl DestructorRule {
    pub fn new(head: &str, lhs: Vec<Term>, rhs: Term) -> Self {
        DestructorRule { head: sym(head), lhs, rhs }
    }

    fn lhs_vars(&self) -> Vec<Sym> {
        let mut out = Vec::new();
        for p in &self.lhs {
            p.vars(&mut out);
        }
        out
    }

    /// Renames every variable with the given suffix.
    fn renamed(&self, suffix: &str) -> DestructorRule {
        let mut vars = Vec::new();
        for p in &self.lhs {
            p.vars(&mut vars);
        }
        self.rhs.vars(&mut vars);
        let map: HashMap<Sym, Sym> = vars.into_iter().map(|v| (v.clone(), sym(&format!("{v}{suffix}")))).collect();
        let none = HashMap::new();
        DestructorRule {
            head: self.head.clone(),
            lhs: self.lhs.iter().map(|p| p.rename(&map, &none)).collect(),
            rhs: self.rhs.rename(&map, &none),
        }
    }
}

impl std::fmt::Display for DestructorRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}(", self.head)?;
        for (i, p) in self.lhs.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ") = {}", self.rhs)
    }
}

/// Which rule set is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleMode {
    /// Non-subterm rules are filtered out.
    Sapic,
    /// All rules are active.
    StatVerif,
}

/// Typed message grammar enforced when `strict_grammar` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grammar {
    PkencSig,
}

#[derive(Debug, Clone)]
pub struct SymbolicModel {
    symbols: Vec<FuncSymbol>,
    index: HashMap<Sym, usize>,
    rules: Vec<DestructorRule>,
    /// Indices into `rules` of the non-subterm rules excluded in SAPIC mode.
    filtered: Vec<usize>,
    mode: RuleMode,
    by_head: HashMap<Sym, Vec<usize>>,
    pub strict_grammar: bool,
    grammar: Option<Grammar>,
}

impl Default for SymbolicModel {
    fn default() -> Self {
        Self::new()
    }
}

impl SymbolicModel {
    /// Empty model containing only `equal`.
    pub fn new() -> Self {
        let mut m = SymbolicModel {
            symbols: Vec::new(),
            index: HashMap::new(),
            rules: Vec::new(),
            filtered: Vec::new(),
            mode: RuleMode::Sapic,
            by_head: HashMap::new(),
            strict_grammar: false,
            grammar: None,
        };
        m.declare(EQUAL, 2, FuncKind::Destructor).expect("fresh model");
        m.add_rule(DestructorRule::new(EQUAL, vec![Term::var("x"), Term::var("x")], Term::var("x")))
            .expect("equal rule");
        m
    }

    /// The public-key encryption and signature model with strict typing on.
    pub fn pkenc_sig(mode: RuleMode) -> Self {
        let mut m = SymbolicModel::new();
        for (n, a) in [
            ("enc", 3),
            ("ek", 1),
            ("dk", 1),
            ("sig", 3),
            ("vk", 1),
            ("sk", 1),
            ("pair", 2),
            ("string0", 1),
            ("string1", 1),
            ("empty", 0),
            ("garbageSig", 2),
            ("garbage", 1),
            ("garbageEnc", 2),
        ] {
            m.declare(n, a, FuncKind::Constructor).expect("builtin");
        }
        for (n, a) in [
            ("dec", 2),
            ("isenc", 1),
            ("isek", 1),
            ("isdk", 1),
            ("ekof", 1),
            ("ekofdk", 1),
            ("verify", 2),
            ("issig", 1),
            ("isvk", 1),
            ("issk", 1),
            ("vkof", 1),
            ("vkofsk", 1),
            ("fst", 1),
            ("snd", 1),
            ("unstring0", 1),
            ("unstring1", 1),
        ] {
            m.declare(n, a, FuncKind::Destructor).expect("builtin");
        }
        let v = Term::var;
        let app = Term::app;
        let rules = [
            (
                "dec",
                vec![app("dk", vec![v("t1")]), app("enc", vec![app("ek", vec![v("t1")]), v("m"), v("t2")])],
                v("m"),
            ),
            (
                "isenc",
                vec![app("enc", vec![app("ek", vec![v("t1")]), v("t2"), v("t3")])],
                app("enc", vec![app("ek", vec![v("t1")]), v("t2"), v("t3")]),
            ),
            ("isenc", vec![app("garbageEnc", vec![v("t1"), v("t2")])], app("garbageEnc", vec![v("t1"), v("t2")])),
            ("isek", vec![app("ek", vec![v("t")])], app("ek", vec![v("t")])),
            ("isdk", vec![app("dk", vec![v("t")])], app("dk", vec![v("t")])),
            ("ekof", vec![app("enc", vec![app("ek", vec![v("t1")]), v("m"), v("t2")])], app("ek", vec![v("t1")])),
            ("ekof", vec![app("garbageEnc", vec![v("t1"), v("t2")])], v("t1")),
            (
                "verify",
                vec![app("vk", vec![v("t1")]), app("sig", vec![app("sk", vec![v("t1")]), v("t2"), v("t3")])],
                v("t2"),
            ),
            (
                "issig",
                vec![app("sig", vec![app("sk", vec![v("t1")]), v("t2"), v("t3")])],
                app("sig", vec![app("sk", vec![v("t1")]), v("t2"), v("t3")]),
            ),
            ("issig", vec![app("garbageSig", vec![v("t1"), v("t2")])], app("garbageSig", vec![v("t1"), v("t2")])),
            ("isvk", vec![app("vk", vec![v("t1")])], app("vk", vec![v("t1")])),
            ("issk", vec![app("sk", vec![v("t")])], app("sk", vec![v("t")])),
            ("vkof", vec![app("garbageSig", vec![v("t1"), v("t2")])], v("t1")),
            ("fst", vec![app("pair", vec![v("x"), v("y")])], v("x")),
            ("snd", vec![app("pair", vec![v("x"), v("y")])], v("y")),
            ("unstring0", vec![app("string0", vec![v("s")])], v("s")),
            ("unstring1", vec![app("string1", vec![v("s")])], v("s")),
            ("ekofdk", vec![app("dk", vec![v("t")])], app("ek", vec![v("t")])),
            ("vkof", vec![app("sig", vec![app("sk", vec![v("t1")]), v("t2"), v("t3")])], app("vk", vec![v("t1")])),
            ("vkofsk", vec![app("sk", vec![v("t")])], app("vk", vec![v("t")])),
        ];
        for (h, lhs, rhs) in rules {
            m.add_rule(DestructorRule::new(h, lhs, rhs)).expect("builtin rule");
        }
        m.set_mode(mode);
        m.strict_grammar = true;
        m.grammar = Some(Grammar::PkencSig);
        m
    }

    pub fn declare(&mut self, name: &str, arity: usize, kind: FuncKind) -> Result<(), TermError> {
        if name.starts_with('\'') {
            return Err(TermError::Model(format!("`{name}` is reserved for constants")));
        }
        if let Some(&i) = self.index.get(name) {
            let old = &self.symbols[i];
            if old.arity == arity && old.kind == kind {
                return Ok(());
            }
            if old.arity == arity && old.kind == FuncKind::Constructor && kind == FuncKind::Destructor {
                // A symbol listed among functions and later given rules.
                self.symbols[i].kind = FuncKind::Destructor;
                return Ok(());
            }
            return Err(TermError::Model(format!("conflicting declarations of `{name}`")));
        }
        self.index.insert(sym(name), self.symbols.len());
        self.symbols.push(FuncSymbol { name: sym(name), arity, kind });
        Ok(())
    }

    /// Looks up a symbol; quoted constants are implicit nullary constructors.
    pub fn symbol(&self, name: &str) -> Option<FuncSymbol> {
        if let Some(&i) = self.index.get(name) {
            return Some(self.symbols[i].clone());
        }
        if is_quoted_constant(name) {
            return Some(FuncSymbol { name: sym(name), arity: 0, kind: FuncKind::Constructor });
        }
        None
    }

    pub fn is_constructor(&self, name: &str) -> bool {
        matches!(self.symbol(name), Some(FuncSymbol { kind: FuncKind::Constructor, .. }))
    }

    pub fn is_destructor(&self, name: &str) -> bool {
        matches!(self.symbol(name), Some(FuncSymbol { kind: FuncKind::Destructor, .. }))
    }

    pub fn symbols(&self) -> &[FuncSymbol] {
        &self.symbols
    }

    pub fn constructors(&self) -> impl Iterator<Item = &FuncSymbol> {
        self.symbols.iter().filter(|s| s.kind == FuncKind::Constructor)
    }

    pub fn destructors(&self) -> impl Iterator<Item = &FuncSymbol> {
        self.symbols.iter().filter(|s| s.kind == FuncKind::Destructor)
    }

    pub fn mode(&self) -> RuleMode {
        self.mode
    }

    pub fn grammar(&self) -> Option<Grammar> {
        if self.strict_grammar {
            self.grammar
        } else {
            None
        }
    }

    /// Attaches the typed grammar if the model declares the matching constructors.
    pub fn enable_pkenc_grammar(&mut self) -> Result<(), TermError> {
        let reference = SymbolicModel::pkenc_sig(RuleMode::Sapic);
        for c in reference.constructors() {
            match self.symbol(&c.name) {
                Some(s) if s.arity == c.arity && s.kind == FuncKind::Constructor => {}
                _ => return Err(TermError::Model(format!("strict grammar needs constructor {}/{}", c.name, c.arity))),
            }
        }
        for s in self.constructors() {
            if s.arity > 0 && reference.symbol(&s.name).is_none() {
                return Err(TermError::Model(format!(
                    "strict grammar does not cover constructor {}/{}",
                    s.name, s.arity
                )));
            }
        }
        self.grammar = Some(Grammar::PkencSig);
        self.strict_grammar = true;
        Ok(())
    }

    pub fn set_mode(&mut self, mode: RuleMode) {
        self.mode = mode;
        self.reindex();
    }

    fn reindex(&mut self) {
        self.by_head.clear();
        for (i, r) in self.rules.iter().enumerate() {
            if self.mode == RuleMode::Sapic && self.filtered.contains(&i) {
                continue;
            }
            self.by_head.entry(r.head.clone()).or_default().push(i);
        }
    }

    /// All declared rules, including filtered ones.
    pub fn all_rules(&self) -> &[DestructorRule] {
        &self.rules
    }

    /// Rules excluded in SAPIC mode.
    pub fn filtered_rules(&self) -> Vec<&DestructorRule> {
        self.filtered.iter().map(|&i| &self.rules[i]).collect()
    }

    /// Rules active under the current mode, in declaration order.
    pub fn active_rules(&self) -> Vec<&DestructorRule> {
        let mut idx: Vec<usize> = self.by_head.values().flatten().copied().collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| &self.rules[i]).collect()
    }

    pub fn rules_for(&self, head: &str) -> impl Iterator<Item = &DestructorRule> {
        self.by_head.get(head).into_iter().flatten().map(move |&i| &self.rules[i])
    }

    /// Adds a rule after checking it against the model invariants.
    /// A rule identical (up to variable names) to an existing one is ignored.
    pub fn add_rule(&mut self, rule: DestructorRule) -> Result<(), TermError> {
        let head = self.symbol(&rule.head).ok_or_else(|| TermError::UnknownSymbol(rule.head.to_string()))?;
        if head.kind != FuncKind::Destructor {
            return Err(TermError::NotDestructor(rule.head.to_string()));
        }
        if head.arity != rule.lhs.len() {
            return Err(TermError::Arity { name: rule.head.to_string(), expected: head.arity, got: rule.lhs.len() });
        }
        for p in rule.lhs.iter().chain(std::iter::once(&rule.rhs)) {
            self.check_constructor_term(p)?;
        }
        let lhs_vars = rule.lhs_vars();
        let mut rhs_vars = Vec::new();
        rule.rhs.vars(&mut rhs_vars);
        if let Some(v) = rhs_vars.iter().find(|v| !lhs_vars.contains(v)) {
            return Err(TermError::Model(format!(
                "rule `{rule}`: variable `{v}` of the right-hand side is not bound on the left"
            )));
        }
        let shape = rule_shape(&rule);
        if shape == Shape::Other {
            return Err(TermError::Model(format!("rule `{rule}` is not subterm-convergent")));
        }
        let existing: Vec<usize> =
            self.rules.iter().enumerate().filter(|(_, r)| r.head == rule.head).map(|(i, _)| i).collect();
        for i in existing {
            let other = &self.rules[i];
            if alpha_equivalent(other, &rule) {
                return Ok(());
            }
            let a = other.renamed("'1");
            let b = rule.renamed("'2");
            if let Some(mgu) = unify_all(&a.lhs, &b.lhs) {
                if apply(&a.rhs, &mgu) != apply(&b.rhs, &mgu) {
                    return Err(TermError::Model(format!(
                        "rules `{other}` and `{rule}` overlap with different results"
                    )));
                }
            }
        }
        let idx = self.rules.len();
        self.rules.push(rule);
        if shape == Shape::Shrinking {
            self.filtered.push(idx);
        }
        self.reindex();
        Ok(())
    }

    fn check_constructor_term(&self, t: &Term) -> Result<(), TermError> {
        match t.kind() {
            TermKind::Var(_) => Ok(()),
            TermKind::App(f, args) => {
                let s = self.symbol(f).ok_or_else(|| TermError::UnknownSymbol(f.to_string()))?;
                if s.kind != FuncKind::Constructor {
                    return Err(TermError::Model(format!("destructor `{f}` inside a rule pattern")));
                }
                if s.arity != args.len() {
                    return Err(TermError::Arity { name: f.to_string(), expected: s.arity, got: args.len() });
                }
                args.iter().try_for_each(|a| self.check_constructor_term(a))
            }
            _ => Err(TermError::Model(format!("`{t}` is not allowed in a rule"))),
        }
    }

    /// Checks arity and symbol kinds of a term (destructors allowed).
    pub fn check_term(&self, t: &Term) -> Result<(), TermError> {
        if let TermKind::App(f, args) = t.kind() {
            let s = self.symbol(f).ok_or_else(|| TermError::UnknownSymbol(f.to_string()))?;
            if s.arity != args.len() {
                return Err(TermError::Arity { name: f.to_string(), expected: s.arity, got: args.len() });
            }
            for a in args {
                self.check_term(a)?;
            }
        }
        Ok(())
    }

    pub fn has_destructors(&self, t: &Term) -> bool {
        let mut found = false;
        t.visit(&mut |s| {
            if let Some(f) = s.head() {
                if self.is_destructor(f) {
                    found = true;
                }
            }
        });
        found
    }
}

pub(crate) fn is_quoted_constant(name: &str) -> bool {
    name.len() >= 2 && name.starts_with('\'') && name.ends_with('\'')
}

#[derive(Debug, PartialEq, Eq)]
enum Shape {
    /// The right-hand side is a subterm of the left-hand side.
    Subterm,
    /// A constructor over variables bound strictly inside a pattern.
    Shrinking,
    Other,
}

fn rule_shape(rule: &DestructorRule) -> Shape {
    if rule.rhs.is_ground() && rule.rhs.args().is_empty() {
        return Shape::Subterm;
    }
    if rule.lhs.iter().any(|p| p.contains(&rule.rhs)) {
        return Shape::Subterm;
    }
    let inner: Vec<Sym> = {
        let mut out = Vec::new();
        for p in &rule.lhs {
            for a in p.args() {
                a.vars(&mut out);
            }
        }
        out
    };
    if let Some((_, args)) = rule.rhs.as_app() {
        if args.iter().all(|a| a.as_var().is_some_and(|v| inner.contains(v))) {
            return Shape::Shrinking;
        }
    }
    Shape::Other
}

fn alpha_equivalent(a: &DestructorRule, b: &DestructorRule) -> bool {
    fn go(x: &Term, y: &Term, map: &mut HashMap<Sym, Sym>) -> bool {
        match (x.kind(), y.kind()) {
            (TermKind::Var(u), TermKind::Var(v)) => match map.get(u) {
                Some(w) => w == v,
                None => {
                    if map.values().any(|w| w == v) {
                        return false;
                    }
                    map.insert(u.clone(), v.clone());
                    true
                }
            },
            (TermKind::App(f, xs), TermKind::App(g, ys)) => {
                f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(p, q)| go(p, q, map))
            }
            _ => x == y,
        }
    }
    let mut map = HashMap::new();
    a.head == b.head
        && a.lhs.len() == b.lhs.len()
        && a.lhs.iter().zip(&b.lhs).all(|(x, y)| go(x, y, &mut map))
        && go(&a.rhs, &b.rhs, &mut map)
}

fn apply(t: &Term, s: &HashMap<Sym, Term>) -> Term {
    let mut cur = t.clone();
    loop {
        let next = cur.subst_vars(s);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn unify_all(xs: &[Term], ys: &[Term]) -> Option<HashMap<Sym, Term>> {
    let mut s = HashMap::new();
    for (x, y) in xs.iter().zip(ys) {
        if !unify(x, y, &mut s) {
            return None;
        }
    }
    Some(s)
}

fn unify(x: &Term, y: &Term, s: &mut HashMap<Sym, Term>) -> bool {
    let x = apply(x, s);
    let y = apply(y, s);
    if x == y {
        return true;
    }
    match (x.kind(), y.kind()) {
        (TermKind::Var(v), _) => bind(v, &y, s),
        (_, TermKind::Var(v)) => bind(v, &x, s),
        (TermKind::App(f, xs), TermKind::App(g, ys)) => {
            f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(a, b)| unify(a, b, s))
        }
        _ => false,
    }
}

fn bind(v: &Sym, t: &Term, s: &mut HashMap<Sym, Term>) -> bool {
    let mut vs = Vec::new();
    t.vars(&mut vs);
    if vs.contains(v) {
        return false;
    }
    s.insert(v.clone(), t.clone());
    true
}

/// True if `args` matches the left-hand side of `rule`.
pub(crate) fn rule_applies(rule: &DestructorRule, args: &[Term]) -> bool {
    let mut sub = HashMap::new();
    rule.lhs.iter().zip(args).all(|(p, a)| matches!(match_term(p, a, &mut sub), MatchOutcome::Match))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_filters_three_rules_in_sapic_mode() {
        let m = SymbolicModel::pkenc_sig(RuleMode::Sapic);
        let f: Vec<String> = m.filtered_rules().iter().map(|r| r.head.to_string()).collect();
        assert_eq!(f, vec!["ekofdk", "vkof", "vkofsk"]);
        assert!(m.rules_for("ekofdk").next().is_none());
        assert_eq!(m.rules_for("vkof").count(), 1);
        let sv = SymbolicModel::pkenc_sig(RuleMode::StatVerif);
        assert_eq!(sv.rules_for("vkof").count(), 2);
        assert!(m.is_destructor(EQUAL));
    }

    #[test]
    fn rejects_unbound_rhs_variable() {
        let mut m = SymbolicModel::new();
        m.declare("f", 1, FuncKind::Constructor).unwrap();
        m.declare("d", 1, FuncKind::Destructor).unwrap();
        let r = DestructorRule::new("d", vec![Term::app("f", vec![Term::var("x")])], Term::var("y"));
        assert!(m.add_rule(r).is_err());
    }

    #[test]
    fn rejects_conflicting_overlap_and_dedupes_duplicates() {
        let mut m = SymbolicModel::new();
        m.declare("f", 1, FuncKind::Constructor).unwrap();
        m.declare("a", 0, FuncKind::Constructor).unwrap();
        m.declare("b", 0, FuncKind::Constructor).unwrap();
        m.declare("d", 1, FuncKind::Destructor).unwrap();
        let fx = Term::app("f", vec![Term::var("x")]);
        m.add_rule(DestructorRule::new("d", vec![fx.clone()], Term::var("x"))).unwrap();
        let fy = Term::app("f", vec![Term::var("y")]);
        m.add_rule(DestructorRule::new("d", vec![fy.clone()], Term::var("y"))).unwrap();
        assert_eq!(m.rules_for("d").count(), 1);
        let bad = DestructorRule::new("d", vec![Term::app("f", vec![Term::constant("a")])], Term::constant("b"));
        assert!(m.add_rule(bad).is_err());
    }

    #[test]
    fn rejects_non_convergent_rule() {
        let mut m = SymbolicModel::new();
        m.declare("f", 1, FuncKind::Constructor).unwrap();
        m.declare("d", 1, FuncKind::Destructor).unwrap();
        let fx = Term::app("f", vec![Term::var("x")]);
        let r = DestructorRule::new("d", vec![fx.clone()], Term::app("f", vec![fx]));
        assert!(m.add_rule(r).is_err());
    }
}

//! Static restrictions on processes.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use super::{alpha_rename, msr_pattern_vars, Dialect, Proc, Process};
use crate::terms::{Sym, TermKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Rule {
    /// Inputs must bind a single variable.
    InputPattern,
    /// A msr pattern variable nested under a function symbol.
    MsrPattern,
    /// A msr right-hand side or event uses a variable not bound by the pattern.
    MsrRhs,
    /// A fact symbol used both as linear and as persistent.
    FactLinearity,
    FreeVariable,
    CellDoubleInit,
    /// Cell initialisation below something other than restriction, parallel or replication.
    CellInitScope,
    /// Initialised cell is not a restricted name.
    CellInitUnrestricted,
    /// Parallel or replication between `lock` and its `unlock`.
    LockParallel,
    LockNested,
    UnlockUnmatched,
    /// Construct of the other dialect.
    Dialect,
}

impl Rule {
    pub fn tag(self) -> &'static str {
        match self {
            Rule::InputPattern => "input-pattern",
            Rule::MsrPattern => "msr-pattern",
            Rule::MsrRhs => "msr-rhs",
            Rule::FactLinearity => "fact-linearity",
            Rule::FreeVariable => "free-variable",
            Rule::CellDoubleInit => "cell-double-init",
            Rule::CellInitScope => "cell-init-scope",
            Rule::CellInitUnrestricted => "cell-init-unrestricted",
            Rule::LockParallel => "lock-parallel",
            Rule::LockNested => "lock-nested",
            Rule::UnlockUnmatched => "unlock-unmatched",
            Rule::Dialect => "dialect",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Diagnostic {
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.rule, self.message)
    }
}

/// Returns every violated restriction; empty means the process is accepted.
pub fn check_restrictions(p: &Proc, dialect: Dialect) -> Vec<Diagnostic> {
    let mut c = Checker { dialect, out: Vec::new(), fact_kinds: HashMap::new(), rhs_reported: HashSet::new() };
    let renamed = alpha_rename(p);
    c.walk(&renamed, &mut Vec::new(), &mut Vec::new(), Ctx { locked: false, init_ok: true });
    let mut linear_and_persistent: Vec<&Sym> =
        c.fact_kinds.iter().filter(|(_, k)| k.len() > 1).map(|(s, _)| s).collect();
    linear_and_persistent.sort();
    let mut out = std::mem::take(&mut c.out);
    for s in linear_and_persistent {
        out.push(Diagnostic {
            rule: Rule::FactLinearity,
            message: format!("fact `{s}` is used both as linear and as persistent"),
        });
    }
    for v in renamed.free_vars() {
        if !c.rhs_reported.contains(&v) {
            out.push(Diagnostic { rule: Rule::FreeVariable, message: format!("variable `{v}` is not bound") });
        }
    }
    if dialect == Dialect::StatVerif {
        let mut counts: BTreeSet<Sym> = BTreeSet::new();
        let mut dup: BTreeSet<Sym> = BTreeSet::new();
        renamed.visit(&mut |q| {
            if let Process::SvInit { cell, .. } = q {
                if let Some(n) = cell_name(cell) {
                    if !counts.insert(n.clone()) {
                        dup.insert(n);
                    }
                }
            }
        });
        for n in dup {
            out.push(Diagnostic {
                rule: Rule::CellDoubleInit,
                message: format!("cell `{n}` is initialised more than once"),
            });
        }
    }
    out
}

fn cell_name(t: &crate::terms::Term) -> Option<Sym> {
    match t.kind() {
        TermKind::Name(n) => Some(n.clone()),
        _ => None,
    }
}

#[derive(Clone, Copy)]
struct Ctx {
    locked: bool,
    /// Only restriction, parallel and replication seen so far.
    init_ok: bool,
}

struct Checker {
    dialect: Dialect,
    out: Vec<Diagnostic>,
    fact_kinds: HashMap<Sym, BTreeSet<bool>>,
    rhs_reported: HashSet<Sym>,
}

impl Checker {
    fn diag(&mut self, rule: Rule, message: String) {
        self.out.push(Diagnostic { rule, message });
    }

    fn wrong_dialect(&mut self, what: &str) {
        let d = self.dialect;
        self.diag(Rule::Dialect, format!("`{what}` is not a {d} construct"));
    }

    fn walk(&mut self, p: &Process, vars: &mut Vec<Sym>, names: &mut Vec<Sym>, ctx: Ctx) {
        let sv = self.dialect == Dialect::StatVerif;
        let seq = Ctx { locked: ctx.locked, init_ok: false };
        match p {
            Process::Nil => {}
            Process::Par(a, b) => {
                if ctx.locked {
                    self.diag(Rule::LockParallel, "parallel composition inside a locked region".into());
                }
                self.walk(a, vars, names, ctx);
                self.walk(b, vars, names, ctx);
            }
            Process::Repl { body, .. } => {
                if ctx.locked {
                    self.diag(Rule::LockParallel, "replication inside a locked region".into());
                }
                self.walk(body, vars, names, ctx);
            }
            Process::New(n, q) => {
                names.push(n.clone());
                self.walk(q, vars, names, ctx);
                names.pop();
            }
            Process::InPattern { pattern, cont, .. } => {
                self.diag(Rule::InputPattern, format!("input of the pattern `{pattern}` instead of a variable"));
                self.walk(cont, vars, names, seq);
            }
            Process::Msr { lhs, events, rhs, cont } => {
                if sv {
                    self.wrong_dialect("msr");
                }
                let pattern: Vec<Sym> = msr_pattern_vars(lhs).into_iter().filter(|v| !vars.contains(v)).collect();
                for f in lhs.iter().chain(rhs.iter()) {
                    self.fact_kinds.entry(f.symbol.clone()).or_default().insert(f.persistent);
                }
                for f in lhs {
                    for a in &f.args {
                        if a.as_var().is_some() {
                            continue;
                        }
                        let mut vs = Vec::new();
                        a.vars(&mut vs);
                        if let Some(v) = vs.iter().find(|v| pattern.contains(v)) {
                            self.diag(
                                Rule::MsrPattern,
                                format!("pattern variable `{v}` occurs nested in `{a}` in fact {f}"),
                            );
                        }
                    }
                }
                let mut used = Vec::new();
                for a in events.iter().flat_map(|e| &e.args).chain(rhs.iter().flat_map(|f| &f.args)) {
                    a.vars(&mut used);
                }
                let mut reported = BTreeSet::new();
                for v in used {
                    if !pattern.contains(&v) && !vars.contains(&v) && reported.insert(v.clone()) {
                        self.rhs_reported.insert(v.clone());
                        self.diag(Rule::MsrRhs, format!("variable `{v}` is not bound by the left-hand side"));
                    }
                }
                let n = vars.len();
                vars.extend(pattern);
                self.walk(cont, vars, names, seq);
                vars.truncate(n);
            }
            Process::SvInit { cell, .. } => {
                if !sv {
                    self.wrong_dialect("[s |-> M]");
                }
                if !ctx.init_ok {
                    self.diag(
                        Rule::CellInitScope,
                        format!("initialisation of `{cell}` below a construct other than restriction, parallel or replication"),
                    );
                }
                if cell_name(cell).is_some_and(|n| !names.contains(&n)) || cell_name(cell).is_none() {
                    self.diag(
                        Rule::CellInitUnrestricted,
                        format!("initialised cell `{cell}` is not a restricted name"),
                    );
                }
            }
            Process::SvLock(q) => {
                if !sv {
                    self.wrong_dialect("lock;");
                }
                if ctx.locked {
                    self.diag(Rule::LockNested, "`lock` inside a locked region".into());
                }
                self.walk(q, vars, names, Ctx { locked: true, init_ok: false });
            }
            Process::SvUnlock(q) => {
                if !sv {
                    self.wrong_dialect("unlock;");
                }
                if !ctx.locked {
                    self.diag(Rule::UnlockUnmatched, "`unlock` without a preceding `lock`".into());
                }
                self.walk(q, vars, names, Ctx { locked: false, init_ok: false });
            }
            other => {
                match other {
                    Process::Insert { .. } if sv => self.wrong_dialect("insert"),
                    Process::Delete { .. } if sv => self.wrong_dialect("delete"),
                    Process::Lookup { .. } if sv => self.wrong_dialect("lookup"),
                    Process::Lock(..) if sv => self.wrong_dialect("lock M"),
                    Process::Unlock(..) if sv => self.wrong_dialect("unlock M"),
                    Process::SvAssign { .. } if !sv => self.wrong_dialect("s := M"),
                    Process::SvRead { .. } if !sv => self.wrong_dialect("read"),
                    _ => {}
                }
                let bound = other.bound_vars();
                let n = vars.len();
                match other {
                    // The else branch of a binder does not see its variable.
                    Process::Let { then, else_, .. } => {
                        vars.extend(bound);
                        self.walk(then, vars, names, seq);
                        vars.truncate(n);
                        self.walk(else_, vars, names, seq);
                    }
                    Process::Lookup { then, else_, .. } => {
                        vars.extend(bound);
                        self.walk(then, vars, names, seq);
                        vars.truncate(n);
                        if let Some(e) = else_ {
                            self.walk(e, vars, names, seq);
                        }
                    }
                    _ => {
                        vars.extend(bound);
                        for c in other.children() {
                            self.walk(c, vars, names, seq);
                        }
                        vars.truncate(n);
                    }
                }
            }
        }
    }
}

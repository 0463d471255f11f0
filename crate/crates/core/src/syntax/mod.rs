//! Process syntax shared by the SAPIC and StatVerif dialects.

mod lexer;
mod parser;
mod pretty;
mod restrictions;

pub use parser::{parse, parse_model, parse_sapic, parse_statverif, LemmaKind, ParseError, Parsed};
pub use pretty::{print_process, print_sapic_file, print_statverif_file};
pub use restrictions::{check_restrictions, Diagnostic, Rule};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::terms::{sym, Sym, Term, TermKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Dialect {
    Sapic,
    StatVerif,
}

impl Dialect {
    /// Dialect implied by a file extension.
    pub fn from_extension(ext: &str) -> Option<Dialect> {
        match ext {
            "sapic" | "spthy" => Some(Dialect::Sapic),
            "sv" | "pv" | "statverif" => Some(Dialect::StatVerif),
            _ => None,
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::Sapic => "sapic",
            Dialect::StatVerif => "statverif",
        })
    }
}

/// Event label `E(t1, ..., tn)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct Event {
    pub symbol: Sym,
    pub args: Vec<Term>,
}

impl Event {
    pub fn new(symbol: &str, args: Vec<Term>) -> Self {
        Event { symbol: sym(symbol), args }
    }

    fn map(&self, f: &impl Fn(&Term) -> Term) -> Event {
        Event { symbol: self.symbol.clone(), args: self.args.iter().map(f).collect() }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol)?;
        if !self.args.is_empty() {
            write!(f, "(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{a}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Multiset-state fact; persistent facts are never consumed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fact {
    pub symbol: Sym,
    pub persistent: bool,
    pub args: Vec<Term>,
}

impl Fact {
    pub fn new(symbol: &str, persistent: bool, args: Vec<Term>) -> Self {
        Fact { symbol: sym(symbol), persistent, args }
    }

    fn map(&self, f: &impl Fn(&Term) -> Term) -> Fact {
        Fact { symbol: self.symbol.clone(), persistent: self.persistent, args: self.args.iter().map(f).collect() }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.persistent {
            write!(f, "!")?;
        }
        write!(f, "{}(", self.symbol)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

pub type Proc = Arc<Process>;

/// Processes of both dialects. `Sv*` variants belong to StatVerif;
/// cell operations with explicit terms and `Msr` belong to SAPIC.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Process {
    Nil,
    Par(Proc, Proc),
    /// Replication; `copies` counts the instances already spawned.
    Repl {
        body: Proc,
        copies: u32,
    },
    New(Sym, Proc),
    Out {
        chan: Term,
        msg: Term,
        cont: Proc,
    },
    In {
        chan: Term,
        var: Sym,
        cont: Proc,
    },
    /// Input with a term pattern; parsed only so it can be reported.
    InPattern {
        chan: Term,
        pattern: Term,
        cont: Proc,
    },
    Let {
        var: Sym,
        expr: Term,
        then: Proc,
        else_: Proc,
    },
    If {
        lhs: Term,
        rhs: Term,
        then: Proc,
        else_: Proc,
    },
    Event(Event, Proc),
    Insert {
        key: Term,
        value: Term,
        cont: Proc,
    },
    Delete {
        key: Term,
        cont: Proc,
    },
    /// Without an else branch the lookup blocks while the key is absent.
    Lookup {
        key: Term,
        var: Sym,
        then: Proc,
        else_: Option<Proc>,
    },
    Lock(Term, Proc),
    Unlock(Term, Proc),
    Msr {
        lhs: Vec<Fact>,
        events: Vec<Event>,
        rhs: Vec<Fact>,
        cont: Proc,
    },
    SvInit {
        cell: Term,
        value: Term,
    },
    SvAssign {
        cell: Term,
        value: Term,
        cont: Proc,
    },
    SvRead {
        cell: Term,
        var: Sym,
        cont: Proc,
    },
    SvLock(Proc),
    SvUnlock(Proc),
}

pub fn nil() -> Proc {
    Arc::new(Process::Nil)
}

impl Process {
    pub fn arc(self) -> Proc {
        Arc::new(self)
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Process::Nil)
    }

    /// Parallel composition of a list (nil for the empty list).
    pub fn par_all(mut ps: Vec<Proc>) -> Proc {
        match ps.len() {
            0 => nil(),
            1 => ps.pop().expect("one"),
            _ => {
                let last = ps.pop().expect("nonempty");
                ps.into_iter().rev().fold(last, |acc, p| Process::Par(p, acc).arc())
            }
        }
    }

    /// Flattens nested parallel compositions, dropping nil.
    pub fn flatten_par(p: &Proc, out: &mut Vec<Proc>) {
        match &**p {
            Process::Par(a, b) => {
                Self::flatten_par(a, out);
                Self::flatten_par(b, out);
            }
            Process::Nil => {}
            _ => out.push(p.clone()),
        }
    }

    /// Direct sub-processes.
    pub fn children(&self) -> Vec<&Proc> {
        use Process::*;
        match self {
            Nil | SvInit { .. } => vec![],
            Par(a, b) => vec![a, b],
            Repl { body, .. } => vec![body],
            New(_, p) | Event(_, p) | Lock(_, p) | Unlock(_, p) | SvLock(p) | SvUnlock(p) => vec![p],
            Out { cont, .. }
            | In { cont, .. }
            | InPattern { cont, .. }
            | Insert { cont, .. }
            | Delete { cont, .. }
            | Msr { cont, .. }
            | SvAssign { cont, .. }
            | SvRead { cont, .. } => vec![cont],
            Let { then, else_, .. } | If { then, else_, .. } => vec![then, else_],
            Lookup { then, else_, .. } => {
                let mut v = vec![then];
                if let Some(e) = else_ {
                    v.push(e);
                }
                v
            }
        }
    }

    /// Terms occurring directly in this node (not in sub-processes).
    pub fn own_terms(&self) -> Vec<&Term> {
        use Process::*;
        match self {
            Nil | Par(..) | Repl { .. } | New(..) | SvLock(_) | SvUnlock(_) => vec![],
            Out { chan, msg, .. } => vec![chan, msg],
            In { chan, .. } => vec![chan],
            InPattern { chan, pattern, .. } => vec![chan, pattern],
            Let { expr, .. } => vec![expr],
            If { lhs, rhs, .. } => vec![lhs, rhs],
            Event(e, _) => e.args.iter().collect(),
            Insert { key, value, .. } => vec![key, value],
            Delete { key, .. } | Lookup { key, .. } | Lock(key, _) | Unlock(key, _) => vec![key],
            Msr { lhs, events, rhs, .. } => lhs
                .iter()
                .flat_map(|f| f.args.iter())
                .chain(events.iter().flat_map(|e| e.args.iter()))
                .chain(rhs.iter().flat_map(|f| f.args.iter()))
                .collect(),
            SvInit { cell, value } | SvAssign { cell, value, .. } => vec![cell, value],
            SvRead { cell, .. } => vec![cell],
        }
    }

    /// Rebuilds the process applying `f` to every term and `g` to every
    /// direct sub-process.
    pub(crate) fn rebuild(&self, f: &impl Fn(&Term) -> Term, g: &mut impl FnMut(&Proc) -> Proc) -> Process {
        use Process::*;
        match self {
            Nil => Nil,
            Par(a, b) => Par(g(a), g(b)),
            Repl { body, copies } => Repl { body: g(body), copies: *copies },
            New(n, p) => New(n.clone(), g(p)),
            Out { chan, msg, cont } => Out { chan: f(chan), msg: f(msg), cont: g(cont) },
            In { chan, var, cont } => In { chan: f(chan), var: var.clone(), cont: g(cont) },
            InPattern { chan, pattern, cont } => InPattern { chan: f(chan), pattern: f(pattern), cont: g(cont) },
            Let { var, expr, then, else_ } => Let { var: var.clone(), expr: f(expr), then: g(then), else_: g(else_) },
            If { lhs, rhs, then, else_ } => If { lhs: f(lhs), rhs: f(rhs), then: g(then), else_: g(else_) },
            Event(e, p) => Event(e.map(f), g(p)),
            Insert { key, value, cont } => Insert { key: f(key), value: f(value), cont: g(cont) },
            Delete { key, cont } => Delete { key: f(key), cont: g(cont) },
            Lookup { key, var, then, else_ } => {
                Lookup { key: f(key), var: var.clone(), then: g(then), else_: else_.as_ref().map(&mut *g) }
            }
            Lock(t, p) => Lock(f(t), g(p)),
            Unlock(t, p) => Unlock(f(t), g(p)),
            Msr { lhs, events, rhs, cont } => Msr {
                lhs: lhs.iter().map(|x| x.map(f)).collect(),
                events: events.iter().map(|x| x.map(f)).collect(),
                rhs: rhs.iter().map(|x| x.map(f)).collect(),
                cont: g(cont),
            },
            SvInit { cell, value } => SvInit { cell: f(cell), value: f(value) },
            SvAssign { cell, value, cont } => SvAssign { cell: f(cell), value: f(value), cont: g(cont) },
            SvRead { cell, var, cont } => SvRead { cell: f(cell), var: var.clone(), cont: g(cont) },
            SvLock(p) => SvLock(g(p)),
            SvUnlock(p) => SvUnlock(g(p)),
        }
    }

    /// Applies `f` to every term in the process tree.
    pub fn map_terms(self: &Proc, f: &impl Fn(&Term) -> Term) -> Proc {
        Arc::new(self.rebuild(f, &mut |p| p.map_terms(f)))
    }

    /// Variables bound by this node for its sub-processes. Msr pattern
    /// variables are not included: after alpha-renaming they never clash
    /// with a variable bound outside.
    pub fn bound_vars(&self) -> Vec<Sym> {
        match self {
            Process::In { var, .. }
            | Process::Let { var, .. }
            | Process::Lookup { var, .. }
            | Process::SvRead { var, .. } => vec![var.clone()],
            _ => vec![],
        }
    }

    /// Substitutes values for free occurrences of variables.
    pub fn subst_vars(self: &Proc, map: &HashMap<Sym, Term>) -> Proc {
        if map.is_empty() {
            return self.clone();
        }
        let bound = self.bound_vars();
        let inner;
        let m = if bound.iter().any(|v| map.contains_key(v)) {
            let mut m2 = map.clone();
            for v in &bound {
                m2.remove(v);
            }
            inner = m2;
            &inner
        } else {
            map
        };
        // Terms of a msr or let node are evaluated before its own binders apply,
        // except the msr's right-hand side and events, which see the pattern variables.
        let f = |t: &Term| t.subst_vars(m);
        Arc::new(match &**self {
            Process::Let { var, expr, then, else_ } => Process::Let {
                var: var.clone(),
                expr: expr.subst_vars(map),
                then: then.subst_vars(m),
                else_: else_.subst_vars(map),
            },
            Process::Lookup { key, var, then, else_ } => Process::Lookup {
                key: key.subst_vars(map),
                var: var.clone(),
                then: then.subst_vars(m),
                else_: else_.as_ref().map(|e| e.subst_vars(map)),
            },
            Process::In { chan, var, cont } => {
                Process::In { chan: chan.subst_vars(map), var: var.clone(), cont: cont.subst_vars(m) }
            }
            Process::SvRead { cell, var, cont } => {
                Process::SvRead { cell: cell.subst_vars(map), var: var.clone(), cont: cont.subst_vars(m) }
            }
            other => other.rebuild(&f, &mut |p| p.subst_vars(m)),
        })
    }

    /// Substitutes terms for free occurrences of π-names.
    pub fn subst_names(self: &Proc, map: &HashMap<Sym, Term>) -> Proc {
        if map.is_empty() {
            return self.clone();
        }
        if let Process::New(n, p) = &**self {
            if map.contains_key(n) {
                let mut m2 = map.clone();
                m2.remove(n);
                return Process::New(n.clone(), p.subst_names(&m2)).arc();
            }
        }
        Arc::new(self.rebuild(&|t| t.subst_names(map), &mut |p| p.subst_names(map)))
    }

    pub fn subst_holes(self: &Proc, map: &HashMap<Sym, Term>) -> Proc {
        if map.is_empty() || !self.has_holes() {
            return self.clone();
        }
        subst_holes_rec(self, map)
    }

    pub fn has_holes(&self) -> bool {
        self.own_terms().iter().any(|t| t.has_holes()) || self.children().iter().any(|c| c.has_holes())
    }

    pub fn holes(&self, out: &mut Vec<Sym>) {
        for t in self.own_terms() {
            t.holes(out);
        }
        for c in self.children() {
            c.holes(out);
        }
    }

    /// Calls `f` on every node, parents first.
    pub fn visit(&self, f: &mut impl FnMut(&Process)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Free π-names.
    pub fn free_names(&self) -> BTreeSet<Sym> {
        let mut out = BTreeSet::new();
        free_names_rec(self, &mut HashSet::new(), &mut out);
        out
    }

    /// Free variables.
    pub fn free_vars(&self) -> BTreeSet<Sym> {
        let mut out = BTreeSet::new();
        free_vars_rec(self, &mut Vec::new(), &mut out);
        out
    }

    /// Event symbols occurring anywhere in the process.
    pub fn event_symbols(&self) -> BTreeSet<Sym> {
        let mut out = BTreeSet::new();
        self.visit(&mut |p| match p {
            Process::Event(e, _) => {
                out.insert(e.symbol.clone());
            }
            Process::Msr { events, .. } => {
                out.extend(events.iter().map(|e| e.symbol.clone()));
            }
            _ => {}
        });
        out
    }

    /// Every identifier used as a name, variable or binder.
    pub fn identifiers(&self) -> HashSet<Sym> {
        let mut out = HashSet::new();
        self.visit(&mut |p| {
            match p {
                Process::New(n, _) => {
                    out.insert(n.clone());
                }
                _ => out.extend(p.bound_vars()),
            }
            for t in p.own_terms() {
                t.visit(&mut |s| match s.kind() {
                    TermKind::Var(v) | TermKind::Name(v) => {
                        out.insert(v.clone());
                    }
                    _ => {}
                });
            }
        });
        out
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }
}

/// Variables occurring in a msr left-hand side (pattern variables plus any
/// bound by an enclosing binder).
pub fn msr_pattern_vars(lhs: &[Fact]) -> Vec<Sym> {
    let mut out = Vec::new();
    for f in lhs {
        for a in &f.args {
            a.vars(&mut out);
        }
    }
    out
}

fn free_names_rec(p: &Process, bound: &mut HashSet<Sym>, out: &mut BTreeSet<Sym>) {
    for t in p.own_terms() {
        let mut ns = Vec::new();
        t.names(&mut ns);
        out.extend(ns.into_iter().filter(|n| !bound.contains(n)));
    }
    if let Process::New(n, q) = p {
        let fresh = bound.insert(n.clone());
        free_names_rec(q, bound, out);
        if fresh {
            bound.remove(n);
        }
        return;
    }
    for c in p.children() {
        free_names_rec(c, bound, out);
    }
}

fn free_vars_rec(p: &Process, bound: &mut Vec<Sym>, out: &mut BTreeSet<Sym>) {
    let add = |t: &Term, bound: &Vec<Sym>, out: &mut BTreeSet<Sym>| {
        let mut vs = Vec::new();
        t.vars(&mut vs);
        out.extend(vs.into_iter().filter(|v| !bound.contains(v)));
    };
    match p {
        Process::Msr { lhs, events, rhs, cont } => {
            let pv = msr_pattern_vars(lhs);
            let n = bound.len();
            bound.extend(pv);
            for t in events.iter().flat_map(|e| &e.args).chain(rhs.iter().flat_map(|f| &f.args)) {
                add(t, bound, out);
            }
            free_vars_rec(cont, bound, out);
            bound.truncate(n);
        }
        Process::Let { var, expr, then, else_ } => {
            add(expr, bound, out);
            bound.push(var.clone());
            free_vars_rec(then, bound, out);
            bound.pop();
            free_vars_rec(else_, bound, out);
        }
        Process::Lookup { key, var, then, else_ } => {
            add(key, bound, out);
            bound.push(var.clone());
            free_vars_rec(then, bound, out);
            bound.pop();
            if let Some(e) = else_ {
                free_vars_rec(e, bound, out);
            }
        }
        _ => {
            for t in p.own_terms() {
                add(t, bound, out);
            }
            let bv = p.bound_vars();
            let n = bound.len();
            bound.extend(bv);
            for c in p.children() {
                free_vars_rec(c, bound, out);
            }
            bound.truncate(n);
        }
    }
}

/// Renames bound names and variables so that all binders are pairwise
/// distinct and distinct from free identifiers. The first binder of each
/// identifier keeps its name.
pub fn alpha_rename(p: &Proc) -> Proc {
    let mut used = p.identifiers();
    let mut taken: HashSet<Sym> = p.free_names().into_iter().chain(p.free_vars()).collect();
    rename_rec(p, &HashMap::new(), &HashMap::new(), &mut used, &mut taken)
}

fn fresh_for(base: &Sym, used: &mut HashSet<Sym>, taken: &mut HashSet<Sym>) -> Sym {
    if !taken.contains(base) {
        taken.insert(base.clone());
        used.insert(base.clone());
        return base.clone();
    }
    let mut i = 1;
    loop {
        let cand = sym(&format!("{base}_{i}"));
        if !used.contains(&cand) && !taken.contains(&cand) {
            taken.insert(cand.clone());
            used.insert(cand.clone());
            return cand;
        }
        i += 1;
    }
}

fn rename_rec(
    p: &Proc,
    vars: &HashMap<Sym, Sym>,
    names: &HashMap<Sym, Sym>,
    used: &mut HashSet<Sym>,
    taken: &mut HashSet<Sym>,
) -> Proc {
    let rt = |t: &Term, vars: &HashMap<Sym, Sym>| t.rename(vars, names);
    let bind = |v: &Sym, vars: &HashMap<Sym, Sym>, used: &mut HashSet<Sym>, taken: &mut HashSet<Sym>| {
        let nv = fresh_for(v, used, taken);
        let mut m = vars.clone();
        m.insert(v.clone(), nv.clone());
        (nv, m)
    };
    Arc::new(match &**p {
        Process::New(n, q) => {
            let nn = fresh_for(n, used, taken);
            let mut m = names.clone();
            m.insert(n.clone(), nn.clone());
            Process::New(nn, rename_rec(q, vars, &m, used, taken))
        }
        Process::In { chan, var, cont } => {
            let (nv, m) = bind(var, vars, used, taken);
            Process::In { chan: rt(chan, vars), var: nv, cont: rename_rec(cont, &m, names, used, taken) }
        }
        Process::Let { var, expr, then, else_ } => {
            let (nv, m) = bind(var, vars, used, taken);
            Process::Let {
                var: nv,
                expr: rt(expr, vars),
                then: rename_rec(then, &m, names, used, taken),
                else_: rename_rec(else_, vars, names, used, taken),
            }
        }
        Process::Lookup { key, var, then, else_ } => {
            let (nv, m) = bind(var, vars, used, taken);
            Process::Lookup {
                key: rt(key, vars),
                var: nv,
                then: rename_rec(then, &m, names, used, taken),
                else_: else_.as_ref().map(|e| rename_rec(e, vars, names, used, taken)),
            }
        }
        Process::SvRead { cell, var, cont } => {
            let (nv, m) = bind(var, vars, used, taken);
            Process::SvRead { cell: rt(cell, vars), var: nv, cont: rename_rec(cont, &m, names, used, taken) }
        }
        Process::Msr { lhs, events, rhs, cont } => {
            let mut m = vars.clone();
            for v in msr_pattern_vars(lhs) {
                if let std::collections::hash_map::Entry::Vacant(e) = m.entry(v) {
                    let nv = fresh_for(e.key(), used, taken);
                    e.insert(nv);
                }
            }
            let f = |t: &Term| t.rename(&m, names);
            Process::Msr {
                lhs: lhs.iter().map(|x| x.map(&f)).collect(),
                events: events.iter().map(|x| x.map(&f)).collect(),
                rhs: rhs.iter().map(|x| x.map(&f)).collect(),
                cont: rename_rec(cont, &m, names, used, taken),
            }
        }
        other => other.rebuild(&|t| rt(t, vars), &mut |q| rename_rec(q, vars, names, used, taken)),
    })
}

/// Renames every binder of a replication body for its `k`-th copy.
pub fn rename_copy(body: &Proc, k: u32) -> Proc {
    let mut binders = HashSet::new();
    body.visit(&mut |p| match p {
        Process::New(n, _) => {
            binders.insert(n.clone());
        }
        _ => binders.extend(p.bound_vars()),
    });
    let map: HashMap<Sym, Sym> = binders.into_iter().map(|b| (b.clone(), sym(&format!("{b}#{k}")))).collect();
    copy_rec(body, &map)
}

fn copy_rec(p: &Proc, map: &HashMap<Sym, Sym>) -> Proc {
    let r = |s: &Sym| map.get(s).cloned().unwrap_or_else(|| s.clone());
    let f = |t: &Term| t.rename(map, map);
    Arc::new(match &**p {
        Process::New(n, q) => Process::New(r(n), copy_rec(q, map)),
        Process::In { chan, var, cont } => Process::In { chan: f(chan), var: r(var), cont: copy_rec(cont, map) },
        Process::Let { var, expr, then, else_ } => {
            Process::Let { var: r(var), expr: f(expr), then: copy_rec(then, map), else_: copy_rec(else_, map) }
        }
        Process::Lookup { key, var, then, else_ } => Process::Lookup {
            key: f(key),
            var: r(var),
            then: copy_rec(then, map),
            else_: else_.as_ref().map(|e| copy_rec(e, map)),
        },
        Process::SvRead { cell, var, cont } => {
            Process::SvRead { cell: f(cell), var: r(var), cont: copy_rec(cont, map) }
        }
        other => other.rebuild(&f, &mut |q| copy_rec(q, map)),
    })
}

/// Unfolds one copy of `!body`: returns the fresh copy and the updated replication.
pub fn unfold_replication(body: &Proc, copies: u32) -> (Proc, Proc) {
    let k = copies + 1;
    (rename_copy(body, k), Process::Repl { body: body.clone(), copies: k }.arc())
}

/// Renames every binder to a positional name (`%0`, `%1`, ...) in visiting
/// order, so that processes differing only in bound identifiers coincide.
pub fn canonical_binders(p: &Proc) -> Proc {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    p.visit(&mut |q| {
        let bs = match q {
            Process::New(n, _) => vec![n.clone()],
            Process::Msr { lhs, .. } => msr_pattern_vars(lhs),
            _ => q.bound_vars(),
        };
        for b in bs {
            if seen.insert(b.clone()) {
                order.push(b);
            }
        }
    });
    let map: HashMap<Sym, Sym> = order.into_iter().enumerate().map(|(i, b)| (b, sym(&format!("%{i}")))).collect();
    copy_rec(p, &map)
}

/// Rebuilds only the nodes that change; hole-free subtrees are shared.
fn subst_holes_rec(p: &Proc, map: &HashMap<Sym, Term>) -> Proc {
    let mut changed = p.own_terms().iter().any(|t| t.has_holes());
    let next = p.rebuild(&|t| t.subst_holes(map), &mut |c| {
        let d = subst_holes_rec(c, map);
        changed |= !Arc::ptr_eq(&d, c);
        d
    });
    if changed {
        Arc::new(next)
    } else {
        p.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(c: &str, m: Term, cont: Proc) -> Proc {
        Process::Out { chan: Term::name(c), msg: m, cont }.arc()
    }

    #[test]
    fn free_names_examples() {
        let p = out("c", Term::name("n"), nil());
        let fns: Vec<String> = p.free_names().iter().map(|s| s.to_string()).collect();
        assert_eq!(fns, vec!["c", "n"]);
        let q = Process::New(sym("n"), p).arc();
        let fns: Vec<String> = q.free_names().iter().map(|s| s.to_string()).collect();
        assert_eq!(fns, vec!["c"]);
    }

    #[test]
    fn alpha_rename_separates_binders() {
        let inner = Process::New(sym("n"), out("c", Term::name("n"), nil())).arc();
        let p = Process::New(sym("n"), Process::Par(out("c", Term::name("n"), nil()), inner).arc()).arc();
        let r = alpha_rename(&p);
        let mut binders = Vec::new();
        r.visit(&mut |q| {
            if let Process::New(n, _) = q {
                binders.push(n.to_string());
            }
        });
        assert_eq!(binders, vec!["n", "n_1"]);
        assert_eq!(r.free_names(), p.free_names());
        assert_eq!(alpha_rename(&r), r);
    }

    #[test]
    fn replication_copies_get_fresh_binders() {
        let body = Process::New(sym("n"), out("c", Term::name("n"), nil())).arc();
        let (copy, rest) = unfold_replication(&body, 0);
        match &*copy {
            Process::New(n, q) => {
                assert_eq!(&**n, "n#1");
                assert!(matches!(&**q, Process::Out { msg, .. } if msg.to_string() == "n#1"));
            }
            _ => panic!(),
        }
        assert!(matches!(&*rest, Process::Repl { copies: 1, .. }));
    }

    #[test]
    fn substitution_respects_binders() {
        let cont = out("c", Term::var("x"), nil());
        let p = Process::In { chan: Term::name("c"), var: sym("x"), cont }.arc();
        let mut m = HashMap::new();
        m.insert(sym("x"), Term::constant("'a'"));
        assert_eq!(p.subst_vars(&m), p);
    }
}

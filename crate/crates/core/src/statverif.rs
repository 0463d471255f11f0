//! Direct StatVerif semantics and the encoding into SAPIC.

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::deduction::Knowledge;
use crate::sapic::{self, flatten, Action, EngineError, HoleInfo, SapicConfig, StepOptions, TraceStep};
use crate::syntax::{alpha_rename, Event, Proc, Process};
use crate::terms::{eval_term_partial, sym, Nonce, Reduct, Sym, SymbolicModel, Term, TermKind, EQUAL};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("`{construct}` cannot be encoded with the state {}: unreachable under lock discipline", if *.locked { "locked" } else { "unlocked" })]
    Unreachable { construct: &'static str, locked: bool },
    #[error("`{0}` is not a StatVerif construct")]
    WrongDialect(&'static str),
    #[error("secret `{0}` must not contain variables")]
    NotGround(Term),
    #[error("secret name `{0}` is restricted under a replication")]
    SecretUnderReplication(Sym),
}

/// A StatVerif configuration. Each process carries a flag telling whether
/// it holds the global state lock.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatConfig {
    pub cells: BTreeMap<Term, Term>,
    /// Stopped processes that still hold the lock stay as `(0, true)`.
    pub procs: Vec<(Proc, bool)>,
    pub knowledge: Knowledge,
    pub raised: Vec<Event>,
    pub holes: BTreeMap<Sym, HoleInfo>,
}

impl StatConfig {
    /// Start configuration; free names become public nonces as in SAPIC.
    pub fn initial(p0: &Proc) -> Result<StatConfig, EngineError> {
        let s = SapicConfig::initial(p0)?;
        Ok(StatConfig {
            procs: s.procs.into_iter().map(|p| (p, false)).collect(),
            knowledge: s.knowledge,
            ..Default::default()
        })
    }

    fn locked_by_other(&self, i: usize) -> bool {
        self.procs.iter().enumerate().any(|(j, (_, b))| j != i && *b)
    }

    pub(crate) fn as_sapic(&self) -> SapicConfig {
        SapicConfig {
            procs: self.procs.iter().map(|(p, _)| p.clone()).collect(),
            knowledge: self.knowledge.clone(),
            raised: self.raised.clone(),
            holes: self.holes.clone(),
            ..Default::default()
        }
    }

    fn replace(&mut self, i: usize, cont: &Proc, locked: bool) {
        let mut new: Vec<(Proc, bool)> = flatten(cont).into_iter().map(|p| (p, locked)).collect();
        if new.is_empty() && locked {
            new.push((Process::Nil.arc(), true));
        }
        self.procs.splice(i..=i, new);
    }
}

fn value(model: &SymbolicModel, t: &Term, what: &str) -> Result<Term, EngineError> {
    match eval_term_partial(model, t)? {
        Reduct::Value(v) => Ok(v),
        Reduct::Bottom => Err(EngineError::NotEnabled { reason: format!("{what} `{t}` evaluates to bottom") }),
        Reduct::Blocked(h) => Err(EngineError::Blocked(h)),
    }
}

fn not_enabled(reason: impl Into<String>) -> EngineError {
    EngineError::NotEnabled { reason: reason.into() }
}

fn sapic_only(p: &Process) -> Option<&'static str> {
    Some(match p {
        Process::Insert { .. } => "insert",
        Process::Delete { .. } => "delete",
        Process::Lookup { .. } => "lookup",
        Process::Lock(..) => "lock M",
        Process::Unlock(..) => "unlock M",
        Process::Msr { .. } => "[L]-[e]->[R]",
        _ => return None,
    })
}

/// One step of the direct StatVerif semantics.
pub fn sv_step(
    model: &SymbolicModel,
    cfg: &StatConfig,
    action: &Action,
) -> Result<(StatConfig, TraceStep), EngineError> {
    let silent = |a: &Action| TraceStep { action: a.clone(), label: sapic::Label::Silent };
    if let Action::Schedule { proc: i } = action {
        let (p, locked) = cfg.procs.get(*i).ok_or(EngineError::BadIndex(*i))?;
        if let Some(c) = sapic_only(p) {
            return Err(EngineError::WrongDialect(c.into()));
        }
        let mut next = cfg.clone();
        match &**p {
            Process::SvInit { cell, value: v } => {
                let s = value(model, cell, "cell")?;
                let restricted = s.as_nonce().is_some_and(|n| cfg.knowledge.restricted.contains(n));
                if !restricted {
                    return Err(not_enabled(format!("cell {s} is not a restricted name")));
                }
                if cfg.cells.contains_key(&s) {
                    return Err(not_enabled(format!("cell {s} is already initialised")));
                }
                let v = value(model, v, "value")?;
                next.cells.insert(s, v);
                next.replace(*i, &Process::Nil.arc(), *locked);
                return Ok((next, silent(action)));
            }
            Process::SvAssign { cell, value: v, cont } => {
                let s = value(model, cell, "cell")?;
                if !cfg.cells.contains_key(&s) || cfg.locked_by_other(*i) {
                    return Err(not_enabled(format!("cell {s} is not available")));
                }
                let v = value(model, v, "value")?;
                next.cells.insert(s, v);
                next.replace(*i, cont, *locked);
                return Ok((next, silent(action)));
            }
            Process::SvRead { cell, var, cont } => {
                let s = value(model, cell, "cell")?;
                let v = match cfg.cells.get(&s) {
                    Some(v) if !cfg.locked_by_other(*i) => v.clone(),
                    _ => return Err(not_enabled(format!("cell {s} is not available"))),
                };
                let mut m = HashMap::new();
                m.insert(var.clone(), v);
                next.replace(*i, &cont.subst_vars(&m), *locked);
                return Ok((next, silent(action)));
            }
            Process::SvLock(cont) => {
                if *locked || cfg.locked_by_other(*i) {
                    return Err(not_enabled("the state is locked"));
                }
                next.replace(*i, cont, true);
                return Ok((next, silent(action)));
            }
            Process::SvUnlock(cont) => {
                if !*locked {
                    return Err(not_enabled("unlock without holding the lock"));
                }
                next.replace(*i, cont, false);
                return Ok((next, silent(action)));
            }
            _ => {}
        }
    }
    delegate(model, cfg, action)
}

/// Standard constructs behave as in SAPIC; lock flags follow the acting processes.
fn delegate(model: &SymbolicModel, cfg: &StatConfig, action: &Action) -> Result<(StatConfig, TraceStep), EngineError> {
    let (next, st) = sapic::step_with(model, &cfg.as_sapic(), action, StepOptions::default())?;
    let mut actors: Vec<(usize, usize)> = match action {
        Action::Schedule { proc } | Action::AdvInput { proc, .. } | Action::AdvOutput { proc, .. } => {
            let k = next.procs.len() + 1 - cfg.procs.len();
            vec![(*proc, k)]
        }
        Action::Comm { sender, receiver } => {
            let count = |i: usize| match &*cfg.procs[i].0 {
                Process::Out { cont, .. } | Process::In { cont, .. } => flatten(cont).len(),
                _ => 0,
            };
            vec![(*sender, count(*sender)), (*receiver, count(*receiver))]
        }
    };
    actors.sort_unstable();
    let mut procs = Vec::with_capacity(next.procs.len() + 1);
    let mut pos = 0;
    for (i, (p, locked)) in cfg.procs.iter().enumerate() {
        match actors.iter().find(|(a, _)| *a == i) {
            Some(&(_, k)) => {
                procs.extend(next.procs[pos..pos + k].iter().map(|q| (q.clone(), *locked)));
                if k == 0 && *locked {
                    procs.push((Process::Nil.arc(), true));
                }
                pos += k;
            }
            None => {
                debug_assert_eq!(&next.procs[pos], p);
                procs.push((next.procs[pos].clone(), *locked));
                pos += 1;
            }
        }
    }
    let out = StatConfig {
        cells: cfg.cells.clone(),
        procs,
        knowledge: next.knowledge,
        raised: next.raised,
        holes: next.holes,
    };
    Ok((out, st))
}

/// Actions with a successor under the direct semantics.
pub fn sv_enabled_actions(model: &SymbolicModel, cfg: &StatConfig) -> Vec<Action> {
    sapic::candidate_actions(model, &cfg.as_sapic())
        .into_iter()
        .filter(|a| matches!(sv_step(model, cfg, a), Ok(_) | Err(EngineError::Blocked(_))))
        .collect()
}

/// Quoted constants occurring in a process.
pub(crate) fn constants(p: &Process, out: &mut HashSet<Sym>) {
    p.visit(&mut |q| {
        for t in q.own_terms() {
            t.visit(&mut |s| {
                if let TermKind::App(f, args) = s.kind() {
                    if args.is_empty() && f.starts_with('\'') {
                        out.insert(f.clone());
                    }
                }
            });
        }
    });
}

fn fresh_ident(base: &str, avoid: &HashSet<Sym>) -> Sym {
    if !avoid.contains(base) {
        return sym(base);
    }
    (1..).map(|i| sym(&format!("{base}_{i}"))).find(|s| !avoid.contains(s)).expect("unbounded")
}

/// Translation of StatVerif processes into SAPIC.
#[derive(Debug, Clone)]
pub struct Encoder {
    /// The public constant used as the global lock.
    pub token: Term,
    /// Mutation for testing: omit every `unlock` of the token.
    pub drop_unlock: bool,
    avoid: HashSet<Sym>,
}

impl Encoder {
    /// An encoder whose token and fresh variables avoid everything in `ps`.
    pub fn for_processes<'a>(ps: impl IntoIterator<Item = &'a Proc>) -> Encoder {
        let mut avoid = HashSet::new();
        let mut consts = HashSet::new();
        for p in ps {
            avoid.extend(p.identifiers());
            constants(p, &mut consts);
        }
        let token = if consts.contains("'l'") {
            let name = (1..).map(|i| format!("'l_{i}'")).find(|c| !consts.contains(c.as_str())).expect("unbounded");
            Term::constant(&name)
        } else {
            Term::constant("'l'")
        };
        Encoder { token, drop_unlock: false, avoid }
    }

    pub fn for_process(p: &Proc) -> Encoder {
        Self::for_processes([p])
    }

    fn unlock(&self, cont: Proc) -> Proc {
        if self.drop_unlock {
            cont
        } else {
            Process::Unlock(self.token.clone(), cont).arc()
        }
    }

    fn assign_var(&self, cell: &Term) -> Sym {
        let base = match cell.kind() {
            TermKind::Name(n) => format!("x_{n}"),
            TermKind::Nonce(n) => format!("x_{}", n.name.replace('#', "_")),
            _ => "x_cell".to_string(),
        };
        fresh_ident(&base, &self.avoid)
    }

    /// The encoding of `p` where `locked` says whether `p` holds the state lock.
    pub fn encode(&self, p: &Proc, locked: bool) -> Result<Proc, EncodeError> {
        let unreachable = |construct| Err(EncodeError::Unreachable { construct, locked });
        let e = |q: &Proc, b| self.encode(q, b);
        if let Some(c) = sapic_only(p) {
            return Err(EncodeError::WrongDialect(c));
        }
        Ok(match &**p {
            Process::Nil => Process::Nil.arc(),
            Process::Par(a, b) => {
                if locked {
                    return unreachable("P | Q");
                }
                Process::Par(e(a, false)?, e(b, false)?).arc()
            }
            Process::Repl { body, copies } => {
                if locked {
                    return unreachable("!P");
                }
                Process::Repl { body: e(body, false)?, copies: *copies }.arc()
            }
            Process::InPattern { .. } => return Err(EncodeError::WrongDialect("in(c, pattern)")),
            Process::SvInit { cell, value } => {
                if locked {
                    return unreachable("[s |-> M]");
                }
                Process::Insert { key: cell.clone(), value: value.clone(), cont: Process::Nil.arc() }.arc()
            }
            Process::SvLock(cont) => {
                if locked {
                    return unreachable("lock");
                }
                Process::Lock(self.token.clone(), e(cont, true)?).arc()
            }
            Process::SvUnlock(cont) => {
                if !locked {
                    return unreachable("unlock");
                }
                self.unlock(e(cont, false)?)
            }
            Process::SvAssign { cell, value, cont } => {
                let rest = e(cont, locked)?;
                let body = |after: Proc| {
                    let insert = Process::Insert { key: cell.clone(), value: value.clone(), cont: after }.arc();
                    Process::Lookup { key: cell.clone(), var: self.assign_var(cell), then: insert, else_: None }.arc()
                };
                if locked {
                    body(rest)
                } else {
                    Process::Lock(self.token.clone(), body(self.unlock(rest))).arc()
                }
            }
            Process::SvRead { cell, var, cont } => {
                let rest = e(cont, locked)?;
                let body = |after: Proc| {
                    Process::Lookup { key: cell.clone(), var: var.clone(), then: after, else_: None }.arc()
                };
                if locked {
                    body(rest)
                } else {
                    Process::Lock(self.token.clone(), body(self.unlock(rest))).arc()
                }
            }
            Process::New(n, c) => Process::New(n.clone(), e(c, locked)?).arc(),
            Process::Out { chan, msg, cont } => {
                Process::Out { chan: chan.clone(), msg: msg.clone(), cont: e(cont, locked)? }.arc()
            }
            Process::In { chan, var, cont } => {
                Process::In { chan: chan.clone(), var: var.clone(), cont: e(cont, locked)? }.arc()
            }
            Process::Let { var, expr, then, else_ } => {
                Process::Let { var: var.clone(), expr: expr.clone(), then: e(then, locked)?, else_: e(else_, locked)? }
                    .arc()
            }
            Process::If { lhs, rhs, then, else_ } => {
                Process::If { lhs: lhs.clone(), rhs: rhs.clone(), then: e(then, locked)?, else_: e(else_, locked)? }
                    .arc()
            }
            Process::Event(ev, c) => Process::Event(ev.clone(), e(c, locked)?).arc(),
            Process::Insert { .. }
            | Process::Delete { .. }
            | Process::Lookup { .. }
            | Process::Lock(..)
            | Process::Unlock(..)
            | Process::Msr { .. } => unreachable!("rejected above"),
        })
    }

    /// The SAPIC configuration simulating a StatVerif configuration.
    pub fn encode_config(&self, o: &StatConfig) -> Result<SapicConfig, EncodeError> {
        let mut procs = Vec::new();
        for (p, locked) in &o.procs {
            procs.extend(flatten(&self.encode(p, *locked)?));
        }
        let locked = o.procs.iter().any(|(_, b)| *b);
        Ok(SapicConfig {
            cells: o.cells.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            procs,
            knowledge: o.knowledge.clone(),
            locks: if locked { vec![self.token.clone()] } else { Vec::new() },
            raised: o.raised.clone(),
            holes: o.holes.clone(),
            ..Default::default()
        })
    }
}

/// Encodes a StatVerif process with a fresh lock token.
pub fn encode_process(p: &Proc, locked: bool) -> Result<Proc, EncodeError> {
    Encoder::for_process(p).encode(p, locked)
}

/// Encodes a configuration with a token chosen for its processes.
pub fn encode_config(o: &StatConfig) -> Result<SapicConfig, EncodeError> {
    Encoder::for_processes(o.procs.iter().map(|(p, _)| p)).encode_config(o)
}

/// The public channel on which the secrecy harness listens.
pub const ATTACK_CHANNEL: &str = "attch";

/// The event raised when the adversary submits the secret.
pub const NOT_SECRET: &str = "NotSecret";

/// `⌊in(attch, x); let y = equal(x, M) in event NotSecret | P0⌋` with fresh
/// `x`, `y` and channel name.
///
/// Names of `M` restricted in `P0` outside any replication denote those
/// restrictions: their binders are lifted above the watcher. Other names
/// of `M` are free, hence public.
pub fn secrecy_harness(p0: &Proc, secret: &Term) -> Result<Proc, EncodeError> {
    if secret.has_vars() {
        return Err(EncodeError::NotGround(secret.clone()));
    }
    let mut ns = Vec::new();
    secret.names(&mut ns);
    ns.sort();
    ns.dedup();
    let (mut outer, mut inner) = (HashSet::new(), HashSet::new());
    restricted_names(p0, false, &mut outer, &mut inner);
    if let Some(n) = ns.iter().find(|n| inner.contains(*n) && !outer.contains(*n)) {
        return Err(EncodeError::SecretUnderReplication(n.clone()));
    }
    let lifted: Vec<Sym> = ns.iter().filter(|n| outer.contains(*n)).cloned().collect();
    // Renaming keeps the lifted binders: it only renames on clashes, and
    // a name restricted twice outside replication is lifted once.
    let p0 = alpha_rename(&drop_restrictions(p0, &lifted));
    let mut avoid = p0.identifiers();
    avoid.extend(ns);
    let chan = fresh_ident(ATTACK_CHANNEL, &avoid);
    let x = fresh_ident("x", &avoid);
    let y = fresh_ident("y", &avoid);
    let watcher = Process::In {
        chan: Term::name_sym(chan),
        var: x.clone(),
        cont: Process::Let {
            var: y,
            expr: Term::app(EQUAL, vec![Term::var_sym(x), secret.clone()]),
            then: Process::Event(Event::new(NOT_SECRET, vec![]), Process::Nil.arc()).arc(),
            else_: Process::Nil.arc(),
        }
        .arc(),
    }
    .arc();
    let mut both = Process::Par(watcher, p0).arc();
    for n in lifted.into_iter().rev() {
        both = Process::New(n, both).arc();
    }
    encode_process(&both, false)
}

fn restricted_names(p: &Proc, under_repl: bool, outer: &mut HashSet<Sym>, inner: &mut HashSet<Sym>) {
    if let Process::New(n, _) = &**p {
        if under_repl {
            inner.insert(n.clone());
        } else {
            outer.insert(n.clone());
        }
    }
    let repl = under_repl || matches!(&**p, Process::Repl { .. });
    for c in p.children() {
        restricted_names(c, repl, outer, inner);
    }
}

fn drop_restrictions(p: &Proc, names: &[Sym]) -> Proc {
    match &**p {
        Process::New(n, q) if names.contains(n) => drop_restrictions(q, names),
        Process::Repl { .. } => p.clone(),
        other => other.rebuild(&|t| t.clone(), &mut |q| drop_restrictions(q, names)).arc(),
    }
}

/// The nonce a StatVerif cell name denotes once its restriction ran.
pub fn cell_nonce(name: &str) -> Term {
    Term::nonce(Nonce::protocol(name))
}

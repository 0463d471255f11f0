//! The SAPIC reduction machine: configurations, actions and the step function.

mod matching;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use matching::{eq3, f_match3, f_mem3};
pub use matching::{f_match, f_mem, FMatch, Tri};

use crate::deduction::{recipe_term, saturate, Deducer, DeductionError, Knowledge, Recipe, Saturation};
use crate::syntax::{alpha_rename, unfold_replication, Event, Fact, Proc, Process};
use crate::terms::{eval_term_partial, MatchOutcome, Nonce, Reduct, Sym, SymbolicModel, Term, TermError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("action not enabled: {reason}")]
    NotEnabled { reason: String },
    /// The outcome depends on how the adversary input `.0` is refined.
    #[error("blocked on unrefined input {0}")]
    Blocked(Term),
    #[error("process index {0} out of range")]
    BadIndex(usize),
    #[error("construct `{0}` does not belong to the SAPIC dialect")]
    WrongDialect(String),
    #[error("process is not closed: free variable {0}")]
    Open(Sym),
    #[error(transparent)]
    Term(#[from] TermError),
    #[error(transparent)]
    Deduction(#[from] DeductionError),
}

fn not_enabled(reason: impl Into<String>) -> EngineError {
    EngineError::NotEnabled { reason: reason.into() }
}

/// Bookkeeping for a lazily refined adversary input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HoleInfo {
    /// Number of knowledge entries available when the input was made.
    pub avail: usize,
    /// Recipe depth consumed so far by this input's position.
    pub depth: usize,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SatCache(OnceLock<Arc<Saturation>>);

/// A SAPIC configuration. Restricted nonces live in `knowledge.restricted`;
/// variable and name bindings are applied by substitution as they happen.
#[derive(Debug, Clone, Default)]
pub struct SapicConfig {
    pub cells: Vec<(Term, Term)>,
    pub msstate: Vec<Fact>,
    /// Active processes; never `0` or a parallel composition.
    pub procs: Vec<Proc>,
    pub knowledge: Knowledge,
    pub locks: Vec<Term>,
    pub raised: Vec<Event>,
    pub holes: BTreeMap<Sym, HoleInfo>,
    pub(crate) sat: SatCache,
}

impl PartialEq for SapicConfig {
    fn eq(&self, o: &Self) -> bool {
        self.cells == o.cells
            && self.msstate == o.msstate
            && self.procs == o.procs
            && self.knowledge == o.knowledge
            && self.locks == o.locks
            && self.raised == o.raised
            && self.holes == o.holes
    }
}

impl Eq for SapicConfig {}

/// Splits a process into its parallel components, dropping `0`.
pub fn flatten(p: &Proc) -> Vec<Proc> {
    let mut out = Vec::new();
    Process::flatten_par(p, &mut out);
    out.retain(|q| !q.is_nil());
    out
}

impl SapicConfig {
    /// The start configuration for a closed process: binders are made
    /// distinct, free names become public nonces published in sorted order.
    pub fn initial(p0: &Proc) -> Result<SapicConfig, EngineError> {
        if let Some(v) = p0.free_vars().into_iter().next() {
            return Err(EngineError::Open(v));
        }
        let p = alpha_rename(p0);
        let mut k = Knowledge::new();
        let mut map = HashMap::new();
        for n in p.free_names() {
            let t = Term::nonce(Nonce::protocol(&n));
            k.push(t.clone());
            map.insert(n, t);
        }
        let p = p.subst_names(&map);
        Ok(SapicConfig { procs: flatten(&p), knowledge: k, ..Default::default() })
    }

    /// The destructor closure of the current knowledge, computed once.
    pub fn saturation(&self, model: &SymbolicModel) -> Arc<Saturation> {
        self.sat.0.get_or_init(|| Arc::new(saturate(model, &self.knowledge))).clone()
    }

    pub fn deducer<'a>(&self, model: &'a SymbolicModel) -> Deducer<'a> {
        Deducer::from_saturation(model, self.saturation(model))
    }

    /// Adds a message to the knowledge.
    pub fn publish(&mut self, t: Term) -> usize {
        self.sat = SatCache::default();
        self.knowledge.push(t)
    }

    /// Replaces adversary input holes everywhere in the configuration.
    pub fn subst_holes(&self, map: &HashMap<Sym, Term>) -> SapicConfig {
        let touched: Vec<bool> = self.procs.iter().map(|p| p.has_holes()).collect();
        self.subst_holes_in(map, &touched)
    }

    /// As `subst_holes`, rewriting only the processes flagged in `touched`.
    pub fn subst_holes_in(&self, map: &HashMap<Sym, Term>, touched: &[bool]) -> SapicConfig {
        let f = |t: &Term| t.subst_holes(map);
        let fact = |x: &Fact| Fact {
            symbol: x.symbol.clone(),
            persistent: x.persistent,
            args: x.args.iter().map(f).collect(),
        };
        let mut knowledge = self.knowledge.clone();
        knowledge.map_terms(f);
        let mut msstate: Vec<Fact> = Vec::with_capacity(self.msstate.len());
        for x in self.msstate.iter().map(fact) {
            if !(x.persistent && msstate.contains(&x)) {
                msstate.push(x);
            }
        }
        SapicConfig {
            cells: self.cells.iter().map(|(k, v)| (f(k), f(v))).collect(),
            msstate,
            procs: self
                .procs
                .iter()
                .zip(touched)
                .map(|(p, &t)| if t { p.subst_holes(map) } else { p.clone() })
                .collect(),
            knowledge,
            locks: self.locks.iter().map(f).collect(),
            raised: self
                .raised
                .iter()
                .map(|e| Event { symbol: e.symbol.clone(), args: e.args.iter().map(f).collect() })
                .collect(),
            holes: self.holes.iter().filter(|(h, _)| !map.contains_key(*h)).map(|(h, i)| (h.clone(), *i)).collect(),
            sat: SatCache::default(),
        }
    }

    fn replace(&mut self, i: usize, conts: &[&Proc]) {
        let mut new = Vec::new();
        for c in conts {
            new.extend(flatten(c));
        }
        self.procs.splice(i..=i, new);
    }
}

/// A choice of the scheduler or the adversary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    /// An internal step of process `proc`.
    Schedule { proc: usize },
    /// The adversary sends on an input. A missing channel recipe asks for a
    /// derivability check; a missing payload introduces a symbolic input.
    AdvInput { proc: usize, channel: Option<Recipe>, payload: Option<Recipe> },
    /// The adversary receives an output.
    AdvOutput { proc: usize, channel: Option<Recipe> },
    /// Synchronous communication between an output and an input.
    Comm { sender: usize, receiver: usize },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |r: &Option<Recipe>| r.as_ref().map_or("?".to_string(), |r| r.to_string());
        match self {
            Action::Schedule { proc } => write!(f, "schedule {proc}"),
            Action::AdvInput { proc, channel, payload } => {
                write!(f, "input {proc} {} {}", opt(channel), opt(payload))
            }
            Action::AdvOutput { proc, channel } => write!(f, "output {proc} {}", opt(channel)),
            Action::Comm { sender, receiver } => write!(f, "comm {sender} {receiver}"),
        }
    }
}

/// What a step makes observable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Label {
    Silent,
    Events {
        events: Vec<Event>,
    },
    /// A message added to the adversary knowledge.
    Know {
        term: Term,
    },
    /// A message received from the adversary.
    Input {
        channel: Term,
        payload: Term,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub action: Action,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    /// Set when exploration stopped at a bound rather than at a dead end.
    pub truncated: bool,
}

impl Trace {
    /// Raised events in order.
    pub fn events(&self) -> Vec<Event> {
        self.steps
            .iter()
            .flat_map(|s| match &s.label {
                Label::Events { events } => events.clone(),
                _ => Vec::new(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepOptions {
    /// Use first-fit matching for msr instead of full backtracking.
    pub greedy_match: bool,
}

enum Ev {
    Value(Term),
    Bottom,
}

fn eval(model: &SymbolicModel, t: &Term) -> Result<Ev, EngineError> {
    match eval_term_partial(model, t)? {
        Reduct::Value(v) => Ok(Ev::Value(v)),
        Reduct::Bottom => Ok(Ev::Bottom),
        Reduct::Blocked(h) => Err(EngineError::Blocked(h)),
    }
}

fn eval_defined(model: &SymbolicModel, t: &Term, what: &str) -> Result<Term, EngineError> {
    match eval(model, t)? {
        Ev::Value(v) => Ok(v),
        Ev::Bottom => Err(not_enabled(format!("{what} `{t}` evaluates to bottom"))),
    }
}

fn bind(var: &Sym, v: Term, p: &Proc) -> Proc {
    let mut m = HashMap::new();
    m.insert(var.clone(), v);
    p.subst_vars(&m)
}

fn eval_event(model: &SymbolicModel, e: &Event) -> Result<Event, EngineError> {
    let args = e.args.iter().map(|a| eval_defined(model, a, "event argument")).collect::<Result<_, _>>()?;
    Ok(Event { symbol: e.symbol.clone(), args })
}

/// Checks that the adversary can produce `chan`, optionally via the given recipe.
fn check_channel(
    model: &SymbolicModel,
    cfg: &SapicConfig,
    chan: &Term,
    recipe: &Option<Recipe>,
) -> Result<(), EngineError> {
    match recipe {
        Some(r) => {
            let v = eval_recipe3(model, &cfg.knowledge, r)?
                .ok_or_else(|| not_enabled(format!("channel recipe {r} evaluates to bottom")))?;
            match eq3(model, &v, chan) {
                MatchOutcome::Match => Ok(()),
                MatchOutcome::NoMatch => Err(not_enabled(format!("recipe {r} does not yield channel {chan}"))),
                MatchOutcome::Blocked(h) => Err(EngineError::Blocked(h)),
            }
        }
        None if cfg.deducer(model).derivable(chan) => Ok(()),
        None => Err(not_enabled(format!("channel {chan} is not derivable"))),
    }
}

/// Evaluates a recipe; holes in the knowledge may block.
pub(crate) fn eval_recipe3(model: &SymbolicModel, k: &Knowledge, r: &Recipe) -> Result<Option<Term>, EngineError> {
    let t = recipe_term(k, r)?;
    Ok(match eval(model, &t)? {
        Ev::Value(v) => Some(v),
        Ev::Bottom => None,
    })
}

/// Performs one action with default options.
pub fn step(
    model: &SymbolicModel,
    cfg: &SapicConfig,
    action: &Action,
) -> Result<(SapicConfig, TraceStep), EngineError> {
    step_with(model, cfg, action, StepOptions::default())
}

/// Performs one action, returning the successor configuration and the label.
pub fn step_with(
    model: &SymbolicModel,
    cfg: &SapicConfig,
    action: &Action,
    opts: StepOptions,
) -> Result<(SapicConfig, TraceStep), EngineError> {
    let get = |i: usize| cfg.procs.get(i).ok_or(EngineError::BadIndex(i));
    let mut next = cfg.clone();
    let label = match action {
        Action::Schedule { proc } => internal(model, &mut next, *proc, get(*proc)?, opts)?,
        Action::AdvInput { proc, channel, payload } => {
            let Process::In { chan, var, cont } = &**get(*proc)? else {
                return Err(not_enabled(format!("process {proc} is not an input")));
            };
            let c = eval_defined(model, chan, "channel")?;
            check_channel(model, cfg, &c, channel)?;
            let msg = match payload {
                Some(r) => eval_recipe3(model, &cfg.knowledge, r)?
                    .ok_or_else(|| not_enabled(format!("payload recipe {r} evaluates to bottom")))?,
                None => {
                    let h = Term::hole(var);
                    next.holes.insert(var.clone(), HoleInfo { avail: cfg.knowledge.len(), depth: 1 });
                    h
                }
            };
            next.replace(*proc, &[&bind(var, msg.clone(), cont)]);
            Label::Input { channel: c, payload: msg }
        }
        Action::AdvOutput { proc, channel } => {
            let Process::Out { chan, msg, cont } = &**get(*proc)? else {
                return Err(not_enabled(format!("process {proc} is not an output")));
            };
            let c = eval_defined(model, chan, "channel")?;
            let m = eval_defined(model, msg, "message")?;
            check_channel(model, cfg, &c, channel)?;
            next.publish(m.clone());
            next.replace(*proc, &[cont]);
            Label::Know { term: m }
        }
        Action::Comm { sender, receiver } => {
            if sender == receiver {
                return Err(not_enabled("a process cannot talk to itself"));
            }
            let Process::Out { chan: c1, msg, cont: p } = &**get(*sender)? else {
                return Err(not_enabled(format!("process {sender} is not an output")));
            };
            let Process::In { chan: c2, var, cont: q } = &**get(*receiver)? else {
                return Err(not_enabled(format!("process {receiver} is not an input")));
            };
            let c1 = eval_defined(model, c1, "channel")?;
            let c2 = eval_defined(model, c2, "channel")?;
            let m = eval_defined(model, msg, "message")?;
            match eq3(model, &c1, &c2) {
                MatchOutcome::Match => {}
                MatchOutcome::NoMatch => return Err(not_enabled("channels differ")),
                MatchOutcome::Blocked(h) => return Err(EngineError::Blocked(h)),
            }
            let q2 = bind(var, m, q);
            let (hi, lo, hp, lp) = if sender > receiver {
                (*sender, *receiver, p.clone(), q2)
            } else {
                (*receiver, *sender, q2, p.clone())
            };
            next.replace(hi, &[&hp]);
            next.replace(lo, &[&lp]);
            Label::Silent
        }
    };
    Ok((next, TraceStep { action: action.clone(), label }))
}

fn internal(
    model: &SymbolicModel,
    next: &mut SapicConfig,
    i: usize,
    p: &Proc,
    opts: StepOptions,
) -> Result<Label, EngineError> {
    Ok(match &**p {
        Process::Nil | Process::Par(..) => return Err(not_enabled("nothing to do")),
        Process::In { .. } | Process::Out { .. } => {
            return Err(not_enabled("communication needs an input, output or comm action"))
        }
        Process::InPattern { .. } => return Err(EngineError::WrongDialect("in(c, pattern)".into())),
        Process::SvInit { .. } => return Err(EngineError::WrongDialect("[s |-> M]".into())),
        Process::SvAssign { .. } => return Err(EngineError::WrongDialect("s := M".into())),
        Process::SvRead { .. } => return Err(EngineError::WrongDialect("read".into())),
        Process::SvLock(_) => return Err(EngineError::WrongDialect("lock".into())),
        Process::SvUnlock(_) => return Err(EngineError::WrongDialect("unlock".into())),
        Process::Repl { body, copies } => {
            let (copy, rest) = unfold_replication(body, *copies);
            next.replace(i, &[&copy, &rest]);
            Label::Silent
        }
        Process::New(n, q) => {
            let nonce = Nonce::protocol(n);
            let mut m = HashMap::new();
            m.insert(n.clone(), Term::nonce(nonce.clone()));
            next.knowledge.restricted.insert(nonce);
            next.replace(i, &[&q.subst_names(&m)]);
            Label::Silent
        }
        Process::Let { var, expr, then, else_ } => {
            match eval(model, expr)? {
                Ev::Value(v) => next.replace(i, &[&bind(var, v, then)]),
                Ev::Bottom => next.replace(i, &[else_]),
            }
            Label::Silent
        }
        Process::If { lhs, rhs, then, else_ } => {
            let outcome = match (eval(model, lhs)?, eval(model, rhs)?) {
                (Ev::Value(a), Ev::Value(b)) => eq3(model, &a, &b),
                _ => MatchOutcome::NoMatch,
            };
            match outcome {
                MatchOutcome::Match => next.replace(i, &[then]),
                MatchOutcome::NoMatch => next.replace(i, &[else_]),
                MatchOutcome::Blocked(h) => return Err(EngineError::Blocked(h)),
            }
            Label::Silent
        }
        Process::Event(e, q) => {
            let e = eval_event(model, e)?;
            next.raised.push(e.clone());
            next.replace(i, &[q]);
            Label::Events { events: vec![e] }
        }
        Process::Insert { key, value, cont } => {
            let k = eval_defined(model, key, "cell")?;
            let v = eval_defined(model, value, "value")?;
            let keys: Vec<Term> = next.cells.iter().map(|(k, _)| k.clone()).collect();
            match f_mem3(model, &keys, &k) {
                Tri::Found(j) => {
                    next.cells.remove(j);
                }
                Tri::Absent => {}
                Tri::Blocked(h) => return Err(EngineError::Blocked(h)),
            }
            next.cells.push((k, v));
            next.replace(i, &[cont]);
            Label::Silent
        }
        Process::Delete { key, cont } => {
            let k = eval_defined(model, key, "cell")?;
            let keys: Vec<Term> = next.cells.iter().map(|(k, _)| k.clone()).collect();
            match f_mem3(model, &keys, &k) {
                Tri::Found(j) => {
                    next.cells.remove(j);
                }
                Tri::Absent => {}
                Tri::Blocked(h) => return Err(EngineError::Blocked(h)),
            }
            next.replace(i, &[cont]);
            Label::Silent
        }
        Process::Lookup { key, var, then, else_ } => {
            let k = eval_defined(model, key, "cell")?;
            let keys: Vec<Term> = next.cells.iter().map(|(k, _)| k.clone()).collect();
            match f_mem3(model, &keys, &k) {
                Tri::Found(j) => {
                    let v = next.cells[j].1.clone();
                    next.replace(i, &[&bind(var, v, then)]);
                }
                Tri::Absent => match else_ {
                    Some(e) => next.replace(i, &[e]),
                    None => return Err(not_enabled(format!("cell {k} is not set"))),
                },
                Tri::Blocked(h) => return Err(EngineError::Blocked(h)),
            }
            Label::Silent
        }
        Process::Lock(t, cont) => {
            let k = eval_defined(model, t, "lock")?;
            match f_mem3(model, &next.locks, &k) {
                Tri::Found(_) => return Err(not_enabled(format!("{k} is locked"))),
                Tri::Absent => next.locks.push(k),
                Tri::Blocked(h) => return Err(EngineError::Blocked(h)),
            }
            next.replace(i, &[cont]);
            Label::Silent
        }
        Process::Unlock(t, cont) => {
            let k = eval_defined(model, t, "lock")?;
            match f_mem3(model, &next.locks, &k) {
                Tri::Found(j) => {
                    next.locks.remove(j);
                }
                Tri::Absent => return Err(not_enabled(format!("{k} is not locked"))),
                Tri::Blocked(h) => return Err(EngineError::Blocked(h)),
            }
            next.replace(i, &[cont]);
            Label::Silent
        }
        Process::Msr { lhs, events, rhs, cont } => {
            let mut pattern = Vec::with_capacity(lhs.len());
            for f in lhs {
                let mut args = Vec::with_capacity(f.args.len());
                for a in &f.args {
                    args.push(if a.has_vars() { a.clone() } else { eval_defined(model, a, "fact argument")? });
                }
                pattern.push(Fact { symbol: f.symbol.clone(), persistent: f.persistent, args });
            }
            let m = match f_match3(model, &pattern, &next.msstate, opts.greedy_match) {
                Tri::Found(m) => m,
                Tri::Absent => return Err(not_enabled("no matching facts")),
                Tri::Blocked(h) => return Err(EngineError::Blocked(h)),
            };
            let mut raised = Vec::with_capacity(events.len());
            for e in events {
                let inst =
                    Event { symbol: e.symbol.clone(), args: e.args.iter().map(|a| a.subst_vars(&m.subst)).collect() };
                raised.push(eval_event(model, &inst)?);
            }
            let mut added = Vec::with_capacity(rhs.len());
            for f in rhs {
                let args = f
                    .args
                    .iter()
                    .map(|a| eval_defined(model, &a.subst_vars(&m.subst), "fact argument"))
                    .collect::<Result<_, _>>()?;
                added.push(Fact { symbol: f.symbol.clone(), persistent: f.persistent, args });
            }
            let mut consumed = m.consumed.clone();
            consumed.sort_unstable();
            for j in consumed.into_iter().rev() {
                next.msstate.remove(j);
            }
            for f in added {
                if !(f.persistent && next.msstate.contains(&f)) {
                    next.msstate.push(f);
                }
            }
            next.raised.extend(raised.iter().cloned());
            next.replace(i, &[&cont.subst_vars(&m.subst)]);
            if raised.is_empty() {
                Label::Silent
            } else {
                Label::Events { events: raised }
            }
        }
    })
}

/// All actions with a successor, in process order. Inputs from the
/// adversary carry no payload; the caller supplies one.
pub fn enabled_actions(model: &SymbolicModel, cfg: &SapicConfig) -> Vec<Action> {
    candidate_actions(model, cfg)
        .into_iter()
        .filter(|a| match a {
            Action::AdvInput { .. } => true,
            _ => matches!(step(model, cfg, a), Ok(_) | Err(EngineError::Blocked(_))),
        })
        .collect()
}

/// Syntactically possible actions; adversary I/O only on derivable channels.
pub(crate) fn candidate_actions(model: &SymbolicModel, cfg: &SapicConfig) -> Vec<Action> {
    let ded = cfg.deducer(model);
    let mut out = Vec::new();
    let chan_recipe = |chan: &Term| -> Option<Option<Recipe>> {
        let c = eval_term_partial(model, chan).ok()?.value()?;
        match ded.recipe(&c) {
            Some(r) => Some(Some(r)),
            None if ded.derivable(&c) => Some(None),
            None => None,
        }
    };
    for (i, p) in cfg.procs.iter().enumerate() {
        match &**p {
            Process::Nil => {}
            Process::In { chan, .. } => {
                if let Some(channel) = chan_recipe(chan) {
                    out.push(Action::AdvInput { proc: i, channel, payload: None });
                }
            }
            Process::Out { chan, .. } => {
                if let Some(channel) = chan_recipe(chan) {
                    out.push(Action::AdvOutput { proc: i, channel });
                }
                for (j, q) in cfg.procs.iter().enumerate() {
                    if matches!(&**q, Process::In { .. }) {
                        out.push(Action::Comm { sender: i, receiver: j });
                    }
                }
            }
            _ => out.push(Action::Schedule { proc: i }),
        }
    }
    out
}

/// Failure of a scripted run.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("step {index} ({action}): {source}")]
pub struct RunError {
    pub index: usize,
    pub action: Action,
    #[source]
    pub source: EngineError,
}

/// Folds `step` over a script from the start configuration of `p0`.
pub fn run(
    model: &SymbolicModel,
    p0: &Proc,
    script: &[Action],
    opts: StepOptions,
) -> Result<(SapicConfig, Trace), RunError> {
    let start = SapicConfig::initial(p0).map_err(|source| RunError {
        index: 0,
        action: script.first().cloned().unwrap_or(Action::Schedule { proc: 0 }),
        source,
    })?;
    run_from(model, start, script, opts)
}

/// Folds `step` over a script from a given configuration.
pub fn run_from(
    model: &SymbolicModel,
    start: SapicConfig,
    script: &[Action],
    opts: StepOptions,
) -> Result<(SapicConfig, Trace), RunError> {
    let mut cfg = start;
    let mut trace = Trace::default();
    for (index, a) in script.iter().enumerate() {
        let (next, st) =
            step_with(model, &cfg, a, opts).map_err(|source| RunError { index, action: a.clone(), source })?;
        cfg = next;
        trace.steps.push(st);
    }
    Ok((cfg, trace))
}

/// The trace produced by a script.
pub fn run_trace(model: &SymbolicModel, p0: &Proc, script: &[Action]) -> Result<Trace, RunError> {
    run(model, p0, script, StepOptions::default()).map(|(_, t)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_sapic;
    use crate::terms::RuleMode;

    fn model() -> SymbolicModel {
        SymbolicModel::pkenc_sig(RuleMode::Sapic)
    }

    fn start(src: &str) -> SapicConfig {
        SapicConfig::initial(&parse_sapic(src).unwrap().process).unwrap()
    }

    fn sched(i: usize) -> Action {
        Action::Schedule { proc: i }
    }

    #[test]
    fn single_restriction_has_one_action() {
        let m = model();
        let cfg = start("new n; out(n)");
        assert_eq!(enabled_actions(&m, &cfg), vec![sched(0)]);
    }

    #[test]
    fn comm_and_output_on_public_channel() {
        let m = model();
        let cfg = start("out(c, 'a') | in(c, x); event A(x)");
        let acts = enabled_actions(&m, &cfg);
        assert!(acts.contains(&Action::Comm { sender: 0, receiver: 1 }));
        assert!(acts.contains(&Action::AdvOutput { proc: 0, channel: Some(Recipe::Handle(0)) }));
        let (c2, st) = step(&m, &cfg, &Action::Comm { sender: 0, receiver: 1 }).unwrap();
        assert_eq!(st.label, Label::Silent);
        let (_, st) = step(&m, &c2, &sched(0)).unwrap();
        assert_eq!(st.label, Label::Events { events: vec![Event::new("A", vec![Term::constant("'a'")])] });
    }

    #[test]
    fn held_lock_disables() {
        let m = model();
        let cfg = start("lock 'm'; 0 | lock 'm'; 0");
        let (c2, _) = step(&m, &cfg, &sched(0)).unwrap();
        assert_eq!(c2.procs.len(), 1);
        assert!(enabled_actions(&m, &c2).is_empty());
        assert!(matches!(step(&m, &c2, &sched(0)), Err(EngineError::NotEnabled { .. })));
    }

    #[test]
    fn insert_lookup_and_replacement() {
        let m = model();
        let cfg = start("insert 's','v1'; insert 's','v2'; lookup 's' as x in event R(x)");
        let (c, t) = run_from(&m, cfg, &[sched(0), sched(0), sched(0), sched(0)], StepOptions::default()).unwrap();
        assert_eq!(t.events(), vec![Event::new("R", vec![Term::constant("'v2'")])]);
        assert_eq!(c.cells.len(), 1);
    }

    #[test]
    fn delete_absent_is_noop() {
        let m = model();
        let cfg = start("delete 's'; event D");
        let (c2, _) = step(&m, &cfg, &sched(0)).unwrap();
        assert!(c2.cells.is_empty());
        assert!(matches!(&*c2.procs[0], Process::Event(..)));
    }

    #[test]
    fn lookup_miss_takes_else_or_blocks() {
        let m = model();
        let cfg = start("lookup 's' as x in event Hit else event Miss");
        let t = run_from(&m, cfg, &[sched(0), sched(0)], StepOptions::default()).unwrap().1;
        assert_eq!(t.events(), vec![Event::new("Miss", vec![])]);
        let cfg = start("lookup 's' as x in event Hit");
        assert!(enabled_actions(&m, &cfg).is_empty());
    }

    #[test]
    fn msr_consumes_and_persists() {
        let m = model();
        let cfg = start("[]-[]->[F('a'), !P('b')]; [F(x), !P(y)]-[E(x, y)]->[G(x)]; [!P(z)]-[]->[]");
        let (c, t) = run_from(&m, cfg, &[sched(0), sched(0), sched(0)], StepOptions::default()).unwrap();
        assert_eq!(t.events(), vec![Event::new("E", vec![Term::constant("'a'"), Term::constant("'b'")])]);
        assert_eq!(c.msstate.len(), 2);
        assert!(c.msstate.iter().any(|f| &*f.symbol == "P" && f.persistent));
    }

    #[test]
    fn replication_keeps_the_bang() {
        let m = model();
        let cfg = start("!(new n; event N(n))");
        let (c, _) = step(&m, &cfg, &sched(0)).unwrap();
        assert_eq!(c.procs.len(), 2);
        assert!(matches!(&*c.procs[1], Process::Repl { copies: 1, .. }));
        let (c, _) = step(&m, &c, &sched(1)).unwrap();
        let (c, _) = step(&m, &c, &sched(0)).unwrap();
        let (c, _) = step(&m, &c, &sched(1)).unwrap();
        assert_eq!(c.knowledge.restricted.len(), 2);
    }

    #[test]
    fn adversary_input_uses_recipes() {
        let m = model();
        let cfg = start("out(c, 'a'); in(c, x); event Got(x)");
        let script = [
            Action::AdvOutput { proc: 0, channel: Some(Recipe::Handle(0)) },
            Action::AdvInput {
                proc: 0,
                channel: Some(Recipe::Handle(0)),
                payload: Some("pair(x_2, x_2)".parse().unwrap()),
            },
            sched(0),
        ];
        let t = run_from(&m, cfg, &script, StepOptions::default()).unwrap().1;
        let a = Term::constant("'a'");
        assert_eq!(t.events(), vec![Event::new("Got", vec![Term::app("pair", vec![a.clone(), a])])]);
    }

    #[test]
    fn run_trace_reports_failing_index() {
        let m = model();
        let p = parse_sapic("event A; 0").unwrap().process;
        assert_eq!(run_trace(&m, &p, &[sched(0)]).unwrap().events(), vec![Event::new("A", vec![])]);
        assert!(run_trace(&m, &p, &[]).unwrap().steps.is_empty());
        let e = run_trace(&m, &p, &[sched(0), sched(0)]).unwrap_err();
        assert_eq!(e.index, 1);
    }

    #[test]
    fn symbolic_inputs_block_decisions() {
        let m = model();
        let cfg = start("in(x); if x = 'a' then event A");
        let (c, _) = step(&m, &cfg, &Action::AdvInput { proc: 0, channel: None, payload: None }).unwrap();
        assert!(c.holes.contains_key("x"));
        assert_eq!(step(&m, &c, &sched(0)).unwrap_err(), EngineError::Blocked(Term::hole("x")));
        let mut map = HashMap::new();
        map.insert(crate::terms::sym("x"), Term::constant("'a'"));
        let c = c.subst_holes(&map);
        let (c, _) = step(&m, &c, &sched(0)).unwrap();
        assert_eq!(step(&m, &c, &sched(0)).unwrap().1.label, Label::Events { events: vec![Event::new("A", vec![])] });
    }
}

//! Bounded Dolev-Yao exploration and trace-property checking.

mod differential;
mod search;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::ControlFlow;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use differential::{differential_statverif, DiffOptions, DiffReport, Unmatched};

use crate::deduction::Recipe;
use crate::sapic::{enabled_actions, step_with, Action, EngineError, SapicConfig, StepOptions, Trace, TraceStep};
use crate::statverif::{constants, secrecy_harness, EncodeError, NOT_SECRET};
use crate::syntax::{print_process, Proc, Process};
use crate::terms::{eval_term, sym, Nonce, Sym, SymbolicModel, Term};
use search::{concretize, io_terms, Found, Goal, Node, Search, Work};

/// Exploration limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bounds {
    /// Steps per run, counting every action.
    pub max_steps: usize,
    /// Copies spawned per replication site, across the whole run.
    pub max_repl_unfold: u32,
    /// Nesting depth of adversary-built messages; knowledge atoms have depth 1.
    pub max_recipe_depth: usize,
    pub max_new_adv_nonces: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { max_steps: 40, max_repl_unfold: 2, max_recipe_depth: 3, max_new_adv_nonces: 1 }
    }
}

/// A trace property to check.
#[derive(Clone)]
pub enum PropertySpec {
    /// No event with this symbol is ever raised.
    Absence(Sym),
    /// Whenever `E(t1, t2)` is raised, `t1` and `t2` are never both derivable.
    NeverBothDerivable(Sym),
    /// Holds on a trace iff the predicate returns true; must be prefix-closed.
    Custom(Arc<dyn Fn(&Trace) -> bool + Send + Sync>),
}

impl PropertySpec {
    pub fn custom(f: impl Fn(&Trace) -> bool + Send + Sync + 'static) -> Self {
        PropertySpec::Custom(Arc::new(f))
    }
}

impl fmt::Debug for PropertySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropertySpec::Absence(e) => write!(f, "absence:{e}"),
            PropertySpec::NeverBothDerivable(e) => write!(f, "exclusive:{e}"),
            PropertySpec::Custom(_) => write!(f, "custom"),
        }
    }
}

impl fmt::Display for PropertySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown property `{0}`: expected absence:<event> or exclusive:<event>")]
pub struct PropertyParseError(pub String);

impl FromStr for PropertySpec {
    type Err = PropertyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PropertyParseError(s.to_string());
        let (kind, ev) = s.split_once(':').ok_or_else(bad)?;
        let ev = ev.trim();
        if ev.is_empty() || !ev.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(bad());
        }
        match kind.trim() {
            "absence" => Ok(PropertySpec::Absence(sym(ev))),
            "exclusive" | "never-both" => Ok(PropertySpec::NeverBothDerivable(sym(ev))),
            _ => Err(bad()),
        }
    }
}

/// A concrete counterexample: a script replayable with `run_trace`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub script: Vec<Action>,
    pub trace: Trace,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// No violation within the bounds; `truncated` if some bound was hit.
    HoldsWithinBounds {
        truncated: bool,
    },
    Violated(Box<Witness>),
}

impl Verdict {
    pub fn is_violated(&self) -> bool {
        matches!(self, Verdict::Violated(_))
    }

    pub fn witness(&self) -> Option<&Witness> {
        match self {
            Verdict::Violated(w) => Some(w),
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::HoldsWithinBounds { truncated: false } => write!(f, "holds within bounds"),
            Verdict::HoldsWithinBounds { truncated: true } => write!(f, "holds within bounds (truncated)"),
            Verdict::Violated(w) => write!(f, "violated: {}", w.reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub verdict: Verdict,
    /// Distinct symbolic states expanded (depends on `jobs`).
    pub states: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    /// Worker threads; results do not depend on this.
    pub jobs: usize,
    pub step: StepOptions,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { jobs: 1, step: StepOptions::default() }
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("counterexample does not replay: {0}")]
    Replay(String),
    #[error("cannot start worker threads: {0}")]
    Pool(String),
}

/// Replication site identity: the body with copy suffixes erased.
pub(crate) fn site_key(body: &Proc) -> u64 {
    let text = print_process(body);
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '#' && chars.peek().is_some_and(char::is_ascii_digit) {
            while chars.peek().is_some_and(char::is_ascii_digit) {
                chars.next();
            }
            continue;
        }
        out.push(c);
    }
    let mut h = DefaultHasher::new();
    out.hash(&mut h);
    h.finish()
}

/// Public constants: quoted constants of the process and nullary constructors.
fn public_constants(model: &SymbolicModel, p: &Process) -> Vec<Term> {
    let mut names = std::collections::HashSet::new();
    constants(p, &mut names);
    let mut names: Vec<Sym> = names.into_iter().collect();
    names.sort();
    let mut out: Vec<Term> = names.iter().map(|n| Term::constant(n)).collect();
    out.extend(model.constructors().filter(|c| c.arity == 0).map(|c| Term::app_sym(c.name.clone(), Vec::new())));
    out
}

/// Checks a trace property of a closed SAPIC process within bounds.
pub fn check(
    model: &SymbolicModel,
    p0: &Proc,
    bounds: Bounds,
    prop: &PropertySpec,
) -> Result<CheckReport, ExploreError> {
    check_with(model, p0, bounds, prop, CheckOptions::default())
}

pub fn check_with(
    model: &SymbolicModel,
    p0: &Proc,
    bounds: Bounds,
    prop: &PropertySpec,
    opts: CheckOptions,
) -> Result<CheckReport, ExploreError> {
    let goal = match prop {
        PropertySpec::Absence(e) => Goal::Absence(e.clone()),
        PropertySpec::NeverBothDerivable(e) => Goal::NeverBoth(e.clone()),
        PropertySpec::Custom(f) => return check_custom(model, p0, bounds, f.as_ref(), opts.step),
    };
    let start = SapicConfig::initial(p0)?;
    let search = Search::new(model, bounds, goal.clone(), opts.step, public_constants(model, p0));
    let (found, states, truncated) = if opts.jobs <= 1 {
        let mut s = search;
        let f = s.run(Work::Visit(Node::root(start)));
        (f, s.states, s.truncated)
    } else {
        parallel(&search, Node::root(start), opts.jobs)?
    };
    let verdict = match found {
        None => Verdict::HoldsWithinBounds { truncated },
        Some(f) => Verdict::Violated(Box::new(witness(model, p0, &goal, f, opts.step)?)),
    };
    Ok(CheckReport { verdict, states })
}

enum Entry {
    Found(Found),
    Work(Work),
}

/// Splits the search tree into an ordered frontier and searches its
/// subtrees concurrently; the first violation in frontier order wins.
fn parallel(search: &Search<'_>, root: Node, jobs: usize) -> Result<(Option<Found>, usize, bool), ExploreError> {
    let mut front = search.fresh();
    let mut entries = vec![Entry::Work(Work::Visit(root))];
    for _ in 0..12 {
        let open = entries.iter().filter(|e| matches!(e, Entry::Work(_))).count();
        if open == 0 || open >= jobs * 8 || matches!(entries.first(), Some(Entry::Found(_))) {
            break;
        }
        let mut next = Vec::new();
        for e in entries {
            match e {
                Entry::Found(f) => next.push(Entry::Found(f)),
                Entry::Work(w) => match front.expand(w) {
                    Ok(children) => next.extend(children.into_iter().map(Entry::Work)),
                    Err(f) => next.push(Entry::Found(f)),
                },
            }
        }
        entries = next;
    }
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| ExploreError::Pool(e.to_string()))?;
    let results: Vec<(Option<Found>, usize, bool)> = pool.install(|| {
        entries
            .into_par_iter()
            .map(|e| match e {
                Entry::Found(f) => (Some(f), 0, false),
                Entry::Work(w) => {
                    let mut s = search.fresh();
                    let f = s.run(w);
                    (f, s.states, s.truncated)
                }
            })
            .collect()
    });
    let mut states = front.states;
    let mut truncated = front.truncated;
    let mut found = None;
    for (f, n, t) in results {
        states += n;
        truncated |= t;
        if found.is_none() {
            found = f;
        }
    }
    Ok((found, states, truncated))
}

/// Turns a symbolic counterexample into concrete recipes and replays it.
fn witness(
    model: &SymbolicModel,
    p0: &Proc,
    goal: &Goal,
    found: Found,
    opts: StepOptions,
) -> Result<Witness, ExploreError> {
    let refined = found.node.refinements();
    let mut cfg = SapicConfig::initial(p0)?;
    let mut script = Vec::new();
    let mut trace = Trace::default();
    for st in found.node.steps() {
        let ded = cfg.deducer(model);
        let recipe = |t: &Term| -> Result<Recipe, ExploreError> {
            let v = concretize(&refined, t);
            ded.recipe(&v).ok_or_else(|| ExploreError::Replay(format!("{v} is not derivable")))
        };
        let action = match &st.action {
            Action::AdvInput { proc, .. } => {
                let (chan, payload) = io_terms(&st);
                let chan = chan.ok_or_else(|| ExploreError::Replay("input without label".into()))?;
                let payload = payload.ok_or_else(|| ExploreError::Replay("input without label".into()))?;
                Action::AdvInput { proc: *proc, channel: Some(recipe(&chan)?), payload: Some(recipe(&payload)?) }
            }
            Action::AdvOutput { proc, .. } => {
                let Some(Process::Out { chan, .. }) = cfg.procs.get(*proc).map(|p| &**p) else {
                    return Err(ExploreError::Replay(format!("process {proc} is not an output")));
                };
                let c = eval_term(model, chan)
                    .map_err(|e| ExploreError::Replay(e.to_string()))?
                    .ok_or_else(|| ExploreError::Replay("channel evaluates to bottom".into()))?;
                Action::AdvOutput { proc: *proc, channel: Some(recipe(&c)?) }
            }
            other => other.clone(),
        };
        drop(ded);
        let (next, done) = step_with(model, &cfg, &action, opts)
            .map_err(|e| ExploreError::Replay(format!("step {}: {e}", script.len())))?;
        cfg = next;
        script.push(action);
        trace.steps.push(done);
    }
    let ok = match goal {
        Goal::Absence(e) => cfg.raised.iter().any(|ev| ev.symbol == *e),
        Goal::NeverBoth(e) => {
            let ded = cfg.deducer(model);
            cfg.raised.iter().any(|ev| {
                ev.symbol == *e
                    && ev.args.len() == 2
                    && ded.recipe(&ev.args[0]).is_some()
                    && ded.recipe(&ev.args[1]).is_some()
            })
        }
    };
    if !ok {
        return Err(ExploreError::Replay(format!("replayed run does not show: {}", found.reason)));
    }
    Ok(Witness { script, trace, reason: found.reason })
}

fn check_custom(
    model: &SymbolicModel,
    p0: &Proc,
    bounds: Bounds,
    pred: &(dyn Fn(&Trace) -> bool + Send + Sync),
    opts: StepOptions,
) -> Result<CheckReport, ExploreError> {
    let mut truncated = false;
    let mut states = 0;
    let mut bad = None;
    explore_each(model, p0, bounds, opts, &mut |t| {
        states += 1;
        truncated |= t.truncated;
        if pred(t) {
            ControlFlow::Continue(())
        } else {
            bad = Some(t.clone());
            ControlFlow::Break(())
        }
    })?;
    let verdict = match bad {
        None => Verdict::HoldsWithinBounds { truncated },
        Some(trace) => Verdict::Violated(Box::new(Witness {
            script: trace.steps.iter().map(|s| s.action.clone()).collect(),
            trace,
            reason: "custom predicate rejects the trace".into(),
        })),
    };
    Ok(CheckReport { verdict, states })
}

/// Secrecy of `secret` in a StatVerif process, through the harness encoding.
pub fn check_secrecy_statverif(
    model: &SymbolicModel,
    p0: &Proc,
    secret: &Term,
    bounds: Bounds,
    opts: CheckOptions,
) -> Result<CheckReport, ExploreError> {
    let harness = secrecy_harness(p0, secret)?;
    check_with(model, &harness, bounds, &PropertySpec::Absence(sym(NOT_SECRET)), opts)
}

/// All runs within bounds, in depth-first order, every prefix included.
pub fn explore(model: &SymbolicModel, p0: &Proc, bounds: Bounds) -> Result<Vec<Trace>, EngineError> {
    let mut out = Vec::new();
    explore_each(model, p0, bounds, StepOptions::default(), &mut |t| {
        out.push(t.clone());
        ControlFlow::Continue(())
    })?;
    Ok(out)
}

/// Streams runs to `visit` in depth-first order until it breaks.
pub fn explore_each(
    model: &SymbolicModel,
    p0: &Proc,
    bounds: Bounds,
    opts: StepOptions,
    visit: &mut dyn FnMut(&Trace) -> ControlFlow<()>,
) -> Result<(), EngineError> {
    let start = SapicConfig::initial(p0)?;
    let en = Enumerator { model, bounds, opts, constants: public_constants(model, p0) };
    let mut trace = Trace::default();
    let _ = en.dfs(&start, &mut trace, &mut BTreeMap::new(), visit);
    Ok(())
}

struct Enumerator<'a> {
    model: &'a SymbolicModel,
    bounds: Bounds,
    opts: StepOptions,
    constants: Vec<Term>,
}

impl Enumerator<'_> {
    fn dfs(
        &self,
        cfg: &SapicConfig,
        trace: &mut Trace,
        repl: &mut BTreeMap<u64, u32>,
        visit: &mut dyn FnMut(&Trace) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        let actions = self.actions(cfg, repl);
        let at_bound = trace.steps.len() >= self.bounds.max_steps;
        trace.truncated = at_bound && !actions.is_empty();
        visit(trace)?;
        if at_bound {
            return ControlFlow::Continue(());
        }
        let mut payloads: Option<Vec<Recipe>> = None;
        for a in actions {
            let expanded = match &a {
                Action::AdvInput { proc, channel, payload: None } => payloads
                    .get_or_insert_with(|| self.recipes(cfg))
                    .iter()
                    .map(|r| Action::AdvInput { proc: *proc, channel: channel.clone(), payload: Some(r.clone()) })
                    .collect(),
                _ => vec![a.clone()],
            };
            for act in expanded {
                let Ok((next, st)) = step_with(self.model, cfg, &act, self.opts) else { continue };
                let site = match (&act, cfg.procs.get(act_proc(&act))) {
                    (Action::Schedule { .. }, Some(p)) => match &**p {
                        Process::Repl { body, .. } => Some(site_key(body)),
                        _ => None,
                    },
                    _ => None,
                };
                if let Some(k) = site {
                    *repl.entry(k).or_default() += 1;
                }
                trace.steps.push(st);
                let r = self.dfs(&next, trace, repl, visit);
                trace.steps.pop();
                if let Some(k) = site {
                    *repl.get_mut(&k).expect("counted") -= 1;
                }
                r?;
            }
        }
        ControlFlow::Continue(())
    }

    fn actions(&self, cfg: &SapicConfig, repl: &BTreeMap<u64, u32>) -> Vec<Action> {
        let procs = &cfg.procs;
        let dup = |i: usize| procs[..i].contains(&procs[i]);
        enabled_actions(self.model, cfg)
            .into_iter()
            .filter(|a| match a {
                Action::Comm { sender, receiver } => !dup(*sender) && !dup(*receiver),
                Action::AdvInput { proc, .. } => !dup(*proc) && self.bounds.max_recipe_depth > 0,
                Action::AdvOutput { proc, .. } => !dup(*proc),
                Action::Schedule { proc } => {
                    !dup(*proc)
                        && match &*procs[*proc] {
                            Process::Repl { body, .. } => {
                                repl.get(&site_key(body)).copied().unwrap_or(0) < self.bounds.max_repl_unfold
                            }
                            _ => true,
                        }
                }
            })
            .collect()
    }

    /// Saturated knowledge, constants and adversary nonces, closed under
    /// constructors up to the recipe depth; one recipe per distinct value.
    fn recipes(&self, cfg: &SapicConfig) -> Vec<Recipe> {
        let depth = self.bounds.max_recipe_depth;
        if depth == 0 {
            return Vec::new();
        }
        let mut seen = HashSet::new();
        let mut all: Vec<(Term, Recipe)> = Vec::new();
        let sat = cfg.saturation(self.model);
        let base = sat
            .items()
            .iter()
            .cloned()
            .chain(self.constants.iter().map(|c| {
                let (f, _) = c.as_app().expect("constant");
                (c.clone(), Recipe::App(f.clone(), Vec::new()))
            }))
            .chain(
                (0..self.bounds.max_new_adv_nonces).map(|i| (Term::nonce(Nonce::adversary(i)), Recipe::AdvNonce(i))),
            );
        for (t, r) in base {
            if seen.insert(t.clone()) {
                all.push((t, r));
            }
        }
        let ctors: Vec<(Sym, usize)> =
            self.model.constructors().filter(|c| c.arity > 0).map(|c| (c.name.clone(), c.arity)).collect();
        let mut level_start = 0;
        for _ in 1..depth {
            let level_end = all.len();
            let mut fresh = Vec::new();
            for (f, n) in &ctors {
                let mut idx = vec![0usize; *n];
                loop {
                    if idx.iter().any(|&i| i >= level_start) {
                        let t = Term::app_sym(f.clone(), idx.iter().map(|&i| all[i].0.clone()).collect());
                        if let Ok(Some(v)) = eval_term(self.model, &t) {
                            if seen.insert(v.clone()) {
                                fresh
                                    .push((v, Recipe::App(f.clone(), idx.iter().map(|&i| all[i].1.clone()).collect())));
                            }
                        }
                    }
                    let mut k = 0;
                    while k < *n {
                        idx[k] += 1;
                        if idx[k] < level_end {
                            break;
                        }
                        idx[k] = 0;
                        k += 1;
                    }
                    if k == *n {
                        break;
                    }
                }
            }
            level_start = level_end;
            all.extend(fresh);
        }
        all.into_iter().map(|(_, r)| r).collect()
    }
}

fn act_proc(a: &Action) -> usize {
    match a {
        Action::Schedule { proc } | Action::AdvInput { proc, .. } | Action::AdvOutput { proc, .. } => *proc,
        Action::Comm { sender, .. } => *sender,
    }
}

/// The steps of a trace, for callers that only need labels.
pub fn labels(t: &Trace) -> Vec<crate::sapic::Label> {
    t.steps.iter().map(|s: &TraceStep| s.label.clone()).collect()
}

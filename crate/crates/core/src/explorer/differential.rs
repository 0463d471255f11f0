//! Differential testing of the StatVerif encoding against the direct semantics.
//!
//! Both graphs are explored breadth-first over concrete adversary choices
//! (every knowledge handle and one adversary nonce as payloads). A direct
//! step must be matched from the encoded configuration by the same action
//! followed by silent steps of the acting process; an encoded step must be
//! completed by silent steps to the encoding of a directly reachable
//! configuration with the same observable labels.

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet, VecDeque};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::Serialize;

use crate::deduction::Recipe;
use crate::sapic::{candidate_actions, flatten, step, Action, Label, SapicConfig};
use crate::statverif::{sv_step, Encoder, StatConfig};
use crate::syntax::{canonical_binders, Proc, Process};
use crate::terms::{SymbolicModel, Term};

use super::{Bounds, ExploreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffOptions {
    /// Configurations explored per side.
    pub max_configs: usize,
    /// Silent steps allowed to complete a simulated step.
    pub max_extension: usize,
    /// Sequential direct steps searched when matching an encoded step.
    pub max_direct_steps: usize,
    /// Mutation for testing the checker: encode without releasing the lock.
    pub drop_unlock: bool,
}

impl Default for DiffOptions {
    fn default() -> Self {
        DiffOptions { max_configs: 200, max_extension: 6, max_direct_steps: 6, drop_unlock: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// A direct step the encoding cannot reproduce.
    StatVerifToSapic,
    /// An encoded step with no direct counterpart.
    SapicToStatVerif,
}

/// An edge of one graph with no matching path in the other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Unmatched {
    pub direction: Direction,
    pub action: Action,
    pub labels: Vec<Label>,
    pub config: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DiffReport {
    pub statverif_configs: usize,
    pub sapic_configs: usize,
    pub edges: usize,
    pub unmatched: Vec<Unmatched>,
}

impl DiffReport {
    pub fn is_clean(&self) -> bool {
        self.unmatched.is_empty()
    }
}

/// Digest of a configuration modulo bound identifiers and process order.
type Canon = u128;

/// Canonical process hashes, memoized by address; the stored `Proc`
/// keeps the address alive.
#[derive(Default)]
struct Canonizer {
    procs: RefCell<HashMap<usize, (Proc, u64)>>,
}

impl Canonizer {
    fn proc(&self, p: &Proc) -> u64 {
        let addr = Arc::as_ptr(p) as usize;
        if let Some((_, h)) = self.procs.borrow().get(&addr) {
            return *h;
        }
        let h = digest(0, &canonical_binders(p));
        self.procs.borrow_mut().insert(addr, (p.clone(), h));
        h
    }

    fn canon(&self, c: &SapicConfig) -> Canon {
        let mut cells: Vec<(u64, u64)> = c.cells.iter().map(|(k, v)| (k.id(), v.id())).collect();
        cells.sort_unstable();
        let mut msstate = c.msstate.clone();
        msstate.sort();
        let mut procs: Vec<u64> = c.procs.iter().map(|p| self.proc(p)).collect();
        procs.sort_unstable();
        let mut locks: Vec<u64> = c.locks.iter().map(Term::id).collect();
        locks.sort_unstable();
        let knowledge: Vec<u64> = c.knowledge.entries().iter().map(Term::id).collect();
        let parts = (cells, msstate, procs, knowledge, &c.knowledge.restricted, locks);
        ((digest(1, &parts) as u128) << 64) | digest(2, &parts) as u128
    }
}

fn digest<T: Hash + ?Sized>(seed: u8, x: &T) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    x.hash(&mut h);
    h.finish()
}

fn observable(l: &Label) -> bool {
    !matches!(l, Label::Silent)
}

fn describe(c: &SapicConfig) -> String {
    c.procs.iter().map(|p| crate::syntax::print_process(p)).collect::<Vec<_>>().join(" | ")
}

/// Concrete variants of candidate actions: inputs get every payload choice,
/// replications stop at the copy bound.
fn expand(actions: Vec<Action>, procs: &[&Proc], knowledge: usize, bounds: &Bounds) -> Vec<Action> {
    let mut payloads: Vec<Recipe> = (0..knowledge).map(Recipe::Handle).collect();
    if bounds.max_new_adv_nonces > 0 {
        payloads.push(Recipe::AdvNonce(0));
    }
    let mut out = Vec::new();
    for a in actions {
        match a {
            Action::AdvInput { proc, channel, payload: None } => {
                for r in &payloads {
                    out.push(Action::AdvInput { proc, channel: channel.clone(), payload: Some(r.clone()) });
                }
            }
            Action::Schedule { proc } => {
                if let Some(Process::Repl { copies, .. }) = procs.get(proc).map(|p| &***p) {
                    if *copies >= bounds.max_repl_unfold {
                        continue;
                    }
                }
                out.push(a);
            }
            other => out.push(other),
        }
    }
    out
}

fn sv_edges(model: &SymbolicModel, o: &StatConfig, bounds: &Bounds) -> Vec<(Action, StatConfig, Vec<Label>)> {
    let procs: Vec<&Proc> = o.procs.iter().map(|(p, _)| p).collect();
    expand(candidate_actions(model, &o.as_sapic()), &procs, o.knowledge.len(), bounds)
        .into_iter()
        .filter_map(|a| {
            let (next, st) = sv_step(model, o, &a).ok()?;
            let labels = if observable(&st.label) { vec![st.label] } else { Vec::new() };
            Some((a, next, labels))
        })
        .collect()
}

fn sapic_edges(model: &SymbolicModel, c: &SapicConfig, bounds: &Bounds) -> Vec<(Action, SapicConfig, Vec<Label>)> {
    let procs: Vec<&Proc> = c.procs.iter().collect();
    expand(candidate_actions(model, c), &procs, c.knowledge.len(), bounds)
        .into_iter()
        .filter_map(|a| {
            let (next, st) = step(model, c, &a).ok()?;
            let labels = if observable(&st.label) { vec![st.label] } else { Vec::new() };
            Some((a, next, labels))
        })
        .collect()
}

type Reach = HashMap<Canon, Vec<(Vec<Label>, StatConfig)>>;

struct Checker<'a> {
    model: &'a SymbolicModel,
    bounds: Bounds,
    opts: DiffOptions,
    enc: Encoder,
    /// Direct configurations reachable from an anchor, keyed by encoding.
    reach: HashMap<(Canon, Vec<Label>), Reach>,
    canon: Canonizer,
    /// Encoded processes by address and lock flag.
    encoded: RefCell<HashMap<(usize, bool), (Proc, Vec<Proc>)>>,
}

impl Checker<'_> {
    fn encode(&self, o: &StatConfig) -> Result<SapicConfig, ExploreError> {
        let mut procs = Vec::new();
        for (p, locked) in &o.procs {
            let key = (Arc::as_ptr(p) as usize, *locked);
            let hit = self.encoded.borrow().get(&key).map(|(_, e)| e.clone());
            let e = match hit {
                Some(e) => e,
                None => {
                    let e = flatten(&self.enc.encode(p, *locked)?);
                    self.encoded.borrow_mut().insert(key, (p.clone(), e.clone()));
                    e
                }
            };
            procs.extend(e);
        }
        let shell = StatConfig { procs: Vec::new(), ..o.clone() };
        let mut c = self.enc.encode_config(&shell)?;
        c.procs = procs;
        if o.procs.iter().any(|(_, b)| *b) {
            c.locks = vec![self.enc.token.clone()];
        }
        Ok(c)
    }

    /// Direct-to-encoded: the same action on the acting process, then its
    /// own silent steps, must reach the encoding of the successor.
    fn forward(&self, o1: &StatConfig, a: &Action, target: &Canon, labels: &[Label]) -> Result<bool, ExploreError> {
        let e1 = self.encode(o1)?;
        let idx = |i: usize| o1.procs[..i].iter().filter(|(p, _)| !p.is_nil()).count();
        let mapped = match a {
            Action::Schedule { proc } => Action::Schedule { proc: idx(*proc) },
            Action::AdvInput { proc, channel, payload } => {
                Action::AdvInput { proc: idx(*proc), channel: channel.clone(), payload: payload.clone() }
            }
            Action::AdvOutput { proc, channel } => Action::AdvOutput { proc: idx(*proc), channel: channel.clone() },
            Action::Comm { sender, receiver } => Action::Comm { sender: idx(*sender), receiver: idx(*receiver) },
        };
        let Ok((e2, st)) = step(self.model, &e1, &mapped) else { return Ok(false) };
        let mut got: Vec<Label> = Vec::new();
        if observable(&st.label) {
            got.push(st.label);
        }
        let lineage = match mapped {
            Action::Comm { .. } => Vec::new(),
            Action::Schedule { proc } | Action::AdvInput { proc, .. } | Action::AdvOutput { proc, .. } => {
                descendants(proc, e1.procs.len(), e2.procs.len())
            }
        };
        let goal = |c: &SapicConfig, got: &[Label]| got == labels && self.canon.canon(c) == *target;
        let viable = |got: &[Label]| labels.starts_with(got);
        Ok(self.extend_lineage(&e2, lineage, &mut got, self.opts.max_extension, &goal, &viable))
    }

    /// Silent steps of the processes in `lineage` and their continuations
    /// until `goal` holds.
    fn extend_lineage(
        &self,
        c: &SapicConfig,
        lineage: Vec<usize>,
        got: &mut Vec<Label>,
        fuel: usize,
        goal: &dyn Fn(&SapicConfig, &[Label]) -> bool,
        viable: &dyn Fn(&[Label]) -> bool,
    ) -> bool {
        if goal(c, got) {
            return true;
        }
        if fuel == 0 || !viable(got) {
            return false;
        }
        for &j in &lineage {
            let Ok((next, st)) = step(self.model, c, &Action::Schedule { proc: j }) else { continue };
            let pushed = observable(&st.label);
            if pushed {
                got.push(st.label);
            }
            let mut lin: Vec<usize> = Vec::new();
            let d = next.procs.len() as isize - c.procs.len() as isize;
            for &k in &lineage {
                if k < j {
                    lin.push(k);
                } else if k > j {
                    lin.push((k as isize + d) as usize);
                }
            }
            lin.extend(descendants(j, c.procs.len(), next.procs.len()));
            lin.sort_unstable();
            let ok = self.extend_lineage(&next, lin, got, fuel - 1, goal, viable);
            if pushed {
                got.pop();
            }
            if ok {
                return true;
            }
        }
        false
    }

    /// Direct configurations within a few steps of `o` whose labels start
    /// with `want` and continue only with events, indexed by encoding.
    fn reachable(&mut self, o: &StatConfig, want: &[Label]) -> Result<&Reach, ExploreError> {
        let key = (self.canon.canon(&self.encode(o)?), want.to_vec());
        if !self.reach.contains_key(&key) {
            let mut map: Reach = HashMap::new();
            let mut seen = HashSet::new();
            let mut frontier = vec![(o.clone(), Vec::<Label>::new())];
            for depth in 0..=self.opts.max_direct_steps {
                let mut next = Vec::new();
                for (c, ls) in frontier {
                    let k = self.canon.canon(&self.encode(&c)?);
                    if !seen.insert((k, ls.clone())) {
                        continue;
                    }
                    map.entry(k).or_default().push((ls.clone(), c.clone()));
                    if depth < self.opts.max_direct_steps {
                        for (_, c2, l2) in sv_edges(self.model, &c, &self.bounds) {
                            let mut ls2 = ls.clone();
                            ls2.extend(l2);
                            let fits = ls2.iter().enumerate().all(|(i, l)| match want.get(i) {
                                Some(w) => w == l,
                                None => matches!(l, Label::Events { .. }),
                            });
                            if fits {
                                next.push((c2, ls2));
                            }
                        }
                    }
                }
                frontier = next;
                if seen.len() > 4 * self.opts.max_configs {
                    break;
                }
            }
            self.reach.insert(key.clone(), map);
        }
        Ok(&self.reach[&key])
    }

    /// Encoded-to-direct: silent steps of any process complete `c` to the
    /// encoding of a configuration reachable from the anchor with `labels`.
    fn complete(
        &self,
        reach: &Reach,
        c: &SapicConfig,
        labels: &mut Vec<Label>,
        fuel: usize,
        seen: &mut HashSet<(Canon, Vec<Label>)>,
    ) -> Option<Canon> {
        let k = self.canon.canon(c);
        if let Some(ls) = reach.get(&k) {
            if ls.iter().any(|(l, _)| l == labels) {
                return Some(k);
            }
        }
        if fuel == 0 || !seen.insert((k, labels.clone())) {
            return None;
        }
        for j in 0..c.procs.len() {
            let Ok((next, st)) = step(self.model, c, &Action::Schedule { proc: j }) else { continue };
            let pushed = observable(&st.label);
            if pushed {
                labels.push(st.label);
            }
            let r = self.complete(reach, &next, labels, fuel - 1, seen);
            if pushed {
                labels.pop();
            }
            if r.is_some() {
                return r;
            }
        }
        None
    }
}

/// Indices of the continuations replacing process `j` after a step.
fn descendants(j: usize, before: usize, after: usize) -> Vec<usize> {
    let n = after as isize - before as isize + 1;
    (0..n.max(0) as usize).map(|k| j + k).collect()
}

/// Explores both semantics of a StatVerif process and reports unmatched edges.
pub fn differential_statverif(
    model: &SymbolicModel,
    p0: &Proc,
    bounds: Bounds,
    opts: DiffOptions,
) -> Result<DiffReport, ExploreError> {
    let o0 = StatConfig::initial(p0)?;
    let mut enc = Encoder::for_process(p0);
    enc.drop_unlock = opts.drop_unlock;
    let mut ck = Checker {
        model,
        bounds,
        opts,
        enc,
        reach: HashMap::new(),
        canon: Canonizer::default(),
        encoded: RefCell::default(),
    };
    let mut report = DiffReport::default();

    let mut queue = VecDeque::from([o0.clone()]);
    let mut seen = HashSet::new();
    while let Some(o1) = queue.pop_front() {
        let e1 = ck.encode(&o1)?;
        let k1 = ck.canon.canon(&e1);
        if !seen.insert(k1) {
            continue;
        }
        if seen.len() > opts.max_configs {
            break;
        }
        for (a, o2, labels) in sv_edges(model, &o1, &bounds) {
            report.edges += 1;
            let target = ck.canon.canon(&ck.encode(&o2)?);
            if !ck.forward(&o1, &a, &target, &labels)? {
                report.unmatched.push(Unmatched {
                    direction: Direction::StatVerifToSapic,
                    action: a,
                    labels,
                    config: describe(&e1),
                });
            }
            queue.push_back(o2);
        }
    }
    report.statverif_configs = seen.len().min(opts.max_configs);

    // Encoded side: each entry is a configuration, the direct configuration
    // it started from, and the observable labels emitted since.
    let e0 = ck.encode(&o0)?;
    let mut queue = VecDeque::from([(e0, o0, Vec::<Label>::new())]);
    let mut seen = HashSet::new();
    while let Some((c, anchor, pending)) = queue.pop_front() {
        if !seen.insert((ck.canon.canon(&c), pending.clone())) {
            continue;
        }
        if seen.len() > opts.max_configs {
            break;
        }
        for (a, c2, l) in sapic_edges(model, &c, &bounds) {
            report.edges += 1;
            let mut labels = pending.clone();
            labels.extend(l);
            let reach = ck.reachable(&anchor, &labels)?.clone();
            let k2 = ck.canon.canon(&c2);
            if let Some((_, o2)) = reach.get(&k2).and_then(|ls| ls.iter().find(|(l, _)| *l == labels)) {
                queue.push_back((c2, o2.clone(), Vec::new()));
                continue;
            }
            let lineage = match a {
                Action::Comm { sender, receiver } => {
                    let mut v = vec![sender, receiver];
                    v.sort_unstable();
                    v.dedup();
                    v
                }
                Action::Schedule { proc } | Action::AdvInput { proc, .. } | Action::AdvOutput { proc, .. } => {
                    descendants(proc, c.procs.len(), c2.procs.len())
                }
            };
            let goal = |x: &SapicConfig, got: &[Label]| {
                reach.get(&ck.canon.canon(x)).is_some_and(|ls| ls.iter().any(|(l, _)| l.as_slice() == got))
            };
            let mut tmp = labels.clone();
            let done = ck.extend_lineage(&c2, lineage, &mut tmp, opts.max_extension, &goal, &|_| true)
                || ck.complete(&reach, &c2, &mut tmp, opts.max_extension, &mut HashSet::new()).is_some();
            match done {
                true => queue.push_back((c2, anchor.clone(), labels)),
                false => report.unmatched.push(Unmatched {
                    direction: Direction::SapicToStatVerif,
                    action: a,
                    labels,
                    config: describe(&c),
                }),
            }
        }
    }
    report.sapic_configs = seen.len().min(opts.max_configs);
    Ok(report)
}

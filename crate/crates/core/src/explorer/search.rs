//! Depth-first search with lazily refined adversary inputs.
//!
//! An adversary input is first received as a hole. When a decision depends
//! on a hole, the node is split over the possible refinements: atoms the
//! adversary knew at input time, public constants, adversary nonces, and
//! constructor applications over fresh child holes (bounded by the recipe
//! depth). Steps that cannot disable or be disabled by other steps are taken
//! eagerly in process order.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use crate::deduction::{saturation_blocker, Deducer, Knowledge};
use crate::sapic::{step_with, Action, EngineError, HoleInfo, Label, SapicConfig, StepOptions, TraceStep};
use crate::syntax::{Event, Proc, Process};
use crate::terms::{eval_term_partial, sym, Nonce, Reduct, Sym, SymbolicModel, Term};

use super::{site_key, Bounds};

/// The property forms the symbolic search decides.
#[derive(Debug, Clone)]
pub(super) enum Goal {
    Absence(Sym),
    NeverBoth(Sym),
}

struct Link<T> {
    item: T,
    prev: Option<Arc<Link<T>>>,
}

fn collect<T: Clone>(mut l: &Option<Arc<Link<T>>>) -> Vec<T> {
    let mut out = Vec::new();
    while let Some(n) = l {
        out.push(n.item.clone());
        l = &n.prev;
    }
    out.reverse();
    out
}

#[derive(Clone)]
pub(super) struct Node {
    pub(super) cfg: SapicConfig,
    trace: Option<Arc<Link<TraceStep>>>,
    depth: usize,
    refined: Option<Arc<Link<(Sym, Term)>>>,
    repl: Arc<BTreeMap<u64, u32>>,
    adv_nonces: usize,
}

impl Node {
    pub(super) fn root(cfg: SapicConfig) -> Node {
        Node { cfg, trace: None, depth: 0, refined: None, repl: Arc::default(), adv_nonces: 0 }
    }

    fn advance(&self, cfg: SapicConfig, st: TraceStep) -> Node {
        Node {
            cfg,
            trace: Some(Arc::new(Link { item: st, prev: self.trace.clone() })),
            depth: self.depth + 1,
            refined: self.refined.clone(),
            repl: self.repl.clone(),
            adv_nonces: self.adv_nonces,
        }
    }

    pub(super) fn steps(&self) -> Vec<TraceStep> {
        collect(&self.trace)
    }

    /// Maps every hole ever refined on this branch to its refinement.
    pub(super) fn refinements(&self) -> HashMap<Sym, Term> {
        collect(&self.refined).into_iter().collect()
    }
}

/// A violating node and a human-readable reason.
pub(super) struct Found {
    pub(super) node: Node,
    pub(super) reason: String,
}

pub(super) enum Work {
    Visit(Node),
    Try(Node, Action),
}

enum Expansion {
    Found(Found),
    Children(Option<u128>, Vec<Work>),
}

enum PropState {
    Ok,
    Violated(String),
    Blocked(Term),
}

#[derive(Clone)]
pub(super) struct Search<'a> {
    model: &'a SymbolicModel,
    bounds: Bounds,
    goal: Goal,
    opts: StepOptions,
    constants: Arc<Vec<Term>>,
    ctors: Arc<Vec<(Sym, usize)>>,
    basis: HashMap<u64, Arc<Vec<Term>>>,
    visited: HashMap<u128, bool>,
    /// Hashes of process trees and replication sites, keyed by address.
    /// The stored `Proc` keeps the address from being reused.
    proc_hashes: HashMap<usize, (Proc, u64)>,
    sites: HashMap<usize, (Proc, u64)>,
    pub(super) states: usize,
    pub(super) truncated: bool,
}

fn hash_with<T: Hash + ?Sized>(seed: u8, x: &T) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    x.hash(&mut h);
    h.finish()
}

impl<'a> Search<'a> {
    pub(super) fn new(
        model: &'a SymbolicModel,
        bounds: Bounds,
        goal: Goal,
        opts: StepOptions,
        constants: Vec<Term>,
    ) -> Self {
        let ctors = model.constructors().filter(|c| c.arity > 0).map(|c| (c.name.clone(), c.arity)).collect();
        Search {
            model,
            bounds,
            goal,
            opts,
            constants: Arc::new(constants),
            ctors: Arc::new(ctors),
            basis: HashMap::new(),
            visited: HashMap::new(),
            proc_hashes: HashMap::new(),
            sites: HashMap::new(),
            states: 0,
            truncated: false,
        }
    }

    /// A copy sharing configuration but none of the search state.
    pub(super) fn fresh(&self) -> Self {
        Search {
            basis: HashMap::new(),
            visited: HashMap::new(),
            proc_hashes: HashMap::new(),
            sites: HashMap::new(),
            states: 0,
            truncated: false,
            ..self.clone()
        }
    }

    pub(super) fn run(&mut self, w: Work) -> Option<Found> {
        match w {
            Work::Visit(node) => self.visit(node),
            Work::Try(node, action) => self.try_action(node, action),
        }
    }

    /// Expands a work item by one level without recursing.
    pub(super) fn expand(&mut self, w: Work) -> Result<Vec<Work>, Found> {
        match w {
            Work::Visit(node) => match self.expand_visit(node) {
                Expansion::Found(f) => Err(f),
                Expansion::Children(_, c) => Ok(c),
            },
            Work::Try(node, action) => Ok(self.try_once(node, action)),
        }
    }

    fn visit(&mut self, node: Node) -> Option<Found> {
        let outer = std::mem::replace(&mut self.truncated, false);
        match self.expand_visit(node) {
            Expansion::Found(f) => Some(f),
            Expansion::Children(key, children) => {
                for c in children {
                    if let Some(f) = self.run(c) {
                        return Some(f);
                    }
                }
                if let Some(k) = key {
                    self.visited.insert(k, self.truncated);
                }
                self.truncated |= outer;
                None
            }
        }
    }

    fn try_action(&mut self, node: Node, action: Action) -> Option<Found> {
        for w in self.try_once(node, action) {
            if let Some(f) = self.run(w) {
                return Some(f);
            }
        }
        None
    }

    fn try_once(&mut self, node: Node, action: Action) -> Vec<Work> {
        match step_with(self.model, &node.cfg, &action, self.opts) {
            Ok((cfg, st)) => vec![Work::Visit(node.advance(cfg, st))],
            Err(EngineError::Blocked(h)) => {
                self.refine(&node, &h).into_iter().map(|c| Work::Try(c, action.clone())).collect()
            }
            Err(_) => Vec::new(),
        }
    }

    fn expand_visit(&mut self, mut node: Node) -> Expansion {
        loop {
            match self.eager_step(&node) {
                Eager::Done => break,
                Eager::Stepped(n) => node = n,
                Eager::Blocked(h) => return self.split(&node, &h),
            }
        }
        match self.property(&node) {
            PropState::Violated(reason) => return Expansion::Found(Found { node, reason }),
            PropState::Blocked(h) => return self.split(&node, &h),
            PropState::Ok => {}
        }
        let remaining = self.bounds.max_steps.saturating_sub(node.depth);
        let key = self.state_key(&node, remaining);
        if let Some(&t) = self.visited.get(&key) {
            self.truncated |= t;
            return Expansion::Children(None, Vec::new());
        }
        self.states += 1;
        let actions = self.interleavings(&node);
        if remaining == 0 {
            if !actions.is_empty() {
                self.truncated = true;
            }
            return Expansion::Children(Some(key), Vec::new());
        }
        Expansion::Children(Some(key), actions.into_iter().map(|a| Work::Try(node.clone(), a)).collect())
    }

    fn split(&mut self, node: &Node, h: &Term) -> Expansion {
        Expansion::Children(None, self.refine(node, h).into_iter().map(Work::Visit).collect())
    }

    fn value(&self, t: &Term) -> Result<Option<Term>, Term> {
        match eval_term_partial(self.model, t) {
            Ok(Reduct::Value(v)) => Ok(Some(v)),
            Ok(Reduct::Blocked(h)) => Err(h),
            _ => Ok(None),
        }
    }

    /// Takes the first eagerly executable step, if any.
    fn eager_step(&mut self, node: &Node) -> Eager {
        let ded = node.cfg.deducer(self.model);
        for (i, p) in node.cfg.procs.iter().enumerate() {
            let (action, site) = match &**p {
                Process::New(..)
                | Process::Let { .. }
                | Process::If { .. }
                | Process::Event(..)
                | Process::Unlock(..) => (Action::Schedule { proc: i }, None),
                Process::Out { chan, .. } => match self.value(chan) {
                    Ok(Some(c)) if ded.derivable(&c) => (Action::AdvOutput { proc: i, channel: None }, None),
                    Ok(_) => continue,
                    Err(h) => return Eager::Blocked(h),
                },
                Process::Repl { body, .. } => {
                    let k = self.site(body);
                    if node.repl.get(&k).copied().unwrap_or(0) >= self.bounds.max_repl_unfold {
                        self.truncated = true;
                        continue;
                    }
                    (Action::Schedule { proc: i }, Some(k))
                }
                _ => continue,
            };
            if node.depth >= self.bounds.max_steps {
                self.truncated = true;
                return Eager::Done;
            }
            match step_with(self.model, &node.cfg, &action, self.opts) {
                Ok((cfg, st)) => {
                    let mut next = node.advance(cfg, st);
                    if let Some(k) = site {
                        *Arc::make_mut(&mut next.repl).entry(k).or_default() += 1;
                    }
                    return Eager::Stepped(next);
                }
                Err(EngineError::Blocked(h)) => return Eager::Blocked(h),
                Err(_) => continue,
            }
        }
        Eager::Done
    }

    /// Steps whose relative order matters, in process order. Identical
    /// sibling processes contribute only their first occurrence.
    fn interleavings(&self, node: &Node) -> Vec<Action> {
        let procs = &node.cfg.procs;
        let first: Vec<bool> = (0..procs.len()).map(|i| !procs[..i].contains(&procs[i])).collect();
        let ded = node.cfg.deducer(self.model);
        let chan_public = |chan: &Term| match self.value(chan) {
            Ok(Some(c)) => Some(ded.derivable(&c)),
            Ok(None) => None,
            Err(_) => Some(true),
        };
        let mut out = Vec::new();
        for (i, p) in procs.iter().enumerate() {
            if !first[i] {
                continue;
            }
            match &**p {
                Process::In { chan, .. } => {
                    if chan_public(chan) == Some(true) && self.bounds.max_recipe_depth > 0 {
                        out.push(Action::AdvInput { proc: i, channel: None, payload: None });
                    }
                }
                Process::Out { chan, .. } => {
                    if chan_public(chan) == Some(false) {
                        for (j, q) in procs.iter().enumerate() {
                            if first[j] && matches!(&**q, Process::In { .. }) {
                                out.push(Action::Comm { sender: i, receiver: j });
                            }
                        }
                    }
                }
                Process::Insert { .. }
                | Process::Delete { .. }
                | Process::Lookup { .. }
                | Process::Lock(..)
                | Process::Msr { .. } => out.push(Action::Schedule { proc: i }),
                _ => {}
            }
        }
        out
    }

    fn property(&self, node: &Node) -> PropState {
        match &self.goal {
            Goal::Absence(e) => match node.cfg.raised.iter().find(|ev| ev.symbol == *e) {
                Some(ev) => PropState::Violated(format!("event {ev} raised")),
                None => PropState::Ok,
            },
            Goal::NeverBoth(e) => {
                let marked: Vec<&Event> =
                    node.cfg.raised.iter().filter(|ev| ev.symbol == *e && ev.args.len() == 2).collect();
                if marked.is_empty() {
                    return PropState::Ok;
                }
                let ded = node.cfg.deducer(self.model);
                for ev in &marked {
                    if ded.derivable(&ev.args[0]) && ded.derivable(&ev.args[1]) {
                        return PropState::Violated(format!(
                            "{ev} raised and both {} and {} are derivable",
                            ev.args[0], ev.args[1]
                        ));
                    }
                }
                match saturation_blocker(self.model, ded.saturation()) {
                    Some(h) => PropState::Blocked(h),
                    None => PropState::Ok,
                }
            }
        }
    }

    fn basis(&mut self, k: &Knowledge, avail: usize) -> Arc<Vec<Term>> {
        let prefix = &k.entries()[..avail.min(k.len())];
        let key = hash_with(0, &prefix.iter().map(Term::id).collect::<Vec<_>>());
        if let Some(b) = self.basis.get(&key) {
            return b.clone();
        }
        let b = Arc::new(Deducer::new(self.model, &Knowledge::from_terms(prefix.to_vec())).basis());
        self.basis.insert(key, b.clone());
        b
    }

    /// The children of `node` obtained by refining hole `h` one level.
    fn refine(&mut self, node: &Node, h: &Term) -> Vec<Node> {
        let Some(name) = h.as_hole().cloned() else { return Vec::new() };
        let Some(info) = node.cfg.holes.get(&name).copied() else { return Vec::new() };
        let mut options: Vec<(Term, usize, Vec<(Sym, HoleInfo)>)> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut atom = |t: Term, nonces: usize, opts: &mut Vec<_>| {
            if seen.insert(t.clone()) {
                opts.push((t, nonces, Vec::new()));
            }
        };
        for t in self.basis(&node.cfg.knowledge, info.avail).iter() {
            atom(t.clone(), node.adv_nonces, &mut options);
        }
        for t in self.constants.iter() {
            atom(t.clone(), node.adv_nonces, &mut options);
        }
        let fresh = (node.adv_nonces < self.bounds.max_new_adv_nonces) as usize;
        for i in 0..node.adv_nonces + fresh {
            atom(Term::nonce(Nonce::adversary(i)), node.adv_nonces.max(i + 1), &mut options);
        }
        if info.depth < self.bounds.max_recipe_depth {
            for (f, n) in self.ctors.iter() {
                let kids: Vec<(Sym, HoleInfo)> = (0..*n)
                    .map(|j| (sym(&format!("{name}.{j}")), HoleInfo { avail: info.avail, depth: info.depth + 1 }))
                    .collect();
                let t = Term::app_sym(f.clone(), kids.iter().map(|(k, _)| Term::hole(k)).collect());
                options.push((t, node.adv_nonces, kids));
            }
        }
        let touched: Vec<bool> = node
            .cfg
            .procs
            .iter()
            .map(|p| {
                let mut hs = Vec::new();
                p.holes(&mut hs);
                hs.contains(&name)
            })
            .collect();
        options
            .into_iter()
            .map(|(t, nonces, kids)| {
                let mut map = HashMap::new();
                map.insert(name.clone(), t.clone());
                let mut cfg = node.cfg.subst_holes_in(&map, &touched);
                cfg.holes.extend(kids);
                Node {
                    cfg,
                    trace: node.trace.clone(),
                    depth: node.depth,
                    refined: Some(Arc::new(Link { item: (name.clone(), t), prev: node.refined.clone() })),
                    repl: node.repl.clone(),
                    adv_nonces: nonces,
                }
            })
            .collect()
    }

    /// Identifies nodes with equal futures under the remaining budget.
    fn site(&mut self, body: &Proc) -> u64 {
        let addr = Arc::as_ptr(body) as usize;
        self.sites.entry(addr).or_insert_with(|| (body.clone(), site_key(body))).1
    }

    fn proc_hash(&mut self, p: &Proc) -> u64 {
        let addr = Arc::as_ptr(p) as usize;
        self.proc_hashes.entry(addr).or_insert_with(|| (p.clone(), hash_with(1, &**p))).1
    }

    fn state_key(&mut self, node: &Node, remaining: usize) -> u128 {
        let c = &node.cfg;
        let mut procs: Vec<u64> = c.procs.iter().map(|p| self.proc_hash(p)).collect();
        procs.sort_unstable();
        let mut cells: Vec<(u64, u64)> = c.cells.iter().map(|(k, v)| (k.id(), v.id())).collect();
        cells.sort_unstable();
        let mut know: Vec<u64> = c.knowledge.entries().iter().map(Term::id).collect();
        let holes: Vec<(&Sym, usize, u64)> = c
            .holes
            .iter()
            .map(|(h, i)| {
                let mut pre = know[..i.avail.min(know.len())].to_vec();
                pre.sort_unstable();
                (h, i.depth, hash_with(2, &pre))
            })
            .collect();
        know.sort_unstable();
        let mut locks: Vec<u64> = c.locks.iter().map(Term::id).collect();
        locks.sort_unstable();
        let mut marks: Vec<Vec<u64>> = match &self.goal {
            Goal::NeverBoth(e) => {
                c.raised.iter().filter(|ev| ev.symbol == *e).map(|ev| ev.args.iter().map(Term::id).collect()).collect()
            }
            Goal::Absence(_) => Vec::new(),
        };
        marks.sort_unstable();
        let msstate: Vec<(&Sym, bool, Vec<u64>)> =
            c.msstate.iter().map(|f| (&f.symbol, f.persistent, f.args.iter().map(Term::id).collect())).collect();
        let parts = (procs, cells, know, holes, locks, marks, msstate, &*node.repl, node.adv_nonces, remaining);
        ((hash_with(3, &parts) as u128) << 64) | hash_with(4, &parts) as u128
    }
}

enum Eager {
    Done,
    Stepped(Node),
    Blocked(Term),
}

/// Resolves refinements transitively; unrefined holes become `nE_1`.
pub(super) fn concretize(refined: &HashMap<Sym, Term>, t: &Term) -> Term {
    let mut cur = t.clone();
    loop {
        let next = cur.subst_holes(refined);
        if next == cur {
            break;
        }
        cur = next;
    }
    let mut left = Vec::new();
    cur.holes(&mut left);
    if left.is_empty() {
        return cur;
    }
    let filler = Term::nonce(Nonce::adversary(0));
    let map: HashMap<Sym, Term> = left.into_iter().map(|h| (h, filler.clone())).collect();
    cur.subst_holes(&map)
}

/// The payload and channel an adversary step used, for witness replay.
pub(super) fn io_terms(st: &TraceStep) -> (Option<Term>, Option<Term>) {
    match &st.label {
        Label::Input { channel, payload } => (Some(channel.clone()), Some(payload.clone())),
        _ => (None, None),
    }
}

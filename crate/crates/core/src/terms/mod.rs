//! Interned terms over constructors, destructors, nonces and variables.

mod eval;
mod model;

pub use eval::{eval_destructor, eval_term, match_term, matches_rule, terms_equal, MatchOutcome, Reduct};
pub(crate) use eval::{eval_term_partial, grammar_check, try_apply_destructor};
pub use model::{
    parse_model, DestructorRule, FuncKind, FuncSymbol, Grammar, RuleMode, SymbolicModel, DEFAULT_CHANNEL, EQUAL,
};

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, LazyLock, Mutex};

use thiserror::Error;

/// Shared identifier.
pub type Sym = Arc<str>;

pub fn sym(s: &str) -> Sym {
    Arc::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum NonceSort {
    Protocol,
    Adversary,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Nonce {
    pub name: Sym,
    pub sort: NonceSort,
}

impl Nonce {
    pub fn protocol(name: &str) -> Self {
        Nonce { name: sym(name), sort: NonceSort::Protocol }
    }

    /// The `i`-th adversary nonce (0-based), printed `nE_{i+1}`.
    pub fn adversary(i: usize) -> Self {
        Nonce { name: sym(&format!("nE_{}", i + 1)), sort: NonceSort::Adversary }
    }

    pub fn is_adversary(&self) -> bool {
        self.sort == NonceSort::Adversary
    }

    /// Index of an adversary nonce, if this is one.
    pub fn adversary_index(&self) -> Option<usize> {
        if !self.is_adversary() {
            return None;
        }
        self.name.strip_prefix("nE_")?.parse::<usize>().ok()?.checked_sub(1)
    }
}

static NONCE_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Returns a nonce never returned before in this process.
pub fn fresh_nonce(sort: NonceSort) -> Nonce {
    let id = NONCE_COUNTER.fetch_add(1, AtomicOrdering::Relaxed);
    let name = match sort {
        NonceSort::Protocol => format!("n~{id}"),
        NonceSort::Adversary => format!("nE~{id}"),
    };
    Nonce { name: sym(&name), sort }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TermKind {
    Var(Sym),
    /// A π-calculus name, replaced by a nonce once the process runs.
    Name(Sym),
    Nonce(Nonce),
    App(Sym, Vec<Term>),
    /// Symbolic adversary input awaiting refinement by the explorer.
    Hole(Sym),
}

const HAS_VAR: u8 = 1;
const HAS_NAME: u8 = 2;
const HAS_HOLE: u8 = 4;
const HAS_NONCE: u8 = 8;

struct Node {
    kind: TermKind,
    id: u64,
    flags: u8,
    size: u32,
    depth: u32,
}

/// Hash-consed term handle; equality and hashing are O(1).
#[derive(Clone)]
pub struct Term(Arc<Node>);

const SHARDS: usize = 32;

struct Interner {
    shards: Vec<Mutex<HashMap<TermKind, Term>>>,
    next: AtomicU64,
}

static INTERNER: LazyLock<Interner> = LazyLock::new(|| Interner {
    shards: (0..SHARDS).map(|_| Mutex::new(HashMap::new())).collect(),
    next: AtomicU64::new(0),
});

fn intern(kind: TermKind) -> Term {
    let mut h = DefaultHasher::new();
    kind.hash(&mut h);
    let shard = &INTERNER.shards[(h.finish() as usize) % SHARDS];
    let mut map = shard.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(t) = map.get(&kind) {
        return t.clone();
    }
    let (flags, size, depth) = match &kind {
        TermKind::Var(_) => (HAS_VAR, 1, 1),
        TermKind::Name(_) => (HAS_NAME, 1, 1),
        TermKind::Nonce(_) => (HAS_NONCE, 1, 1),
        TermKind::Hole(_) => (HAS_HOLE, 1, 1),
        TermKind::App(_, args) => {
            let mut flags = 0;
            let mut size = 1u32;
            let mut depth = 0u32;
            for a in args {
                flags |= a.0.flags;
                size = size.saturating_add(a.0.size);
                depth = depth.max(a.0.depth);
            }
            (flags, size, depth + 1)
        }
    };
    let id = INTERNER.next.fetch_add(1, AtomicOrdering::Relaxed);
    let t = Term(Arc::new(Node { kind: kind.clone(), id, flags, size, depth }));
    map.insert(kind, t.clone());
    t
}

impl PartialEq for Term {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Eq for Term {}

impl Hash for Term {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.id.hash(state)
    }
}

fn kind_rank(k: &TermKind) -> u8 {
    match k {
        TermKind::Var(_) => 0,
        TermKind::Name(_) => 1,
        TermKind::Nonce(_) => 2,
        TermKind::App(..) => 3,
        TermKind::Hole(_) => 4,
    }
}

impl Ord for Term {
    fn cmp(&self, other: &Self) -> Ordering {
        if self == other {
            return Ordering::Equal;
        }
        match (self.kind(), other.kind()) {
            (TermKind::Var(a), TermKind::Var(b))
            | (TermKind::Name(a), TermKind::Name(b))
            | (TermKind::Hole(a), TermKind::Hole(b)) => a.cmp(b),
            (TermKind::Nonce(a), TermKind::Nonce(b)) => a.cmp(b),
            (TermKind::App(f, xs), TermKind::App(g, ys)) => f.cmp(g).then_with(|| xs.cmp(ys)),
            (a, b) => kind_rank(a).cmp(&kind_rank(b)),
        }
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Term {
    pub fn var(name: &str) -> Term {
        intern(TermKind::Var(sym(name)))
    }

    pub fn var_sym(name: Sym) -> Term {
        intern(TermKind::Var(name))
    }

    pub fn name(name: &str) -> Term {
        intern(TermKind::Name(sym(name)))
    }

    pub fn name_sym(name: Sym) -> Term {
        intern(TermKind::Name(name))
    }

    pub fn nonce(n: Nonce) -> Term {
        intern(TermKind::Nonce(n))
    }

    pub fn app(f: &str, args: Vec<Term>) -> Term {
        intern(TermKind::App(sym(f), args))
    }

    pub fn app_sym(f: Sym, args: Vec<Term>) -> Term {
        intern(TermKind::App(f, args))
    }

    pub fn constant(f: &str) -> Term {
        Term::app(f, Vec::new())
    }

    pub fn hole(name: &str) -> Term {
        intern(TermKind::Hole(sym(name)))
    }

    pub fn kind(&self) -> &TermKind {
        &self.0.kind
    }

    /// Interning id; stable for the lifetime of the process.
    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn size(&self) -> usize {
        self.0.size as usize
    }

    pub fn depth(&self) -> usize {
        self.0.depth as usize
    }

    pub fn has_vars(&self) -> bool {
        self.0.flags & HAS_VAR != 0
    }

    pub fn has_names(&self) -> bool {
        self.0.flags & HAS_NAME != 0
    }

    pub fn has_holes(&self) -> bool {
        self.0.flags & HAS_HOLE != 0
    }

    pub fn has_nonces(&self) -> bool {
        self.0.flags & HAS_NONCE != 0
    }

    /// No variables and no unresolved π-names.
    pub fn is_ground(&self) -> bool {
        self.0.flags & (HAS_VAR | HAS_NAME) == 0
    }

    pub fn as_var(&self) -> Option<&Sym> {
        match self.kind() {
            TermKind::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_nonce(&self) -> Option<&Nonce> {
        match self.kind() {
            TermKind::Nonce(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_hole(&self) -> Option<&Sym> {
        match self.kind() {
            TermKind::Hole(h) => Some(h),
            _ => None,
        }
    }

    pub fn as_app(&self) -> Option<(&Sym, &[Term])> {
        match self.kind() {
            TermKind::App(f, args) => Some((f, args)),
            _ => None,
        }
    }

    pub fn head(&self) -> Option<&Sym> {
        self.as_app().map(|(f, _)| f)
    }

    pub fn args(&self) -> &[Term] {
        match self.kind() {
            TermKind::App(_, args) => args,
            _ => &[],
        }
    }

    /// Rebuilds the term, replacing every subterm for which `f` returns a value.
    /// Subterms carrying none of the leaf kinds in `mask` are skipped.
    fn replace_masked(&self, mask: u8, f: &mut impl FnMut(&Term) -> Option<Term>) -> Term {
        if self.0.flags & mask == 0 {
            return self.clone();
        }
        if let Some(t) = f(self) {
            return t;
        }
        match self.kind() {
            TermKind::App(g, args) => {
                let new: Vec<Term> = args.iter().map(|a| a.replace_masked(mask, f)).collect();
                if new.iter().zip(args).all(|(a, b)| a == b) {
                    self.clone()
                } else {
                    Term::app_sym(g.clone(), new)
                }
            }
            _ => self.clone(),
        }
    }

    pub fn subst_vars(&self, map: &HashMap<Sym, Term>) -> Term {
        if map.is_empty() {
            return self.clone();
        }
        self.replace_masked(HAS_VAR, &mut |t| match t.kind() {
            TermKind::Var(v) => map.get(v).cloned(),
            _ => None,
        })
    }

    pub fn subst_names(&self, map: &HashMap<Sym, Term>) -> Term {
        if map.is_empty() {
            return self.clone();
        }
        self.replace_masked(HAS_NAME, &mut |t| match t.kind() {
            TermKind::Name(v) => map.get(v).cloned(),
            _ => None,
        })
    }

    pub fn subst_holes(&self, map: &HashMap<Sym, Term>) -> Term {
        if map.is_empty() {
            return self.clone();
        }
        self.replace_masked(HAS_HOLE, &mut |t| match t.kind() {
            TermKind::Hole(v) => map.get(v).cloned(),
            _ => None,
        })
    }

    /// Renames variables and names by the given maps (used for alpha renaming).
    pub fn rename(&self, vars: &HashMap<Sym, Sym>, names: &HashMap<Sym, Sym>) -> Term {
        if vars.is_empty() && names.is_empty() {
            return self.clone();
        }
        self.replace_masked(HAS_VAR | HAS_NAME, &mut |t| match t.kind() {
            TermKind::Var(v) => vars.get(v).map(|n| Term::var_sym(n.clone())),
            TermKind::Name(v) => names.get(v).map(|n| Term::name_sym(n.clone())),
            _ => None,
        })
    }

    /// Calls `f` on every subterm, parents first.
    pub fn visit(&self, f: &mut impl FnMut(&Term)) {
        f(self);
        for a in self.args() {
            a.visit(f);
        }
    }

    pub fn vars(&self, out: &mut Vec<Sym>) {
        if !self.has_vars() {
            return;
        }
        self.visit(&mut |t| {
            if let TermKind::Var(v) = t.kind() {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        });
    }

    pub fn names(&self, out: &mut Vec<Sym>) {
        if !self.has_names() {
            return;
        }
        self.visit(&mut |t| {
            if let TermKind::Name(v) = t.kind() {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        });
    }

    pub fn holes(&self, out: &mut Vec<Sym>) {
        if !self.has_holes() {
            return;
        }
        self.visit(&mut |t| {
            if let TermKind::Hole(v) = t.kind() {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        });
    }

    pub fn nonces(&self, out: &mut Vec<Nonce>) {
        if !self.has_nonces() {
            return;
        }
        self.visit(&mut |t| {
            if let TermKind::Nonce(n) = t.kind() {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        });
    }

    /// All subterms, each listed once, parents before children.
    pub fn subterms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        self.visit(&mut |t| {
            if seen.insert(t.clone()) {
                out.push(t.clone());
            }
        });
        out
    }

    pub fn contains(&self, sub: &Term) -> bool {
        if self == sub {
            return true;
        }
        if sub.size() >= self.size() {
            return false;
        }
        self.args().iter().any(|a| a.contains(sub))
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            TermKind::Var(v) | TermKind::Name(v) => write!(f, "{v}"),
            TermKind::Nonce(n) => write!(f, "{}", n.name),
            TermKind::Hole(h) => write!(f, "?{h}"),
            TermKind::App(g, args) => {
                if args.is_empty() && g.starts_with('\'') {
                    return write!(f, "{g}");
                }
                write!(f, "{g}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl serde::Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TermError {
    #[error("unknown function symbol `{0}`")]
    UnknownSymbol(String),
    #[error("`{name}` expects {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("`{0}` is not a destructor")]
    NotDestructor(String),
    #[error("unbound variable `{0}`")]
    UnboundVar(String),
    #[error("unresolved name `{0}`")]
    UnboundName(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("model syntax error at {line}:{col}: {msg}")]
    ModelSyntax { line: usize, col: usize, msg: String },
}

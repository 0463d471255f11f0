//! Dolev-Yao deduction: saturation of the adversary knowledge and recipe synthesis.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::terms::{
    eval_term_partial, grammar_check, match_term, FuncKind, MatchOutcome, Nonce, Reduct, Sym, SymbolicModel, Term,
    TermError, TermKind,
};

/// Messages output to the adversary, addressable by handle.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Knowledge {
    entries: Vec<Term>,
    /// Restricted protocol nonces.
    pub restricted: BTreeSet<Nonce>,
}

impl Knowledge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(entries: Vec<Term>) -> Self {
        Knowledge { entries, restricted: BTreeSet::new() }
    }

    /// Appends an entry and returns its 0-based handle index.
    pub fn push(&mut self, t: Term) -> usize {
        self.entries.push(t);
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[Term] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Term> {
        self.entries.get(i)
    }

    pub(crate) fn map_terms(&mut self, f: impl Fn(&Term) -> Term) {
        for e in &mut self.entries {
            *e = f(e);
        }
    }
}

/// Adversary computation over knowledge handles, adversary nonces and public functions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Recipe {
    /// 0-based index into the knowledge, printed `x_{i+1}`.
    Handle(usize),
    /// 0-based adversary nonce index, printed `nE_{i+1}`.
    AdvNonce(usize),
    App(Sym, Vec<Recipe>),
}

impl Recipe {
    pub fn depth(&self) -> usize {
        match self {
            Recipe::Handle(_) | Recipe::AdvNonce(_) => 1,
            Recipe::App(_, args) => 1 + args.iter().map(Recipe::depth).max().unwrap_or(0),
        }
    }

    pub fn max_adv_nonce(&self) -> Option<usize> {
        match self {
            Recipe::Handle(_) => None,
            Recipe::AdvNonce(i) => Some(*i),
            Recipe::App(_, args) => args.iter().filter_map(Recipe::max_adv_nonce).max(),
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recipe::Handle(i) => write!(f, "x_{}", i + 1),
            Recipe::AdvNonce(i) => write!(f, "nE_{}", i + 1),
            Recipe::App(g, args) => {
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

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeductionError {
    #[error("handle x_{} is out of range (knowledge has {len} entries)", .index + 1)]
    HandleOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Term(#[from] TermError),
    #[error("cannot parse recipe `{0}`")]
    Parse(String),
}

impl FromStr for Recipe {
    type Err = DeductionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = RecipeParser { s: s.as_bytes(), pos: 0 };
        let r = p.recipe().ok_or_else(|| DeductionError::Parse(s.to_string()))?;
        p.ws();
        if p.pos != p.s.len() {
            return Err(DeductionError::Parse(s.to_string()));
        }
        Ok(r)
    }
}

struct RecipeParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl RecipeParser<'_> {
    fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.ws();
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Option<String> {
        self.ws();
        let start = self.pos;
        if self.s.get(self.pos) == Some(&b'\'') {
            self.pos += 1;
            while self.pos < self.s.len() && self.s[self.pos] != b'\'' {
                self.pos += 1;
            }
            self.pos += 1;
            if self.pos > self.s.len() {
                return None;
            }
        } else {
            while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_') {
                self.pos += 1;
            }
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.s[start..self.pos]).ok().map(str::to_string)
    }

    fn recipe(&mut self) -> Option<Recipe> {
        let id = self.ident()?;
        if self.eat(b'(') {
            let mut args = Vec::new();
            if !self.eat(b')') {
                loop {
                    args.push(self.recipe()?);
                    if self.eat(b')') {
                        break;
                    }
                    if !self.eat(b',') {
                        return None;
                    }
                }
            }
            return Some(Recipe::App(Sym::from(id.as_str()), args));
        }
        if id.starts_with('\'') {
            return Some(Recipe::App(Sym::from(id.as_str()), Vec::new()));
        }
        let index = |p: &str| id.strip_prefix(p)?.parse::<usize>().ok()?.checked_sub(1);
        if let Some(i) = index("x_") {
            return Some(Recipe::Handle(i));
        }
        if let Some(i) = index("nE_") {
            return Some(Recipe::AdvNonce(i));
        }
        Some(Recipe::App(Sym::from(id.as_str()), Vec::new()))
    }
}

impl serde::Serialize for Recipe {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Recipe {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Evaluates a recipe against the knowledge; `None` is bottom.
pub fn eval_recipe(model: &SymbolicModel, k: &Knowledge, r: &Recipe) -> Result<Option<Term>, DeductionError> {
    let t = recipe_term(k, r)?;
    Ok(match eval_term_partial(model, &t)? {
        Reduct::Value(v) => Some(v),
        _ => None,
    })
}

/// The destructor term denoted by a recipe, with handles replaced by entries.
pub fn recipe_term(k: &Knowledge, r: &Recipe) -> Result<Term, DeductionError> {
    Ok(match r {
        Recipe::Handle(i) => k.get(*i).cloned().ok_or(DeductionError::HandleOutOfRange { index: *i, len: k.len() })?,
        Recipe::AdvNonce(i) => Term::nonce(Nonce::adversary(*i)),
        Recipe::App(f, args) => {
            Term::app_sym(f.clone(), args.iter().map(|a| recipe_term(k, a)).collect::<Result<_, _>>()?)
        }
    })
}

/// Destructor closure of a knowledge, each element with a witnessing recipe.
#[derive(Debug, Clone, Default)]
pub struct Saturation {
    items: Vec<(Term, Recipe)>,
    index: HashMap<Term, usize>,
}

impl Saturation {
    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.items.iter().map(|(t, _)| t)
    }

    pub fn items(&self) -> &[(Term, Recipe)] {
        &self.items
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.index.contains_key(t)
    }

    pub fn recipe_of(&self, t: &Term) -> Option<&Recipe> {
        self.index.get(t).map(|&i| &self.items[i].1)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn insert(&mut self, t: Term, r: Recipe) -> bool {
        if self.index.contains_key(&t) {
            return false;
        }
        self.index.insert(t.clone(), self.items.len());
        self.items.push((t, r));
        true
    }
}

/// Composition check over a saturated set.
struct Composer<'a> {
    model: &'a SymbolicModel,
    sat: &'a Saturation,
    holes_derivable: bool,
    memo: RefCell<HashMap<Term, Option<Recipe>>>,
}

const HOLE_RECIPE: &str = "?";

impl<'a> Composer<'a> {
    fn new(model: &'a SymbolicModel, sat: &'a Saturation, holes_derivable: bool) -> Self {
        Composer { model, sat, holes_derivable, memo: RefCell::new(HashMap::new()) }
    }

    fn derive(&self, t: &Term) -> Option<Recipe> {
        if let Some(r) = self.memo.borrow().get(t) {
            return r.clone();
        }
        let composed = match t.kind() {
            TermKind::Nonce(n) => n.adversary_index().map(Recipe::AdvNonce),
            TermKind::Hole(_) if self.holes_derivable => Some(Recipe::App(Sym::from(HOLE_RECIPE), Vec::new())),
            TermKind::App(f, args)
                if self.model.symbol(f).is_some_and(|s| s.kind == FuncKind::Constructor)
                    && grammar_check(self.model, t) != MatchOutcome::NoMatch =>
            {
                let mut rs = Vec::with_capacity(args.len());
                let mut ok = true;
                for a in args {
                    match self.derive(a) {
                        Some(r) => rs.push(r),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                ok.then(|| Recipe::App(f.clone(), rs))
            }
            _ => None,
        };
        let known = self.sat.recipe_of(t).cloned();
        let best = match (known, composed) {
            (Some(a), Some(b)) => Some(if b.depth() < a.depth() { b } else { a }),
            (a, b) => a.or(b),
        };
        self.memo.borrow_mut().insert(t.clone(), best.clone());
        best
    }
}

/// Least fixed point of destructor applications over the knowledge.
pub fn saturate(model: &SymbolicModel, k: &Knowledge) -> Saturation {
    let mut sat = Saturation::default();
    for (i, t) in k.entries().iter().enumerate() {
        sat.insert(t.clone(), Recipe::Handle(i));
    }
    let rules = model.active_rules();
    loop {
        let mut found: Vec<(Term, Recipe)> = Vec::new();
        {
            let comp = Composer::new(model, &sat, true);
            for rule in &rules {
                if rule.lhs.iter().all(|p| p.as_var().is_some()) {
                    continue;
                }
                let mut chosen = vec![None; rule.lhs.len()];
                apply_rule(
                    model,
                    &sat,
                    &comp,
                    rule,
                    &match_order(rule),
                    0,
                    &mut HashMap::new(),
                    &mut chosen,
                    false,
                    &mut found,
                    &mut None,
                );
            }
        }
        let mut grew = false;
        for (t, r) in found {
            grew |= sat.insert(t, r);
        }
        if !grew {
            return sat;
        }
    }
}

/// Argument positions, largest pattern first, so that side conditions such
/// as a decryption key are ground when reached and can be composed.
fn match_order(rule: &crate::terms::DestructorRule) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rule.lhs.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(rule.lhs[i].size()));
    order
}

#[allow(clippy::too_many_arguments)]
fn apply_rule(
    model: &SymbolicModel,
    sat: &Saturation,
    comp: &Composer<'_>,
    rule: &crate::terms::DestructorRule,
    order: &[usize],
    pos: usize,
    sub: &mut HashMap<Sym, Term>,
    chosen: &mut Vec<Option<Recipe>>,
    used_item: bool,
    out: &mut Vec<(Term, Recipe)>,
    blocked: &mut Option<Term>,
) {
    if pos == rule.lhs.len() {
        if !used_item {
            return;
        }
        let rhs = rule.rhs.subst_vars(sub);
        if rhs.has_vars() || sat.contains(&rhs) || out.iter().any(|(t, _)| *t == rhs) {
            return;
        }
        if let Reduct::Value(v) = eval_term_partial(model, &rhs).unwrap_or(Reduct::Bottom) {
            if v != rhs {
                return;
            }
            let args = chosen.iter().map(|c| c.clone().expect("filled")).collect();
            out.push((rhs, Recipe::App(rule.head.clone(), args)));
        }
        return;
    }
    let idx = order[pos];
    let pat = &rule.lhs[idx];
    let inst = pat.subst_vars(sub);
    if !inst.has_vars() {
        if let Some(r) = comp.derive(&inst) {
            if !contains_hole_recipe(&r) {
                chosen[idx] = Some(r);
                apply_rule(model, sat, comp, rule, order, pos + 1, sub, chosen, used_item, out, blocked);
            }
        }
        return;
    }
    if let Some(v) = inst.as_var() {
        // Unconstrained argument: any derivable message will do.
        let filler = Term::nonce(Nonce::adversary(0));
        sub.insert(v.clone(), filler);
        chosen[idx] = Some(Recipe::AdvNonce(0));
        apply_rule(model, sat, comp, rule, order, pos + 1, sub, chosen, used_item, out, blocked);
        sub.remove(v);
        return;
    }
    for (t, r) in sat.items() {
        let mut s2 = sub.clone();
        match match_term(&inst, t, &mut s2) {
            MatchOutcome::Match => {
                chosen[idx] = Some(r.clone());
                apply_rule(model, sat, comp, rule, order, pos + 1, &mut s2, chosen, true, out, blocked);
            }
            MatchOutcome::Blocked(h) if t.as_hole().is_none() && blocked.is_none() => *blocked = Some(h),
            _ => {}
        }
    }
}

/// An input hole on which some destructor application over the saturation
/// depends. Entries that are themselves bare holes are ignored: refining them
/// yields only messages the adversary already had.
pub fn saturation_blocker(model: &SymbolicModel, sat: &Saturation) -> Option<Term> {
    let comp = Composer::new(model, sat, true);
    let mut blocked = None;
    let mut found = Vec::new();
    for rule in model.active_rules() {
        if rule.lhs.iter().all(|p| p.as_var().is_some()) {
            continue;
        }
        let mut chosen = vec![None; rule.lhs.len()];
        let order = match_order(rule);
        apply_rule(
            model,
            sat,
            &comp,
            rule,
            &order,
            0,
            &mut HashMap::new(),
            &mut chosen,
            false,
            &mut found,
            &mut blocked,
        );
        if blocked.is_some() {
            break;
        }
    }
    blocked
}

fn contains_hole_recipe(r: &Recipe) -> bool {
    match r {
        Recipe::App(f, args) => &**f == HOLE_RECIPE || args.iter().any(contains_hole_recipe),
        _ => false,
    }
}

/// Reusable derivability oracle for one knowledge.
pub struct Deducer<'a> {
    model: &'a SymbolicModel,
    sat: Arc<Saturation>,
    strict: RefCell<HashMap<Term, Option<Recipe>>>,
    loose: RefCell<HashMap<Term, bool>>,
}

impl<'a> Deducer<'a> {
    pub fn new(model: &'a SymbolicModel, k: &Knowledge) -> Self {
        Self::from_saturation(model, Arc::new(saturate(model, k)))
    }

    /// Reuses a saturation computed earlier for the same knowledge.
    pub fn from_saturation(model: &'a SymbolicModel, sat: Arc<Saturation>) -> Self {
        Deducer { model, sat, strict: RefCell::new(HashMap::new()), loose: RefCell::new(HashMap::new()) }
    }

    pub fn saturation(&self) -> &Saturation {
        &self.sat
    }

    /// A recipe for `t`, if derivable.
    pub fn recipe(&self, t: &Term) -> Option<Recipe> {
        if let Some(r) = self.strict.borrow().get(t) {
            return r.clone();
        }
        let r = Composer::new(self.model, &self.sat, false).derive(t);
        self.strict.borrow_mut().insert(t.clone(), r.clone());
        r
    }

    /// Derivability where adversary input holes count as known.
    pub fn derivable(&self, t: &Term) -> bool {
        if let Some(&b) = self.loose.borrow().get(t) {
            return b;
        }
        let b = Composer::new(self.model, &self.sat, true).derive(t).is_some();
        self.loose.borrow_mut().insert(t.clone(), b);
        b
    }

    /// Saturated elements not composable from the others; a canonical
    /// description of what the adversary can derive.
    pub fn basis(&self) -> Vec<Term> {
        let mut out: Vec<Term> = self
            .sat
            .terms()
            .filter(|t| {
                let composable = match t.kind() {
                    TermKind::Nonce(n) => n.is_adversary(),
                    TermKind::Hole(_) => true,
                    TermKind::App(f, args) => self.model.is_constructor(f) && args.iter().all(|a| self.derivable(a)),
                    _ => false,
                };
                !composable
            })
            .cloned()
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Decides `K ⊢ t` and returns a witnessing recipe.
pub fn derivable(model: &SymbolicModel, k: &Knowledge, t: &Term) -> Option<Recipe> {
    Deducer::new(model, k).recipe(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terms::RuleMode;

    fn n(s: &str) -> Term {
        Term::nonce(Nonce::protocol(s))
    }
    fn app(f: &str, a: Vec<Term>) -> Term {
        Term::app(f, a)
    }
    fn model() -> SymbolicModel {
        SymbolicModel::pkenc_sig(RuleMode::Sapic)
    }

    #[test]
    fn decrypt_with_known_key() {
        let m = model();
        let c = app("enc", vec![app("ek", vec![n("k")]), n("m"), n("r")]);
        let k = Knowledge::from_terms(vec![c, app("dk", vec![n("k")])]);
        let r = derivable(&m, &k, &n("m")).unwrap();
        assert_eq!(r.to_string(), "dec(x_2, x_1)");
        assert_eq!(eval_recipe(&m, &k, &r).unwrap(), Some(n("m")));
    }

    #[test]
    fn adversary_nonce_and_projection() {
        let m = model();
        let adv = Term::nonce(Nonce::adversary(0));
        assert_eq!(derivable(&m, &Knowledge::new(), &adv), Some(Recipe::AdvNonce(0)));
        let k = Knowledge::from_terms(vec![app("pair", vec![n("a"), n("b")])]);
        assert_eq!(derivable(&m, &k, &n("b")).unwrap().to_string(), "snd(x_1)");
    }

    #[test]
    fn encrypted_secret_stays_secret() {
        let m = model();
        let c = app("enc", vec![app("ek", vec![n("k")]), n("m"), n("r")]);
        let k = Knowledge::from_terms(vec![c]);
        assert_eq!(derivable(&m, &k, &n("m")), None);
        assert_eq!(derivable(&m, &Knowledge::new(), &n("k")), None);
    }

    #[test]
    fn saturation_examples() {
        let m = model();
        let t = app("pair", vec![n("a"), app("pair", vec![n("b"), n("c")])]);
        let s = saturate(&m, &Knowledge::from_terms(vec![t]));
        for x in [n("a"), n("b"), n("c"), app("pair", vec![n("b"), n("c")])] {
            assert!(s.contains(&x), "{x}");
        }
        assert!(saturate(&m, &Knowledge::new()).is_empty());
        let sg = app("sig", vec![app("sk", vec![n("k")]), n("m"), n("r")]);
        let s = saturate(&m, &Knowledge::from_terms(vec![sg, app("vk", vec![n("k")])]));
        assert!(s.contains(&n("m")));
    }

    #[test]
    fn composed_recipe() {
        let m = model();
        let k = Knowledge::from_terms(vec![n("a")]);
        let t = app("pair", vec![n("a"), Term::nonce(Nonce::adversary(1))]);
        assert_eq!(derivable(&m, &k, &t).unwrap().to_string(), "pair(x_1, nE_2)");
    }

    #[test]
    fn recipe_text_roundtrip() {
        for s in ["x_1", "nE_3", "dec(x_2, x_1)", "pair('init', empty())"] {
            let r: Recipe = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        assert!("x_0".parse::<Recipe>().is_ok_and(|r| r == Recipe::App("x_0".into(), vec![])));
        assert!("f(".parse::<Recipe>().is_err());
    }

    #[test]
    fn basis_ignores_composable_entries() {
        let m = model();
        let k1 = Knowledge::from_terms(vec![n("a"), n("b"), app("pair", vec![n("a"), n("b")])]);
        let k2 = Knowledge::from_terms(vec![n("b"), n("a")]);
        assert_eq!(Deducer::new(&m, &k1).basis(), Deducer::new(&m, &k2).basis());
    }
}

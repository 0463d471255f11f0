//! Brute-force oracles and random instance generators shared by the oracle
//! tests and the acceptance target.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use spi_core::sapic::FMatch;
use spi_core::syntax::Fact;
use spi_core::terms::{eval_term, match_term, FuncKind, MatchOutcome, Nonce, Sym, SymbolicModel, Term, TermKind};

pub fn nonce(s: &str) -> Term {
    Term::nonce(Nonce::protocol(s))
}

fn app(f: &str, args: Vec<Term>) -> Term {
    Term::app(f, args)
}

fn subterms_into(t: &Term, out: &mut HashSet<Term>) {
    if out.insert(t.clone()) {
        for a in t.args() {
            subterms_into(a, out);
        }
    }
}

/// The terms a derivation of `t` from `k` may pass through: subterms of
/// `k` and `t`, closed under the non-variable side arguments of rewrite
/// rules whose main argument matches one of them (for example `dk(x)` for
/// a ciphertext under `ek(x)`).
fn universe(model: &SymbolicModel, k: &[Term], t: &Term) -> HashSet<Term> {
    let mut u = HashSet::new();
    for x in k.iter().chain(std::iter::once(t)) {
        subterms_into(x, &mut u);
    }
    loop {
        let mut extra = Vec::new();
        for rule in model.active_rules() {
            for (i, main) in rule.lhs.iter().enumerate() {
                if main.as_var().is_some() {
                    continue;
                }
                for s in &u {
                    let mut sigma = HashMap::new();
                    if match_term(main, s, &mut sigma) != MatchOutcome::Match {
                        continue;
                    }
                    for (j, side) in rule.lhs.iter().enumerate() {
                        if j != i && side.as_var().is_none() {
                            let g = side.subst_vars(&sigma);
                            if !g.has_vars() && !u.contains(&g) {
                                extra.push(g);
                            }
                        }
                    }
                }
            }
        }
        if extra.is_empty() {
            return u;
        }
        for g in extra {
            subterms_into(&g, &mut u);
        }
    }
}

/// Decides `k ⊢ t` by saturating the finite universe: apply every symbol to
/// every tuple of known terms, keep results inside the universe, repeat.
pub fn closure_derivable(model: &SymbolicModel, k: &[Term], t: &Term) -> bool {
    let u = universe(model, k, t);
    let mut known: HashSet<Term> = k.iter().cloned().collect();
    for x in &u {
        if x.as_nonce().is_some_and(Nonce::is_adversary) {
            known.insert(x.clone());
        }
    }
    let destructors: Vec<_> = model.destructors().cloned().collect();
    loop {
        let mut added = Vec::new();
        for x in &u {
            if known.contains(x) {
                continue;
            }
            if let TermKind::App(f, args) = x.kind() {
                let ctor = model.symbol(f).is_some_and(|s| s.kind == FuncKind::Constructor);
                if ctor
                    && args.iter().all(|a| known.contains(a))
                    && eval_term(model, x).ok().flatten().as_ref() == Some(x)
                {
                    added.push(x.clone());
                }
            }
        }
        let pool: Vec<Term> = known.iter().cloned().collect();
        for d in &destructors {
            let mut tuple = vec![0usize; d.arity];
            'tuples: loop {
                let args: Vec<Term> = tuple.iter().map(|&i| pool[i].clone()).collect();
                if let Ok(Some(r)) = eval_term(model, &Term::app_sym(d.name.clone(), args)) {
                    if !known.contains(&r) {
                        added.push(r);
                    }
                }
                for slot in tuple.iter_mut() {
                    *slot += 1;
                    if *slot < pool.len() {
                        continue 'tuples;
                    }
                    *slot = 0;
                }
                break;
            }
        }
        let before = known.len();
        known.extend(added);
        if known.len() == before {
            return known.contains(t);
        }
    }
}

const KEYS: [&str; 3] = ["k1", "k2", "k3"];
const ATOMS: [&str; 4] = ["a", "b", "r1", "r2"];

fn random_nonce(rng: &mut impl Rng) -> Term {
    match rng.gen_range(0..10) {
        0 => Term::nonce(Nonce::adversary(0)),
        1..=3 => nonce(KEYS.choose(rng).unwrap()),
        _ => nonce(ATOMS.choose(rng).unwrap()),
    }
}

/// A random well-typed message of at most `depth` levels.
pub fn random_message(rng: &mut impl Rng, depth: usize) -> Term {
    if depth <= 1 {
        return match rng.gen_range(0..5) {
            0 => app("empty", vec![]),
            _ => random_nonce(rng),
        };
    }
    let key = |rng: &mut _| nonce(KEYS.choose(rng).unwrap());
    match rng.gen_range(0..11) {
        0 | 1 => app("pair", vec![random_message(rng, depth - 1), random_message(rng, depth - 1)]),
        2 | 3 if depth >= 3 => {
            let k = key(rng);
            let r = random_nonce(rng);
            app("enc", vec![app("ek", vec![k]), random_message(rng, depth - 1), r])
        }
        4 if depth >= 3 => {
            let k = key(rng);
            let r = random_nonce(rng);
            app("sig", vec![app("sk", vec![k]), random_message(rng, depth - 1), r])
        }
        5 => app(["ek", "dk", "vk", "sk"].choose(rng).unwrap(), vec![key(rng)]),
        6 => app("string0", vec![app("empty", vec![])]),
        7 if depth >= 3 => app("garbageEnc", vec![random_message(rng, depth - 2), random_nonce(rng)]),
        _ => random_nonce(rng),
    }
}

/// Up to five entries of depth at most four.
pub fn random_knowledge(rng: &mut impl Rng) -> Vec<Term> {
    let n = rng.gen_range(1..=5);
    (0..n)
        .map(|_| {
            let d = rng.gen_range(1..=4);
            random_message(rng, d)
        })
        .collect()
}

/// Targets mixing subterms of the knowledge with fresh compositions.
pub fn random_targets(rng: &mut impl Rng, k: &[Term], n: usize) -> Vec<Term> {
    let mut subs = HashSet::new();
    for x in k {
        subterms_into(x, &mut subs);
    }
    let mut subs: Vec<Term> = subs.into_iter().collect();
    subs.sort();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = match rng.gen_range(0..4) {
            0 | 1 => subs.choose(rng).unwrap().clone(),
            2 => {
                let a = subs.choose(rng).unwrap().clone();
                let b = subs.choose(rng).unwrap().clone();
                match rng.gen_range(0..3) {
                    0 => app("pair", vec![a, b]),
                    1 => app("enc", vec![app("ek", vec![nonce(KEYS.choose(rng).unwrap())]), a, random_nonce(rng)]),
                    _ => app(["dk", "vk", "ek"].choose(rng).unwrap(), vec![nonce(KEYS.choose(rng).unwrap())]),
                }
            }
            _ => {
                let d = rng.gen_range(1..=3);
                random_message(rng, d)
            }
        };
        out.push(t);
    }
    out
}

/// A random multiset rewrite left-hand side and state: at most three
/// pattern facts whose arguments are variables or ground values, and at
/// most six state facts.
pub fn random_fmatch_instance(rng: &mut impl Rng) -> (Vec<Fact>, Vec<Fact>) {
    let values = [nonce("a"), nonce("b"), nonce("c"), app("pair", vec![nonce("a"), nonce("b")])];
    let vars = ["x", "y", "z"];
    let shapes: [(&str, bool, usize); 4] = [("A", false, 1), ("B", false, 2), ("P", true, 1), ("Q", true, 2)];
    let value = |rng: &mut _| values.choose(rng).unwrap().clone();
    let lhs_len = rng.gen_range(0..=3);
    let state_len = rng.gen_range(0..=6);
    let lhs = (0..lhs_len)
        .map(|_| {
            let (s, p, n) = *shapes.choose(rng).unwrap();
            let args = (0..n)
                .map(|_| if rng.gen_bool(0.7) { Term::var(vars.choose(rng).unwrap()) } else { value(rng) })
                .collect();
            Fact::new(s, p, args)
        })
        .collect::<Vec<_>>();
    let mut state: Vec<Fact> = Vec::with_capacity(state_len);
    for _ in 0..state_len {
        // Duplicate linear facts are common so consumption counts matter.
        if !state.is_empty() && rng.gen_bool(0.25) {
            let dup = state.choose(rng).unwrap().clone();
            state.push(dup);
            continue;
        }
        let (s, p, n) = *shapes.choose(rng).unwrap();
        state.push(Fact::new(s, p, (0..n).map(|_| value(rng)).collect()));
    }
    (lhs, state)
}

fn lhs_vars(lhs: &[Fact]) -> Vec<Sym> {
    let mut vs = Vec::new();
    for f in lhs {
        for a in &f.args {
            a.vars(&mut vs);
        }
    }
    vs.sort();
    vs.dedup();
    vs
}

fn instantiate(f: &Fact, sigma: &HashMap<Sym, Term>) -> Fact {
    Fact::new(&f.symbol, f.persistent, f.args.iter().map(|a| a.subst_vars(sigma)).collect())
}

/// Whether `sigma` grounds `lhs` so that its linear facts are a sub-multiset
/// of the state's linear facts and its persistent facts all occur.
pub fn satisfies(lhs: &[Fact], state: &[Fact], sigma: &HashMap<Sym, Term>) -> bool {
    let mut available: Vec<&Fact> = state.iter().filter(|f| !f.persistent).collect();
    for f in lhs {
        let g = instantiate(f, sigma);
        if g.args.iter().any(Term::has_vars) {
            return false;
        }
        if f.persistent {
            if !state.iter().any(|s| s.persistent && *s == g) {
                return false;
            }
        } else {
            match available.iter().position(|s| **s == g) {
                Some(i) => {
                    available.swap_remove(i);
                }
                None => return false,
            }
        }
    }
    true
}

/// Tries every assignment of state values to the pattern variables.
pub fn brute_f_match(lhs: &[Fact], state: &[Fact]) -> bool {
    let vars = lhs_vars(lhs);
    let mut values: Vec<Term> = state.iter().flat_map(|f| f.args.iter().cloned()).collect();
    values.sort();
    values.dedup();
    if vars.is_empty() {
        return satisfies(lhs, state, &HashMap::new());
    }
    if values.is_empty() {
        return false;
    }
    let mut idx = vec![0usize; vars.len()];
    loop {
        let sigma: HashMap<Sym, Term> = vars.iter().cloned().zip(idx.iter().map(|&i| values[i].clone())).collect();
        if satisfies(lhs, state, &sigma) {
            return true;
        }
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return false;
            }
            idx[pos] += 1;
            if idx[pos] < values.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Checks a returned match: it grounds every pattern variable, the
/// consumed entries are distinct and equal the instantiated linear facts,
/// and the persistent facts are present.
pub fn check_match(lhs: &[Fact], state: &[Fact], m: &FMatch) -> Result<(), String> {
    for v in lhs_vars(lhs) {
        if !m.subst.contains_key(&v) {
            return Err(format!("{v} unbound"));
        }
    }
    if !satisfies(lhs, state, &m.subst) {
        return Err("substitution does not satisfy the inclusions".into());
    }
    let linear: Vec<Fact> = lhs.iter().filter(|f| !f.persistent).map(|f| instantiate(f, &m.subst)).collect();
    if m.consumed.len() != linear.len() {
        return Err(format!("{} consumed for {} linear facts", m.consumed.len(), linear.len()));
    }
    let mut seen = HashSet::new();
    for (i, g) in m.consumed.iter().zip(&linear) {
        if !seen.insert(*i) {
            return Err(format!("entry {i} consumed twice"));
        }
        let s = state.get(*i).ok_or_else(|| format!("index {i} out of range"))?;
        if s.persistent || s != g {
            return Err(format!("entry {i} is not the linear fact it should consume"));
        }
    }
    Ok(())
}

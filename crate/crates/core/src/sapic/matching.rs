//! Set membership and multiset matching sub-procedures.

use std::collections::HashMap;

use crate::syntax::Fact;
use crate::terms::{match_term, try_apply_destructor, MatchOutcome, Reduct, Sym, SymbolicModel, Term, EQUAL};

/// Three-valued equality modulo the theory.
pub(crate) fn eq3(model: &SymbolicModel, a: &Term, b: &Term) -> MatchOutcome {
    if a == b && !a.has_holes() {
        return MatchOutcome::Match;
    }
    match try_apply_destructor(model, EQUAL, &[a.clone(), b.clone()]) {
        Ok(Reduct::Value(_)) => MatchOutcome::Match,
        Ok(Reduct::Blocked(h)) => MatchOutcome::Blocked(h),
        _ => MatchOutcome::NoMatch,
    }
}

/// Outcome of a sub-procedure whose answer may depend on an unrefined hole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tri<T> {
    Found(T),
    Absent,
    Blocked(Term),
}

/// Smallest index whose element equals `t` modulo the theory.
pub fn f_mem(model: &SymbolicModel, set: &[Term], t: &Term) -> Option<usize> {
    match f_mem3(model, set, t) {
        Tri::Found(i) => Some(i),
        _ => None,
    }
}

pub(crate) fn f_mem3(model: &SymbolicModel, set: &[Term], t: &Term) -> Tri<usize> {
    for (i, s) in set.iter().enumerate() {
        match eq3(model, s, t) {
            MatchOutcome::Match => return Tri::Found(i),
            MatchOutcome::NoMatch => {}
            MatchOutcome::Blocked(h) => return Tri::Blocked(h),
        }
    }
    Tri::Absent
}

/// A successful multiset match: bindings for the pattern variables and the
/// msstate indices of the consumed linear facts (in pattern order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FMatch {
    pub subst: HashMap<Sym, Term>,
    pub consumed: Vec<usize>,
}

/// Grounds the variables of `lhs` against `msstate`.
///
/// Linear facts are matched first, in pattern order, each against a distinct
/// msstate entry of the same symbol; persistent facts are then checked
/// without consumption. Candidates are tried in msstate order with full
/// backtracking unless `greedy` is set, in which case the first candidate
/// for each fact is kept.
pub fn f_match(model: &SymbolicModel, lhs: &[Fact], msstate: &[Fact], greedy: bool) -> Option<FMatch> {
    match f_match3(model, lhs, msstate, greedy) {
        Tri::Found(m) => Some(m),
        _ => None,
    }
}

pub(crate) fn f_match3(model: &SymbolicModel, lhs: &[Fact], msstate: &[Fact], greedy: bool) -> Tri<FMatch> {
    let order: Vec<&Fact> = lhs.iter().filter(|f| !f.persistent).chain(lhs.iter().filter(|f| f.persistent)).collect();
    let mut used = vec![false; msstate.len()];
    let mut consumed = Vec::new();
    let mut subst = HashMap::new();
    let mut m = Matcher { model, msstate, greedy, blocked: None };
    if m.search(&order, 0, &mut used, &mut consumed, &mut subst) {
        return Tri::Found(FMatch { subst, consumed });
    }
    match m.blocked {
        Some(h) => Tri::Blocked(h),
        None => Tri::Absent,
    }
}

struct Matcher<'a> {
    model: &'a SymbolicModel,
    msstate: &'a [Fact],
    greedy: bool,
    blocked: Option<Term>,
}

impl Matcher<'_> {
    fn search(
        &mut self,
        order: &[&Fact],
        k: usize,
        used: &mut Vec<bool>,
        consumed: &mut Vec<usize>,
        subst: &mut HashMap<Sym, Term>,
    ) -> bool {
        if k == order.len() {
            return true;
        }
        let pat = order[k];
        for (i, fact) in self.msstate.iter().enumerate() {
            if fact.symbol != pat.symbol || fact.persistent != pat.persistent || fact.args.len() != pat.args.len() {
                continue;
            }
            if !pat.persistent && used[i] {
                continue;
            }
            let mut s2 = subst.clone();
            match self.match_args(&pat.args, &fact.args, &mut s2) {
                MatchOutcome::Match => {}
                MatchOutcome::NoMatch => continue,
                MatchOutcome::Blocked(h) => {
                    self.blocked = Some(h);
                    return false;
                }
            }
            if !pat.persistent {
                used[i] = true;
                consumed.push(i);
            }
            if self.search(order, k + 1, used, consumed, &mut s2) {
                *subst = s2;
                return true;
            }
            if self.blocked.is_some() {
                return false;
            }
            if !pat.persistent {
                used[i] = false;
                consumed.pop();
            }
            if self.greedy {
                return false;
            }
        }
        false
    }

    fn match_args(&self, pats: &[Term], args: &[Term], subst: &mut HashMap<Sym, Term>) -> MatchOutcome {
        for (p, a) in pats.iter().zip(args) {
            let outcome = match p.as_var() {
                Some(v) => match subst.get(v) {
                    Some(bound) => eq3(self.model, bound, a),
                    None => {
                        subst.insert(v.clone(), a.clone());
                        MatchOutcome::Match
                    }
                },
                None if p.has_vars() => match_term(p, a, subst),
                None => eq3(self.model, p, a),
            };
            if outcome != MatchOutcome::Match {
                return outcome;
            }
        }
        MatchOutcome::Match
    }
}

//! Matching, destructor evaluation and equality.

use std::collections::HashMap;

use super::model::{FuncKind, Grammar, SymbolicModel};
use super::{Sym, Term, TermError, TermKind, EQUAL};

/// Result of matching a pattern against a term that may contain holes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchOutcome {
    Match,
    NoMatch,
    /// The answer depends on how the given hole is refined.
    Blocked(Term),
}

/// Result of evaluating a destructor term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reduct {
    Value(Term),
    Bottom,
    Blocked(Term),
}

impl Reduct {
    pub fn value(self) -> Option<Term> {
        match self {
            Reduct::Value(t) => Some(t),
            _ => None,
        }
    }
}

/// Three-valued syntactic equality: holes may still become anything.
pub(crate) fn syntactic_eq(a: &Term, b: &Term) -> MatchOutcome {
    if a == b {
        return MatchOutcome::Match;
    }
    match (a.kind(), b.kind()) {
        (TermKind::Hole(_), _) => MatchOutcome::Blocked(a.clone()),
        (_, TermKind::Hole(_)) => MatchOutcome::Blocked(b.clone()),
        (TermKind::App(f, xs), TermKind::App(g, ys)) if f == g && xs.len() == ys.len() => {
            let mut blocked = None;
            for (x, y) in xs.iter().zip(ys) {
                match syntactic_eq(x, y) {
                    MatchOutcome::Match => {}
                    MatchOutcome::NoMatch => return MatchOutcome::NoMatch,
                    MatchOutcome::Blocked(h) => {
                        blocked.get_or_insert(h);
                    }
                }
            }
            blocked.map_or(MatchOutcome::Match, MatchOutcome::Blocked)
        }
        _ => MatchOutcome::NoMatch,
    }
}

/// Matches `pattern` (with variables) against `term`, extending `subst`.
/// Repeated variables must bind syntactically equal terms.
pub fn match_term(pattern: &Term, term: &Term, subst: &mut HashMap<Sym, Term>) -> MatchOutcome {
    match pattern.kind() {
        TermKind::Var(v) => match subst.get(v) {
            Some(bound) => syntactic_eq(bound, term),
            None => {
                subst.insert(v.clone(), term.clone());
                MatchOutcome::Match
            }
        },
        TermKind::App(f, ps) => match term.kind() {
            TermKind::Hole(_) => MatchOutcome::Blocked(term.clone()),
            TermKind::App(g, ts) if f == g && ps.len() == ts.len() => {
                let mut blocked = None;
                for (p, t) in ps.iter().zip(ts) {
                    match match_term(p, t, subst) {
                        MatchOutcome::Match => {}
                        MatchOutcome::NoMatch => return MatchOutcome::NoMatch,
                        MatchOutcome::Blocked(h) => {
                            blocked.get_or_insert(h);
                        }
                    }
                }
                blocked.map_or(MatchOutcome::Match, MatchOutcome::Blocked)
            }
            _ => MatchOutcome::NoMatch,
        },
        _ => syntactic_eq(pattern, term),
    }
}

/// True if the rule's left-hand side matches `args` outright.
pub fn matches_rule(rule: &super::DestructorRule, args: &[Term]) -> bool {
    super::model::rule_applies(rule, args)
}

/// Applies destructor `d`; holes in `args` may block the decision.
pub(crate) fn try_apply_destructor(model: &SymbolicModel, d: &str, args: &[Term]) -> Result<Reduct, TermError> {
    let s = model.symbol(d).ok_or_else(|| TermError::UnknownSymbol(d.to_string()))?;
    if s.kind != FuncKind::Destructor {
        return Err(TermError::NotDestructor(d.to_string()));
    }
    if s.arity != args.len() {
        return Err(TermError::Arity { name: d.to_string(), expected: s.arity, got: args.len() });
    }
    let mut blocked = None;
    for rule in model.rules_for(d) {
        let mut sub = HashMap::new();
        let mut outcome = MatchOutcome::Match;
        for (p, a) in rule.lhs.iter().zip(args) {
            match match_term(p, a, &mut sub) {
                MatchOutcome::Match => {}
                MatchOutcome::NoMatch => {
                    outcome = MatchOutcome::NoMatch;
                    break;
                }
                MatchOutcome::Blocked(h) => {
                    if !matches!(outcome, MatchOutcome::Blocked(_)) {
                        outcome = MatchOutcome::Blocked(h);
                    }
                }
            }
        }
        match outcome {
            MatchOutcome::Match => {
                let r = rule.rhs.subst_vars(&sub);
                return Ok(match grammar_check(model, &r) {
                    MatchOutcome::Match => Reduct::Value(r),
                    MatchOutcome::NoMatch => Reduct::Bottom,
                    MatchOutcome::Blocked(h) => Reduct::Blocked(h),
                });
            }
            MatchOutcome::NoMatch => {}
            MatchOutcome::Blocked(h) => {
                blocked.get_or_insert(h);
            }
        }
    }
    Ok(blocked.map_or(Reduct::Bottom, Reduct::Blocked))
}

/// Applies destructor `d` to ground, destructor-free arguments.
pub fn eval_destructor(model: &SymbolicModel, d: &str, args: &[Term]) -> Result<Option<Term>, TermError> {
    for a in args {
        ground_check(a)?;
    }
    Ok(try_apply_destructor(model, d, args)?.value())
}

fn ground_check(t: &Term) -> Result<(), TermError> {
    if t.has_vars() {
        let mut vs = Vec::new();
        t.vars(&mut vs);
        return Err(TermError::UnboundVar(vs[0].to_string()));
    }
    if t.has_names() {
        let mut ns = Vec::new();
        t.names(&mut ns);
        return Err(TermError::UnboundName(ns[0].to_string()));
    }
    Ok(())
}

/// Innermost-first evaluation; holes may block.
pub(crate) fn eval_term_partial(model: &SymbolicModel, t: &Term) -> Result<Reduct, TermError> {
    match t.kind() {
        TermKind::Var(v) => Err(TermError::UnboundVar(v.to_string())),
        TermKind::Name(n) => Err(TermError::UnboundName(n.to_string())),
        TermKind::Nonce(_) | TermKind::Hole(_) => Ok(Reduct::Value(t.clone())),
        TermKind::App(f, args) => {
            let s = model.symbol(f).ok_or_else(|| TermError::UnknownSymbol(f.to_string()))?;
            if s.arity != args.len() {
                return Err(TermError::Arity { name: f.to_string(), expected: s.arity, got: args.len() });
            }
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                match eval_term_partial(model, a)? {
                    Reduct::Value(v) => vals.push(v),
                    other => return Ok(other),
                }
            }
            match s.kind {
                FuncKind::Destructor => try_apply_destructor(model, f, &vals),
                FuncKind::Constructor => {
                    let r = Term::app_sym(f.clone(), vals);
                    Ok(match grammar_check(model, &r) {
                        MatchOutcome::Match => Reduct::Value(r),
                        MatchOutcome::NoMatch => Reduct::Bottom,
                        MatchOutcome::Blocked(h) => Reduct::Blocked(h),
                    })
                }
            }
        }
    }
}

/// Evaluates every destructor application innermost-first; `None` is bottom.
pub fn eval_term(model: &SymbolicModel, t: &Term) -> Result<Option<Term>, TermError> {
    ground_check(t)?;
    Ok(eval_term_partial(model, t)?.value())
}

/// Equality modulo the theory: `equal(t, u)` is defined.
pub fn terms_equal(model: &SymbolicModel, t: &Term, u: &Term) -> bool {
    matches!(try_apply_destructor(model, EQUAL, &[t.clone(), u.clone()]), Ok(Reduct::Value(_)))
}

/// Checks the typed message grammar, if one is active.
pub(crate) fn grammar_check(model: &SymbolicModel, t: &Term) -> MatchOutcome {
    match model.grammar() {
        None => MatchOutcome::Match,
        Some(Grammar::PkencSig) => pk_message(t),
    }
}

fn all(parts: impl IntoIterator<Item = MatchOutcome>) -> MatchOutcome {
    let mut blocked = None;
    for p in parts {
        match p {
            MatchOutcome::Match => {}
            MatchOutcome::NoMatch => return MatchOutcome::NoMatch,
            MatchOutcome::Blocked(h) => {
                blocked.get_or_insert(h);
            }
        }
    }
    blocked.map_or(MatchOutcome::Match, MatchOutcome::Blocked)
}

fn pk_nonce(t: &Term) -> MatchOutcome {
    match t.kind() {
        TermKind::Nonce(_) => MatchOutcome::Match,
        TermKind::Hole(_) => MatchOutcome::Blocked(t.clone()),
        _ => MatchOutcome::NoMatch,
    }
}

fn pk_keyed(t: &Term, head: &str) -> MatchOutcome {
    match t.kind() {
        TermKind::Hole(_) => MatchOutcome::Blocked(t.clone()),
        TermKind::App(f, args) if &**f == head && args.len() == 1 => pk_nonce(&args[0]),
        _ => MatchOutcome::NoMatch,
    }
}

fn pk_string(t: &Term) -> MatchOutcome {
    match t.kind() {
        TermKind::Hole(_) => MatchOutcome::Blocked(t.clone()),
        TermKind::App(f, args) => match (&**f, args.len()) {
            ("empty", 0) => MatchOutcome::Match,
            ("string0", 1) | ("string1", 1) => pk_string(&args[0]),
            _ => MatchOutcome::NoMatch,
        },
        _ => MatchOutcome::NoMatch,
    }
}

fn pk_message(t: &Term) -> MatchOutcome {
    match t.kind() {
        // Holes only ever stand for well-typed values.
        TermKind::Nonce(_) | TermKind::Hole(_) => MatchOutcome::Match,
        TermKind::Var(_) | TermKind::Name(_) => MatchOutcome::NoMatch,
        TermKind::App(f, args) => match (&**f, args.as_slice()) {
            ("enc", [k, m, r]) => all([pk_keyed(k, "ek"), pk_message(m), pk_nonce(r)]),
            ("sig", [k, m, r]) => all([pk_keyed(k, "sk"), pk_message(m), pk_nonce(r)]),
            ("ek" | "dk" | "vk" | "sk" | "garbage", [n]) => pk_nonce(n),
            ("pair", [a, b]) => all([pk_message(a), pk_message(b)]),
            ("garbageEnc" | "garbageSig", [m, n]) => all([pk_message(m), pk_nonce(n)]),
            ("empty" | "string0" | "string1", _) => pk_string(t),
            (_, []) => MatchOutcome::Match,
            _ => MatchOutcome::NoMatch,
        },
    }
}

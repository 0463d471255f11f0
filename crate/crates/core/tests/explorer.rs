use std::collections::BTreeSet;

use spi_core::explorer::*;
use spi_core::sapic::run_trace;
use spi_core::statverif::EncodeError;
use spi_core::syntax::{parse_sapic, parse_statverif, Parsed};
use spi_core::terms::{sym, Term};

fn sapic(text: &str) -> Parsed {
    parse_sapic(text).unwrap()
}

fn small() -> Bounds {
    Bounds { max_steps: 12, max_repl_unfold: 1, max_recipe_depth: 2, max_new_adv_nonces: 1 }
}

fn verdict(p: &Parsed, prop: &str) -> Verdict {
    check(&p.model, &p.process, small(), &prop.parse().unwrap()).unwrap().verdict
}

#[test]
fn toy_leak_is_found_and_replays() {
    let p = sapic("new a; new b; event Exclusive(a, b); out('c', pair(a, b))");
    let v = verdict(&p, "exclusive:Exclusive");
    let w = v.witness().expect("leak");
    let t = run_trace(&p.model, &p.process, &w.script).unwrap();
    assert_eq!(t, w.trace);
    assert_eq!(t.events()[0].symbol, sym("Exclusive"));
}

#[test]
fn one_projection_is_not_a_leak() {
    let p = sapic("new a; new b; event Exclusive(a, b); out('c', a)");
    assert!(!verdict(&p, "exclusive:Exclusive").is_violated());
}

#[test]
fn leak_through_destructor_is_found() {
    let p = sapic("new k; new a; new b; event Exclusive(a, b); out('c', enc(ek(k), pair(a, b), k)); out('c', dk(k))");
    assert!(verdict(&p, "exclusive:Exclusive").is_violated());
}

#[test]
fn absence_of_unreachable_event_holds() {
    let p = sapic("new k; in('c', x); if x = k then event Bad()");
    assert!(!verdict(&p, "absence:Bad").is_violated());
}

#[test]
fn public_constant_guess_reaches_event() {
    let p = sapic("in('c', x); if x = 'k' then event Bad()");
    let v = verdict(&p, "absence:Bad");
    assert!(v.is_violated(), "{v}");
}

#[test]
fn event_after_input_needs_input() {
    let p = sapic("in('c', x); event Got(x)");
    let w = verdict(&p, "absence:Got");
    let w = w.witness().unwrap();
    assert!(w.trace.events().iter().any(|e| e.symbol.as_ref() == "Got"));
}

#[test]
fn zero_bounds_hold_truncated() {
    let p = sapic("event Bad()");
    let b = Bounds { max_steps: 0, ..small() };
    let r = check(&p.model, &p.process, b, &"absence:Bad".parse().unwrap()).unwrap();
    assert_eq!(r.verdict, Verdict::HoldsWithinBounds { truncated: true });
}

#[test]
fn exhausted_space_is_not_truncated() {
    let p = sapic("event Good()");
    let r = check(&p.model, &p.process, small(), &"absence:Bad".parse().unwrap()).unwrap();
    assert_eq!(r.verdict, Verdict::HoldsWithinBounds { truncated: false });
}

#[test]
fn replication_bound_limits_copies() {
    let p = sapic("!(new n; event Tick(n))");
    let only = |k: u32| {
        let b = Bounds { max_repl_unfold: k, ..small() };
        let prop = PropertySpec::custom(|t| t.events().len() < 3);
        check(&p.model, &p.process, b, &prop).unwrap().verdict.is_violated()
    };
    assert!(!only(2));
    assert!(only(3));
}

#[test]
fn custom_property_and_state() {
    let p = sapic("new s; insert s, 'a'; lookup s as v in event Read(v)");
    let prop = PropertySpec::custom(|t| t.events().iter().all(|e| e.args[0] != Term::constant("'a'")));
    assert!(check(&p.model, &p.process, small(), &prop).unwrap().verdict.is_violated());
}

#[test]
fn lookup_without_else_blocks_on_missing_cell() {
    let p = sapic("new s; lookup s as v in event Read(v)");
    assert!(!verdict(&p, "absence:Read").is_violated());
}

#[test]
fn locks_serialize_critical_sections() {
    let p = sapic(
        "new s; insert s, 'a'; \
         ((lock s; lookup s as v in event Enter(); event Leave(); unlock s) | \
          (lock s; lookup s as v in event Enter(); event Leave(); unlock s))",
    );
    let prop = PropertySpec::custom(|t| {
        let mut depth = 0i32;
        t.events().iter().all(|e| {
            depth += if e.symbol.as_ref() == "Enter" { 1 } else { -1 };
            depth <= 1
        })
    });
    let b = Bounds { max_steps: 20, ..small() };
    assert!(!check(&p.model, &p.process, b, &prop).unwrap().verdict.is_violated());
}

#[test]
fn multiset_rewriting_consumes_linear_facts() {
    let p = sapic("[] --[ ]-> [Tok('a')]; ([Tok(x)] --[ Use(x) ]-> []; 0 | [Tok(y)] --[ Use(y) ]-> []; 0)");
    let twice = PropertySpec::custom(|t| t.events().len() < 2);
    assert!(!check(&p.model, &p.process, small(), &twice).unwrap().verdict.is_violated());
    assert!(verdict(&p, "absence:Use").is_violated());
}

#[test]
fn explore_lists_interleavings() {
    let p = sapic("event A() | event B()");
    let traces = explore(&p.model, &p.process, small()).unwrap();
    let orders: BTreeSet<Vec<String>> =
        traces.iter().map(|t| t.events().iter().map(|e| e.symbol.to_string()).collect()).collect();
    assert!(orders.contains(&vec!["A".to_string(), "B".to_string()]));
    assert!(orders.contains(&vec!["B".to_string(), "A".to_string()]));
    assert!(orders.contains(&vec![]));
}

#[test]
fn jobs_do_not_change_the_verdict() {
    let p = sapic("!(new a; new b; event Exclusive(a, b); in('c', x); if x = 'go' then out('c', pair(a, b)))");
    let prop: PropertySpec = "exclusive:Exclusive".parse().unwrap();
    let one = check_with(&p.model, &p.process, small(), &prop, CheckOptions::default()).unwrap();
    let many =
        check_with(&p.model, &p.process, small(), &prop, CheckOptions { jobs: 3, ..Default::default() }).unwrap();
    assert_eq!(one.verdict, many.verdict);
    assert!(one.verdict.is_violated());
}

#[test]
fn property_parsing() {
    assert!("absence:Bad".parse::<PropertySpec>().is_ok());
    assert!("never-both:Exclusive".parse::<PropertySpec>().is_ok());
    assert!("sometimes:Bad".parse::<PropertySpec>().is_err());
    assert!("absence:".parse::<PropertySpec>().is_err());
}

fn statverif(text: &str) -> Parsed {
    parse_statverif(text).unwrap()
}

#[test]
fn harness_finds_published_secret() {
    let p = statverif("process new n; out(c, n)");
    let r = check_secrecy_statverif(&p.model, &p.process, &Term::name("n"), small(), CheckOptions::default()).unwrap();
    assert!(r.verdict.is_violated());
}

#[test]
fn harness_holds_for_unpublished_restricted_name() {
    let p = statverif("process new n; new m; out(c, m)");
    let r = check_secrecy_statverif(&p.model, &p.process, &Term::name("n"), small(), CheckOptions::default()).unwrap();
    assert!(!r.verdict.is_violated(), "{}", r.verdict);
}

#[test]
fn harness_secret_through_state() {
    let p = statverif("process new n; new s; [s |-> n] | (lock; read s as x; unlock; out(c, x))");
    let r = check_secrecy_statverif(&p.model, &p.process, &Term::name("n"), small(), CheckOptions::default()).unwrap();
    assert!(r.verdict.is_violated());
}

#[test]
fn harness_rejects_replicated_secret() {
    let p = statverif("process !(new n; out(c, n))");
    let e =
        check_secrecy_statverif(&p.model, &p.process, &Term::name("n"), small(), CheckOptions::default()).unwrap_err();
    assert!(matches!(e, ExploreError::Encode(EncodeError::SecretUnderReplication(_))), "{e}");
}

#[test]
fn free_secret_is_public() {
    let p = statverif("process out(c, a)");
    let r = check_secrecy_statverif(&p.model, &p.process, &Term::name("m"), small(), CheckOptions::default()).unwrap();
    assert!(r.verdict.is_violated());
}

#[test]
fn differential_small_processes() {
    let p = statverif("process new s; [s |-> a] | (lock; read s as x; s := pair(x, x); unlock; out(c, x))");
    let b = Bounds { max_steps: 20, ..small() };
    let r = differential_statverif(&p.model, &p.process, b, DiffOptions::default()).unwrap();
    assert!(r.is_clean(), "{:?}", r.unmatched);
    assert!(r.edges > 0);
    let m = differential_statverif(&p.model, &p.process, b, DiffOptions { drop_unlock: true, ..Default::default() })
        .unwrap();
    assert!(!m.is_clean());
}

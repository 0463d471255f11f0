//! Pretty printers producing text the parsers accept.

use std::fmt::Write;

use super::parser::Parsed;
use super::{Proc, Process};
use crate::terms::{Term, DEFAULT_CHANNEL, EQUAL};

/// Prints a process on one line. Statverif-only constructs use StatVerif
/// syntax, everything else SAPIC syntax.
pub fn print_process(p: &Process) -> String {
    let mut s = String::new();
    proc(p, &mut s);
    s
}

fn term(t: &Term) -> String {
    t.to_string()
}

fn chan_args(chan: &Term, rest: &str) -> String {
    if chan.as_app().is_some_and(|(f, a)| a.is_empty() && &**f == DEFAULT_CHANNEL) {
        rest.to_string()
    } else {
        format!("{}, {rest}", term(chan))
    }
}

/// Whether a trailing `else` printed after `p` would be captured by `p`.
fn ends_open(p: &Process) -> bool {
    match p {
        Process::If { else_, .. } | Process::Let { else_, .. } => else_.is_nil() || ends_open(else_),
        Process::Lookup { else_, .. } => match else_ {
            None => true,
            Some(e) => ends_open(e),
        },
        Process::Nil | Process::Par(..) | Process::Repl { .. } | Process::SvInit { .. } => false,
        other => other.children().first().is_some_and(|c| ends_open(c)),
    }
}

fn cont(prefix: String, c: &Proc, out: &mut String) {
    out.push_str(&prefix);
    if !c.is_nil() {
        out.push_str("; ");
        proc(c, out);
    }
}

fn wrapped(p: &Process, out: &mut String) {
    match p {
        Process::Nil | Process::SvInit { .. } => proc(p, out),
        _ => {
            out.push('(');
            proc(p, out);
            out.push(')');
        }
    }
}

fn then_branch(then: &Proc, has_else: bool, out: &mut String) {
    if has_else && ends_open(then) {
        out.push('(');
        proc(then, out);
        out.push(')');
    } else {
        proc(then, out);
    }
}

fn proc(p: &Process, out: &mut String) {
    match p {
        Process::Nil => out.push('0'),
        Process::Par(a, b) => {
            wrapped(a, out);
            out.push_str(" | ");
            if matches!(&**b, Process::Par(..)) {
                proc(b, out);
            } else {
                wrapped(b, out);
            }
        }
        Process::Repl { body, .. } => {
            out.push('!');
            wrapped(body, out);
        }
        Process::New(n, c) => cont(format!("new {n}"), c, out),
        Process::Out { chan, msg, cont: c } => cont(format!("out({})", chan_args(chan, &term(msg))), c, out),
        Process::In { chan, var, cont: c } => cont(format!("in({})", chan_args(chan, var)), c, out),
        Process::InPattern { chan, pattern, cont: c } => {
            cont(format!("in({})", chan_args(chan, &term(pattern))), c, out)
        }
        Process::Let { var, expr, then, else_ } => {
            let _ = write!(out, "let {var} = {} in ", term(expr));
            then_branch(then, !else_.is_nil(), out);
            if !else_.is_nil() {
                out.push_str(" else ");
                proc(else_, out);
            }
        }
        Process::If { lhs, rhs, then, else_ } => {
            let _ = write!(out, "if {} = {} then ", term(lhs), term(rhs));
            then_branch(then, !else_.is_nil(), out);
            if !else_.is_nil() {
                out.push_str(" else ");
                proc(else_, out);
            }
        }
        Process::Event(e, c) => cont(format!("event {e}"), c, out),
        Process::Insert { key, value, cont: c } => cont(format!("insert {},{}", term(key), term(value)), c, out),
        Process::Delete { key, cont: c } => cont(format!("delete {}", term(key)), c, out),
        Process::Lookup { key, var, then, else_ } => {
            let _ = write!(out, "lookup {} as {var} in ", term(key));
            then_branch(then, else_.is_some(), out);
            if let Some(e) = else_ {
                out.push_str(" else ");
                proc(e, out);
            }
        }
        Process::Lock(t, c) => cont(format!("lock {}", term(t)), c, out),
        Process::Unlock(t, c) => cont(format!("unlock {}", term(t)), c, out),
        Process::Msr { lhs, events, rhs, cont: c } => {
            let list = |fs: Vec<String>| fs.join(", ");
            cont(
                format!(
                    "[{}]-[{}]->[{}]",
                    list(lhs.iter().map(|f| f.to_string()).collect()),
                    list(events.iter().map(|e| e.to_string()).collect()),
                    list(rhs.iter().map(|f| f.to_string()).collect())
                ),
                c,
                out,
            )
        }
        Process::SvInit { cell, value } => {
            let _ = write!(out, "[{} |-> {}]", term(cell), term(value));
        }
        Process::SvAssign { cell, value, cont: c } => cont(format!("{} := {}", term(cell), term(value)), c, out),
        Process::SvRead { cell, var, cont: c } => cont(format!("read {} as {var}", term(cell)), c, out),
        Process::SvLock(c) => cont("lock".to_string(), c, out),
        Process::SvUnlock(c) => cont("unlock".to_string(), c, out),
    }
}

/// Prints a SAPIC file: declarations (when the input declared its own
/// model), the process and the lemmas.
pub fn print_sapic_file(parsed: &Parsed) -> String {
    let mut s = String::new();
    let wrap = parsed.theory.is_some() || !parsed.lemmas.is_empty();
    if wrap {
        let _ = writeln!(s, "theory {}\nbegin\n", parsed.theory.as_deref().unwrap_or("Encoded"));
    }
    if parsed.declared_model {
        let m = &parsed.model;
        let decls: Vec<String> =
            m.symbols().iter().filter(|f| &*f.name != EQUAL).map(|f| format!("{}/{}", f.name, f.arity)).collect();
        let _ = writeln!(s, "functions: {}", decls.join(", "));
        let filtered: Vec<String> = m.filtered_rules().iter().map(|r| r.to_string()).collect();
        let eqs: Vec<String> = m
            .all_rules()
            .iter()
            .filter(|r| &*r.head != EQUAL)
            .map(|r| r.to_string())
            .filter(|r| !filtered.contains(r))
            .collect();
        if !eqs.is_empty() {
            let _ = writeln!(s, "equations:\n  {}", eqs.join(",\n  "));
        }
        for r in &filtered {
            let _ = writeln!(s, "// not subterm-convergent, omitted: {r}");
        }
        s.push('\n');
    }
    s.push_str(&print_process(&parsed.process));
    s.push('\n');
    for l in &parsed.lemmas {
        let _ = writeln!(s, "\nlemma {} {}", l.name, l.text);
    }
    if wrap {
        s.push_str("\nend\n");
    }
    s
}

/// Prints a StatVerif file: `fun`/`reduc` declarations, queries and the
/// main process.
pub fn print_statverif_file(parsed: &Parsed) -> String {
    let mut s = String::new();
    if parsed.declared_model {
        let m = &parsed.model;
        for f in m.constructors() {
            if !f.name.starts_with('\'') {
                let _ = writeln!(s, "fun {}/{}.", f.name, f.arity);
            }
        }
        for r in m.all_rules().iter().filter(|r| &*r.head != EQUAL) {
            let _ = writeln!(s, "reduc {r}.");
        }
    }
    if !parsed.queries.is_empty() {
        let qs: Vec<String> = parsed.queries.iter().map(term).collect();
        let _ = writeln!(s, "query att: {}.", qs.join(", "));
    }
    let _ = writeln!(s, "process\n  {}", print_process(&parsed.process));
    s
}

#[cfg(test)]
mod tests {
    use super::super::{parse_sapic, parse_statverif};
    use super::*;

    #[test]
    fn prints_sapic_constructs() {
        let p = parse_sapic("insert s,'init'").unwrap();
        assert_eq!(print_process(&p.process), "insert s,'init'");
        let p = parse_sapic("in(c, x); lock x; lookup x as y in out(y) else 0").unwrap();
        assert_eq!(print_process(&p.process), "in(c, x); lock x; lookup x as y in out(y) else 0");
    }

    #[test]
    fn dangling_else_is_parenthesised() {
        let src = "if a = b then (if c = d then 0) else out(c, a)";
        let p = parse_sapic(src).unwrap();
        let printed = print_process(&p.process);
        assert_eq!(printed, "if a = b then (if c = d then 0) else out(c, a)");
        assert_eq!(parse_sapic(&printed).unwrap().process, p.process);
    }

    #[test]
    fn parallel_children_are_grouped() {
        let p = parse_sapic("new n; out(c, n) | (in(c, x) | 0)").unwrap();
        let printed = print_process(&p.process);
        assert_eq!(parse_sapic(&printed).unwrap().process, p.process);
        let q = parse_sapic("(out(c, a) | out(c, b)) | out(c, d)").unwrap();
        let printed = print_process(&q.process);
        assert_eq!(printed, "((out(c, a)) | (out(c, b))) | (out(c, d))");
        assert_eq!(parse_sapic(&printed).unwrap().process, q.process);
    }

    #[test]
    fn statverif_round_trip() {
        let src = "new s; [s |-> init] | !(lock; in(c, x); read s as y; if y = init then s := x; unlock)";
        let p = parse_statverif(src).unwrap();
        let printed = print_statverif_file(&p);
        let q = parse_statverif(&printed).unwrap();
        assert_eq!(p.process, q.process);
    }
}

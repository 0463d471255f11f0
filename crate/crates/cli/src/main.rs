//! `spi`: parse, check, encode, verify and execute stateful applied pi
//! processes.
//!
//! Exit codes: 0 success or property holds, 1 property violated or
//! diagnostics reported, 2 usage or input error. Machine-readable output
//! goes to stdout as JSON lines; the human summary goes to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use spi_core::computational::{self, CompAction, CompTrace, DEFAULT_K};
use spi_core::explorer::{
    check_secrecy_statverif, check_with, differential_statverif, Bounds, CheckOptions, CheckReport, DiffOptions,
    PropertySpec, Verdict,
};
use spi_core::sapic::{run, Action, StepOptions};
use spi_core::statverif::encode_process;
use spi_core::syntax::{check_restrictions, parse, print_sapic_file, Dialect, LemmaKind, Parsed};
use spi_core::terms::{RuleMode, SymbolicModel};

#[derive(Parser)]
#[command(name = "spi", version, about = "Bounded symbolic analysis of stateful applied pi processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a file and report restriction violations.
    Check(InputArgs),
    /// Translate a StatVerif file into SAPIC.
    Encode(InputArgs),
    /// Check trace properties within bounds.
    Verify(VerifyArgs),
    /// Compare the direct StatVerif semantics with its SAPIC encoding.
    Diff(DiffArgs),
    /// Run a script against the computational implementation.
    Exec(ExecArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DialectArg {
    Sapic,
    Statverif,
}

#[derive(Clone, Copy, ValueEnum)]
enum RulesArg {
    /// Drop non-subterm destructor rules.
    Sapic,
    /// Keep every destructor rule.
    Statverif,
}

#[derive(Args)]
struct InputArgs {
    file: PathBuf,
    /// Input dialect; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    dialect: Option<DialectArg>,
}

#[derive(Args)]
struct ModelArgs {
    /// Enforce the typed message grammar (default: on for the built-in model).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    strict_grammar: Option<bool>,
    /// Destructor rule set.
    #[arg(long, value_enum)]
    rules: Option<RulesArg>,
    /// First-fit multiset matching instead of backtracking.
    #[arg(long)]
    greedy_match: bool,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, default_value_t = 40)]
    max_steps: usize,
    /// Copies spawned per replication site.
    #[arg(long, default_value_t = 2)]
    max_repl: u32,
    #[arg(long, default_value_t = 3)]
    recipe_depth: usize,
    /// Fresh nonces available to the adversary.
    #[arg(long, default_value_t = 1)]
    adv_nonces: usize,
}

impl BoundArgs {
    fn bounds(&self) -> Bounds {
        Bounds {
            max_steps: self.max_steps,
            max_repl_unfold: self.max_repl,
            max_recipe_depth: self.recipe_depth,
            max_new_adv_nonces: self.adv_nonces,
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    bounds: BoundArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Property `absence:<Event>` or `exclusive:<Event>`; repeatable.
    /// Without it, the file's lemmas (SAPIC) or secrecy queries
    /// (StatVerif) are checked.
    #[arg(long = "prop")]
    props: Vec<PropertySpec>,
    /// Write the first counterexample as JSON.
    #[arg(long)]
    witness: Option<PathBuf>,
    /// Write the steps of the first counterexample as JSON lines.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mutation {
    /// Encode without releasing the lock.
    DropUnlock,
}

#[derive(Args)]
struct DiffArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    bounds: BoundArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Configurations explored per side.
    #[arg(long, default_value_t = 200)]
    max_configs: usize,
    /// Seed a fault into the encoder to exercise the checker.
    #[arg(long, value_enum)]
    mutate: Option<Mutation>,
}

#[derive(Args)]
struct ExecArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// JSON array of actions. Payloads and channels are recipes such as
    /// `pair(x_1, nE_1)`, or hex byte strings with `--bytes`.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    bytes: bool,
    /// Security parameter in bits.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run the symbolic engine and compare event sequences.
    #[arg(long, conflicts_with = "bytes")]
    compare: bool,
    /// Print a hex dump of the run to stderr.
    #[arg(long)]
    hex_dump: bool,
    /// Write every step as JSON lines.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

/// A failure that ends the command with exit code 2.
struct Fatal(String);

impl<E: std::fmt::Display> From<E> for Fatal {
    fn from(e: E) -> Self {
        Fatal(e.to_string())
    }
}

type Res = Result<ExitCode, Fatal>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Check(a) => cmd_check(&a),
        Command::Encode(a) => cmd_encode(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Diff(a) => cmd_diff(&a),
        Command::Exec(a) => cmd_exec(&a),
    };
    match out {
        Ok(code) => code,
        Err(Fatal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dialect_of(a: &InputArgs) -> Result<Dialect, Fatal> {
    if let Some(d) = a.dialect {
        return Ok(match d {
            DialectArg::Sapic => Dialect::Sapic,
            DialectArg::Statverif => Dialect::StatVerif,
        });
    }
    a.file
        .extension()
        .and_then(|e| e.to_str())
        .and_then(Dialect::from_extension)
        .ok_or_else(|| Fatal(format!("cannot infer the dialect of {}; pass --dialect", a.file.display())))
}

fn read(path: &Path) -> Result<String, Fatal> {
    fs::read_to_string(path).map_err(|e| Fatal(format!("{}: {e}", path.display())))
}

fn load(a: &InputArgs) -> Result<Parsed, Fatal> {
    let d = dialect_of(a)?;
    let text = read(&a.file)?;
    parse(&text, d).map_err(|e| Fatal(format!("{}:{e}", a.file.display())))
}

fn configure(model: &mut SymbolicModel, m: &ModelArgs) -> Result<(), Fatal> {
    if let Some(r) = m.rules {
        model.set_mode(match r {
            RulesArg::Sapic => RuleMode::Sapic,
            RulesArg::Statverif => RuleMode::StatVerif,
        });
    }
    match m.strict_grammar {
        Some(true) if model.grammar().is_none() => model.enable_pkenc_grammar()?,
        Some(false) => model.strict_grammar = false,
        _ => {}
    }
    Ok(())
}

fn step_options(m: &ModelArgs) -> StepOptions {
    StepOptions { greedy_match: m.greedy_match }
}

fn emit(line: serde_json::Value) {
    println!("{line}");
}

fn write_file(path: &Path, text: &str) -> Result<(), Fatal> {
    fs::write(path, text).map_err(|e| Fatal(format!("{}: {e}", path.display())))
}

fn cmd_check(a: &InputArgs) -> Res {
    let d = dialect_of(a)?;
    let text = read(&a.file)?;
    let parsed = match parse(&text, d) {
        Ok(p) => p,
        Err(e) => {
            emit(json!({"file": a.file, "rule": "Syntax", "message": e.msg, "line": e.line, "col": e.col}));
            eprintln!("{}:{e}", a.file.display());
            return Ok(ExitCode::from(1));
        }
    };
    let diags = check_restrictions(&parsed.process, d);
    for g in &diags {
        emit(json!({"file": a.file, "rule": g.rule.to_string(), "message": g.message}));
        eprintln!("{}: {g}", a.file.display());
    }
    if diags.is_empty() {
        eprintln!("{}: ok ({d})", a.file.display());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{}: {} diagnostic(s)", a.file.display(), diags.len());
        Ok(ExitCode::from(1))
    }
}

fn cmd_encode(a: &InputArgs) -> Res {
    let parsed = load(a)?;
    if parsed.dialect != Dialect::StatVerif {
        return Err(Fatal(format!("{} is already in the SAPIC dialect", a.file.display())));
    }
    let encoded = encode_process(&parsed.process, false)?;
    let out = Parsed { dialect: Dialect::Sapic, process: encoded, lemmas: Vec::new(), queries: Vec::new(), ..parsed };
    print!("{}", print_sapic_file(&out));
    Ok(ExitCode::SUCCESS)
}

fn lemma_property(k: &LemmaKind) -> PropertySpec {
    match k {
        LemmaKind::Absence(e) => PropertySpec::Absence(e.clone()),
        LemmaKind::Exclusive(e) => PropertySpec::NeverBothDerivable(e.clone()),
    }
}

fn cmd_verify(a: &VerifyArgs) -> Res {
    let mut parsed = load(&a.input)?;
    configure(&mut parsed.model, &a.model)?;
    let diags = check_restrictions(&parsed.process, parsed.dialect);
    if let Some(g) = diags.first() {
        return Err(Fatal(format!("{}: {g}", a.input.file.display())));
    }
    let bounds = a.bounds.bounds();
    let opts = CheckOptions { jobs: a.jobs.max(1), step: step_options(&a.model) };

    let mut jobs: Vec<(String, Box<dyn Fn() -> Result<CheckReport, Fatal>>)> = Vec::new();
    let model = &parsed.model;
    match parsed.dialect {
        Dialect::Sapic => {
            let mut props: Vec<(String, PropertySpec)> = a.props.iter().map(|p| (p.to_string(), p.clone())).collect();
            if props.is_empty() {
                for l in &parsed.lemmas {
                    match &l.kind {
                        Some(k) => props.push((l.name.clone(), lemma_property(k))),
                        None => eprintln!("warning: lemma {} is not in a supported form; skipped", l.name),
                    }
                }
            }
            for (name, prop) in props {
                let p = parsed.process.clone();
                jobs.push((name, Box::new(move || Ok(check_with(model, &p, bounds, &prop, opts)?))));
            }
        }
        Dialect::StatVerif => {
            if a.props.is_empty() {
                for q in &parsed.queries {
                    let (p, q) = (parsed.process.clone(), q.clone());
                    jobs.push((
                        format!("secrecy:{q}"),
                        Box::new(move || Ok(check_secrecy_statverif(model, &p, &q, bounds, opts)?)),
                    ));
                }
            } else {
                let encoded = encode_process(&parsed.process, false)?;
                for prop in &a.props {
                    let (p, prop) = (encoded.clone(), prop.clone());
                    jobs.push((prop.to_string(), Box::new(move || Ok(check_with(model, &p, bounds, &prop, opts)?))));
                }
            }
        }
    }
    if jobs.is_empty() {
        return Err(Fatal("nothing to verify: pass --prop or declare a lemma or query".into()));
    }

    let mut violated = false;
    let mut wrote_witness = false;
    for (name, job) in jobs {
        let report = job()?;
        let (verdict, truncated) = match &report.verdict {
            Verdict::HoldsWithinBounds { truncated } => ("holds_within_bounds", *truncated),
            Verdict::Violated(_) => ("violated", false),
        };
        let mut line = json!({
            "property": name,
            "verdict": verdict,
            "truncated": truncated,
            "states": report.states,
        });
        if let Some(w) = report.verdict.witness() {
            line["witness"] = serde_json::to_value(w)?;
            if !wrote_witness {
                if let Some(path) = &a.witness {
                    write_file(path, &serde_json::to_string_pretty(w)?)?;
                }
                if let Some(path) = &a.trace_out {
                    let mut text = String::new();
                    for s in &w.trace.steps {
                        text.push_str(&serde_json::to_string(s)?);
                        text.push('\n');
                    }
                    write_file(path, &text)?;
                }
                wrote_witness = true;
            }
        }
        emit(line);
        eprintln!("{name}: {}", report.verdict);
        if truncated {
            eprintln!("warning: {name}: a bound was reached; the verdict covers the explored part only");
        }
        violated |= report.verdict.is_violated();
    }
    Ok(if violated { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_diff(a: &DiffArgs) -> Res {
    let mut parsed = load(&a.input)?;
    if parsed.dialect != Dialect::StatVerif {
        return Err(Fatal("diff needs a StatVerif input".into()));
    }
    configure(&mut parsed.model, &a.model)?;
    let diags = check_restrictions(&parsed.process, parsed.dialect);
    if let Some(g) = diags.first() {
        return Err(Fatal(format!("{}: {g}", a.input.file.display())));
    }
    let opts = DiffOptions {
        max_configs: a.max_configs,
        drop_unlock: matches!(a.mutate, Some(Mutation::DropUnlock)),
        ..DiffOptions::default()
    };
    let report = differential_statverif(&parsed.model, &parsed.process, a.bounds.bounds(), opts)?;
    emit(serde_json::to_value(&report)?);
    eprintln!(
        "{} StatVerif and {} SAPIC configurations, {} edges, {} unmatched",
        report.statverif_configs,
        report.sapic_configs,
        report.edges,
        report.unmatched.len()
    );
    for u in &report.unmatched {
        eprintln!("  {:?}: {} at {}", u.direction, u.action, u.config);
    }
    Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_exec(a: &ExecArgs) -> Res {
    let mut parsed = load(&a.input)?;
    configure(&mut parsed.model, &a.model)?;
    let process = match parsed.dialect {
        Dialect::Sapic => parsed.process.clone(),
        Dialect::StatVerif => encode_process(&parsed.process, false)?,
    };
    let script_text = match &a.script {
        Some(p) => read(p)?,
        None => "[]".to_string(),
    };
    let opts = step_options(&a.model);
    let trace: CompTrace = if a.bytes {
        let script: Vec<CompAction> = serde_json::from_str(&script_text)?;
        computational::exec_computational_with(&parsed.model, &process, &script, a.k, a.seed, opts)?
    } else {
        let script: Vec<Action> = serde_json::from_str(&script_text)?;
        let trace = computational::exec_recipes_with(&parsed.model, &process, &script, a.k, a.seed, opts)?;
        if a.compare {
            let (_, sym) = run(&parsed.model, &process, &script, opts)?;
            let agree = computational::events_agree(&sym.events(), &trace.events());
            emit(json!({"agreement": agree.is_ok(), "detail": agree.as_ref().err()}));
            if let Err(e) = agree {
                eprintln!("symbolic and computational runs disagree: {e}");
                print_events(&trace);
                return Ok(ExitCode::from(1));
            }
            eprintln!("symbolic and computational event sequences agree");
        }
        trace
    };
    print_events(&trace);
    if let Some(path) = &a.trace_out {
        let mut text = String::new();
        for s in &trace.steps {
            text.push_str(&serde_json::to_string(s)?);
            text.push('\n');
        }
        write_file(path, &text)?;
    }
    if a.hex_dump {
        let mut err = std::io::stderr().lock();
        let _ = err.write_all(trace.hex_dump().as_bytes());
    }
    eprintln!("{} steps, {} events, {} nonce draws", trace.steps.len(), trace.events().len(), trace.nonce_draws);
    Ok(ExitCode::SUCCESS)
}

fn print_events(trace: &CompTrace) {
    for e in trace.events() {
        emit(json!({"event": e.symbol.as_ref(), "args": e.args}));
    }
}

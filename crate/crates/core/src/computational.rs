//! A toy computational execution: the SAPIC control flow run over tagged
//! byte strings produced by a mock implementation of the symbolic model.
//!
//! Encoding format (one admissible choice; the model does not fix one):
//!
//! ```text
//! app   = 0x01, u8 name-length, name, u8 argc, { u32-be length, arg }
//! nonce = 0x02, k/8 random bytes
//! ```
//!
//! The format is prefix-free and injective. It is not a secure
//! implementation: every value can be decoded back to its term shape.

use std::collections::HashMap;
use std::fmt;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::deduction::Recipe;
use crate::sapic::{flatten, Action, StepOptions};
use crate::syntax::{alpha_rename, Event, Fact, Proc, Process};
use crate::terms::{
    eval_destructor, grammar_check, FuncKind, MatchOutcome, Nonce, Sym, SymbolicModel, Term, TermError, TermKind,
};

const TAG_APP: u8 = 0x01;
const TAG_NONCE: u8 = 0x02;

/// Default security parameter in bits.
pub const DEFAULT_K: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompError {
    #[error("security parameter must be a positive multiple of 8, got {0}")]
    BadSecurityParameter(usize),
    #[error("action not enabled: {0}")]
    NotEnabled(String),
    #[error("process index {0} out of range")]
    BadIndex(usize),
    #[error("construct `{0}` does not belong to the SAPIC dialect")]
    WrongDialect(&'static str),
    #[error("process is not closed: free variable {0}")]
    Open(Sym),
    #[error("unbound identifier {0}")]
    Unbound(Sym),
    #[error("cannot encode {0}")]
    Encode(String),
    #[error("knowledge handle {index} out of range ({len} entries)")]
    Handle { index: usize, len: usize },
    #[error("step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<CompError>,
    },
    #[error(transparent)]
    Term(#[from] TermError),
}

fn not_enabled(reason: impl Into<String>) -> CompError {
    CompError::NotEnabled(reason.into())
}

/// A tagged byte string.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring(pub Vec<u8>);

impl Bitstring {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Bitstring, hex::FromHexError> {
        hex::decode(s).map(Bitstring)
    }

    pub fn is_nonce(&self) -> bool {
        self.0.first() == Some(&TAG_NONCE)
    }
}

impl fmt::Debug for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.to_hex())
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Bitstring {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Bitstring {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Bitstring::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// `f(args)` in the tagged format.
pub fn encode_app(f: &str, args: &[Bitstring]) -> Result<Bitstring, CompError> {
    let name = f.as_bytes();
    let name_len = u8::try_from(name.len()).map_err(|_| CompError::Encode(format!("symbol `{f}` is too long")))?;
    let argc = u8::try_from(args.len()).map_err(|_| CompError::Encode(format!("`{f}` has too many arguments")))?;
    let mut out = Vec::with_capacity(3 + name.len() + args.iter().map(|a| 4 + a.0.len()).sum::<usize>());
    out.push(TAG_APP);
    out.push(name_len);
    out.extend_from_slice(name);
    out.push(argc);
    for a in args {
        let len = u32::try_from(a.0.len()).map_err(|_| CompError::Encode("argument too long".into()))?;
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&a.0);
    }
    Ok(Bitstring(out))
}

/// The term a decoded nonce stands for; its name carries the bytes.
fn nonce_term(bytes: &[u8]) -> Term {
    Term::nonce(Nonce::protocol(&format!("${}", hex::encode(bytes))))
}

/// Decodes a byte string to the term shape it encodes. Nonces become
/// nonce terms named `$<hex>`. `None` if the bytes are not well formed.
pub fn decode(b: &Bitstring) -> Option<Term> {
    let (t, rest) = decode_prefix(&b.0)?;
    rest.is_empty().then_some(t)
}

fn decode_prefix(bytes: &[u8]) -> Option<(Term, &[u8])> {
    let (&tag, rest) = bytes.split_first()?;
    match tag {
        TAG_NONCE => {
            if rest.is_empty() {
                return None;
            }
            Some((nonce_term(rest), &[]))
        }
        TAG_APP => {
            let (&n, rest) = rest.split_first()?;
            if rest.len() < n as usize {
                return None;
            }
            let (name, rest) = rest.split_at(n as usize);
            let name = std::str::from_utf8(name).ok()?;
            let (&argc, mut rest) = rest.split_first()?;
            let mut args = Vec::with_capacity(argc as usize);
            for _ in 0..argc {
                if rest.len() < 4 {
                    return None;
                }
                let (len, r) = rest.split_at(4);
                let len = u32::from_be_bytes(len.try_into().ok()?) as usize;
                if r.len() < len {
                    return None;
                }
                let (arg, r) = r.split_at(len);
                let (t, tail) = decode_prefix(arg)?;
                if !tail.is_empty() {
                    return None;
                }
                args.push(t);
                rest = r;
            }
            Some((Term::app(name, args), rest))
        }
        _ => None,
    }
}

/// Encodes a term built from constructors and decoded nonces.
pub fn encode_term(t: &Term) -> Result<Bitstring, CompError> {
    match t.kind() {
        TermKind::App(f, args) => {
            let args = args.iter().map(encode_term).collect::<Result<Vec<_>, _>>()?;
            encode_app(f, &args)
        }
        TermKind::Nonce(n) => {
            let bytes = n
                .name
                .strip_prefix('$')
                .and_then(|h| hex::decode(h).ok())
                .ok_or_else(|| CompError::Encode(format!("nonce {} has no bit representation", n.name)))?;
            let mut out = vec![TAG_NONCE];
            out.extend(bytes);
            Ok(Bitstring(out))
        }
        _ => Err(CompError::Encode(t.to_string())),
    }
}

/// The mock implementation: constructor and destructor algorithms and
/// nonce generation at security parameter `k`.
pub struct Implementation<'a> {
    model: &'a SymbolicModel,
    k: usize,
    rng: ChaCha20Rng,
    /// Nonces drawn so far.
    pub draws: usize,
}

impl<'a> Implementation<'a> {
    pub fn new(model: &'a SymbolicModel, k: usize, seed: u64) -> Result<Self, CompError> {
        if k == 0 || !k.is_multiple_of(8) {
            return Err(CompError::BadSecurityParameter(k));
        }
        Ok(Implementation { model, k, rng: ChaCha20Rng::seed_from_u64(seed), draws: 0 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Draws `k` uniformly random bits.
    pub fn fresh_nonce(&mut self) -> Bitstring {
        let mut out = vec![0u8; 1 + self.k / 8];
        out[0] = TAG_NONCE;
        self.rng.fill_bytes(&mut out[1..]);
        self.draws += 1;
        Bitstring(out)
    }

    /// `A_f`: tagged concatenation. Yields bottom only when a typed message
    /// grammar is active and rejects the result.
    pub fn impl_constructor(&self, f: &str, args: &[Bitstring]) -> Result<Option<Bitstring>, CompError> {
        let out = encode_app(f, args)?;
        if self.model.grammar().is_some() {
            let Some(t) = decode(&out) else { return Ok(None) };
            if grammar_check(self.model, &t) != MatchOutcome::Match {
                return Ok(None);
            }
        }
        Ok(Some(out))
    }

    /// `A_d`: decode, apply the rewrite rule to the decoded shape, re-encode.
    /// Undecodable inputs give bottom.
    pub fn impl_destructor(&self, d: &str, args: &[Bitstring]) -> Result<Option<Bitstring>, CompError> {
        let mut terms = Vec::with_capacity(args.len());
        for a in args {
            match decode(a) {
                Some(t) if self.well_formed(&t) => terms.push(t),
                _ => return Ok(None),
            }
        }
        match eval_destructor(self.model, d, &terms)? {
            Some(t) => encode_term(&t).map(Some),
            None => Ok(None),
        }
    }

    /// Runs the algorithm of a declared symbol.
    pub fn apply(&self, f: &str, args: &[Bitstring]) -> Result<Option<Bitstring>, CompError> {
        let s = self.model.symbol(f).ok_or_else(|| TermError::UnknownSymbol(f.to_string()))?;
        if s.arity != args.len() {
            return Err(TermError::Arity { name: f.to_string(), expected: s.arity, got: args.len() }.into());
        }
        match s.kind {
            FuncKind::Constructor => self.impl_constructor(f, args),
            FuncKind::Destructor => self.impl_destructor(f, args),
        }
    }

    /// Decoded shapes count only if every head is a declared constructor.
    fn well_formed(&self, t: &Term) -> bool {
        match t.kind() {
            TermKind::Nonce(_) => true,
            TermKind::App(f, args) => {
                self.model.symbol(f).is_some_and(|s| s.kind == FuncKind::Constructor && s.arity == args.len())
                    && args.iter().all(|a| self.well_formed(a))
            }
            _ => false,
        }
    }
}

/// Values of variables and names in scope of one process.
#[derive(Debug, Clone, Default)]
struct Env {
    vars: HashMap<Sym, Bitstring>,
    names: HashMap<Sym, Bitstring>,
}

/// An event with byte-string arguments.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct CompEvent {
    pub symbol: Sym,
    pub args: Vec<Bitstring>,
}

impl fmt::Display for CompEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self.args.iter().map(Bitstring::to_hex).collect();
        write!(f, "{}({})", self.symbol, args.join(", "))
    }
}

/// A ground fact over byte strings.
#[derive(Debug, Clone, PartialEq, Eq)]
struct CompFact {
    symbol: Sym,
    persistent: bool,
    args: Vec<Bitstring>,
}

/// The adversary's move at the byte level. A missing channel stands for
/// the channel the process itself uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CompAction {
    Schedule { proc: usize },
    AdvInput { proc: usize, channel: Option<Bitstring>, payload: Bitstring },
    AdvOutput { proc: usize, channel: Option<Bitstring> },
    Comm { sender: usize, receiver: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompLabel {
    Silent,
    Events { events: Vec<CompEvent> },
    Know { value: Bitstring },
    Input { channel: Bitstring, payload: Bitstring },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompStep {
    pub action: CompAction,
    pub label: CompLabel,
}

/// The outcome of a computational run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CompTrace {
    /// Values sent to the adversary at start: the free names, in order.
    pub initial: Vec<Bitstring>,
    pub steps: Vec<CompStep>,
    /// Nonces drawn by the protocol and the adversary.
    pub nonce_draws: usize,
}

impl CompTrace {
    pub fn events(&self) -> Vec<CompEvent> {
        self.steps
            .iter()
            .flat_map(|s| match &s.label {
                CompLabel::Events { events } => events.clone(),
                _ => Vec::new(),
            })
            .collect()
    }

    /// One line per message: the initial values, then each step's label.
    pub fn hex_dump(&self) -> String {
        let mut out = String::new();
        for (i, b) in self.initial.iter().enumerate() {
            out.push_str(&format!("init {i}: {b}\n"));
        }
        for (i, s) in self.steps.iter().enumerate() {
            let line = match &s.label {
                CompLabel::Silent => "silent".to_string(),
                CompLabel::Events { events } => events.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "),
                CompLabel::Know { value } => format!("out {value}"),
                CompLabel::Input { channel, payload } => format!("in {channel} {payload}"),
            };
            out.push_str(&format!("step {i}: {line}\n"));
        }
        out
    }
}

/// The computational execution state for one protocol run.
pub struct Machine<'a> {
    imp: Implementation<'a>,
    procs: Vec<(Proc, Env)>,
    cells: Vec<(Bitstring, Bitstring)>,
    msstate: Vec<CompFact>,
    locks: Vec<Bitstring>,
    /// Everything the adversary has received.
    pub knowledge: Vec<Bitstring>,
    adv_nonces: Vec<Bitstring>,
    trace: CompTrace,
    /// First-fit fact matching, as in the symbolic engine's option.
    pub greedy_match: bool,
}

impl<'a> Machine<'a> {
    /// Start: free names become fresh nonces, sent to the adversary in
    /// sorted order.
    pub fn start(model: &'a SymbolicModel, p0: &Proc, k: usize, seed: u64) -> Result<Self, CompError> {
        if let Some(v) = p0.free_vars().into_iter().next() {
            return Err(CompError::Open(v));
        }
        let mut imp = Implementation::new(model, k, seed)?;
        let p = alpha_rename(p0);
        let mut env = Env::default();
        let mut knowledge = Vec::new();
        for n in p.free_names() {
            let r = imp.fresh_nonce();
            knowledge.push(r.clone());
            env.names.insert(n, r);
        }
        let procs = flatten(&p).into_iter().map(|q| (q, env.clone())).collect();
        let trace = CompTrace { initial: knowledge.clone(), ..Default::default() };
        Ok(Machine {
            imp,
            procs,
            cells: Vec::new(),
            msstate: Vec::new(),
            locks: Vec::new(),
            knowledge,
            adv_nonces: Vec::new(),
            trace,
            greedy_match: false,
        })
    }

    pub fn trace(&self) -> &CompTrace {
        &self.trace
    }

    pub fn into_trace(mut self) -> CompTrace {
        self.trace.nonce_draws = self.imp.draws;
        self.trace
    }

    /// `ceval`: evaluates a term in an environment; `None` is bottom.
    fn eval(&self, t: &Term, env: &Env) -> Result<Option<Bitstring>, CompError> {
        match t.kind() {
            TermKind::Var(v) => env.vars.get(v).cloned().map(Some).ok_or_else(|| CompError::Unbound(v.clone())),
            TermKind::Name(n) => env.names.get(n).cloned().map(Some).ok_or_else(|| CompError::Unbound(n.clone())),
            TermKind::Nonce(_) | TermKind::Hole(_) => Err(CompError::Encode(t.to_string())),
            TermKind::App(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    match self.eval(a, env)? {
                        Some(v) => vals.push(v),
                        None => return Ok(None),
                    }
                }
                self.imp.apply(f, &vals)
            }
        }
    }

    fn eval_defined(&self, t: &Term, env: &Env, what: &str) -> Result<Bitstring, CompError> {
        self.eval(t, env)?.ok_or_else(|| not_enabled(format!("{what} `{t}` evaluates to bottom")))
    }

    fn eval_event(&self, e: &Event, env: &Env) -> Result<CompEvent, CompError> {
        let args = e.args.iter().map(|a| self.eval_defined(a, env, "event argument")).collect::<Result<_, _>>()?;
        Ok(CompEvent { symbol: e.symbol.clone(), args })
    }

    /// The adversary's `i`-th own nonce, drawn on first use.
    fn adv_nonce(&mut self, i: usize) -> Bitstring {
        while self.adv_nonces.len() <= i {
            let n = self.imp.fresh_nonce();
            self.adv_nonces.push(n);
        }
        self.adv_nonces[i].clone()
    }

    /// Computes a recipe over the adversary's view.
    pub fn eval_recipe(&mut self, r: &Recipe) -> Result<Option<Bitstring>, CompError> {
        match r {
            Recipe::Handle(i) => self
                .knowledge
                .get(*i)
                .cloned()
                .map(Some)
                .ok_or(CompError::Handle { index: *i, len: self.knowledge.len() }),
            Recipe::AdvNonce(i) => Ok(Some(self.adv_nonce(*i))),
            Recipe::App(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    match self.eval_recipe(a)? {
                        Some(v) => vals.push(v),
                        None => return Ok(None),
                    }
                }
                self.imp.apply(f, &vals)
            }
        }
    }

    /// Translates a symbolic action by computing its recipes on the
    /// adversary's current view.
    pub fn compile(&mut self, a: &Action) -> Result<CompAction, CompError> {
        let chan = |m: &mut Self, r: &Option<Recipe>| -> Result<Option<Bitstring>, CompError> {
            match r {
                Some(r) => {
                    m.eval_recipe(r)?.map(Some).ok_or_else(|| not_enabled(format!("channel recipe {r} is bottom")))
                }
                None => Ok(None),
            }
        };
        Ok(match a {
            Action::Schedule { proc } => CompAction::Schedule { proc: *proc },
            Action::Comm { sender, receiver } => CompAction::Comm { sender: *sender, receiver: *receiver },
            Action::AdvOutput { proc, channel } => CompAction::AdvOutput { proc: *proc, channel: chan(self, channel)? },
            Action::AdvInput { proc, channel, payload } => {
                let payload = payload.as_ref().ok_or_else(|| not_enabled("input without a payload recipe"))?;
                let channel = chan(self, channel)?;
                let payload = self
                    .eval_recipe(payload)?
                    .ok_or_else(|| not_enabled(format!("payload recipe {payload} is bottom")))?;
                CompAction::AdvInput { proc: *proc, channel, payload }
            }
        })
    }

    fn get(&self, i: usize) -> Result<(Proc, Env), CompError> {
        self.procs.get(i).cloned().ok_or(CompError::BadIndex(i))
    }

    fn replace(&mut self, i: usize, conts: Vec<(Proc, Env)>) {
        let mut new = Vec::new();
        for (c, env) in conts {
            new.extend(flatten(&c).into_iter().map(|q| (q, env.clone())));
        }
        self.procs.splice(i..=i, new);
    }

    fn check_channel(&self, given: &Option<Bitstring>, actual: &Bitstring) -> Result<(), CompError> {
        match given {
            Some(g) if g != actual => Err(not_enabled("adversary channel differs from the process channel")),
            _ => Ok(()),
        }
    }

    /// Performs one action.
    pub fn step(&mut self, action: &CompAction) -> Result<&CompStep, CompError> {
        let label = match action {
            CompAction::Schedule { proc } => self.internal(*proc)?,
            CompAction::AdvInput { proc, channel, payload } => {
                let (p, env) = self.get(*proc)?;
                let Process::In { chan, var, cont } = &*p else {
                    return Err(not_enabled(format!("process {proc} is not an input")));
                };
                let c = self.eval_defined(chan, &env, "channel")?;
                self.check_channel(channel, &c)?;
                let mut env2 = env.clone();
                env2.vars.insert(var.clone(), payload.clone());
                self.replace(*proc, vec![(cont.clone(), env2)]);
                CompLabel::Input { channel: c, payload: payload.clone() }
            }
            CompAction::AdvOutput { proc, channel } => {
                let (p, env) = self.get(*proc)?;
                let Process::Out { chan, msg, cont } = &*p else {
                    return Err(not_enabled(format!("process {proc} is not an output")));
                };
                let c = self.eval_defined(chan, &env, "channel")?;
                let m = self.eval_defined(msg, &env, "message")?;
                self.check_channel(channel, &c)?;
                self.knowledge.push(m.clone());
                self.replace(*proc, vec![(cont.clone(), env)]);
                CompLabel::Know { value: m }
            }
            CompAction::Comm { sender, receiver } => {
                if sender == receiver {
                    return Err(not_enabled("a process cannot talk to itself"));
                }
                let (ps, es) = self.get(*sender)?;
                let (pr, er) = self.get(*receiver)?;
                let Process::Out { chan: c1, msg, cont: p } = &*ps else {
                    return Err(not_enabled(format!("process {sender} is not an output")));
                };
                let Process::In { chan: c2, var, cont: q } = &*pr else {
                    return Err(not_enabled(format!("process {receiver} is not an input")));
                };
                let c1 = self.eval_defined(c1, &es, "channel")?;
                let c2 = self.eval_defined(c2, &er, "channel")?;
                let m = self.eval_defined(msg, &es, "message")?;
                if c1 != c2 {
                    return Err(not_enabled("channels differ"));
                }
                let mut er2 = er.clone();
                er2.vars.insert(var.clone(), m);
                let (hi, lo, hp, lp) = if sender > receiver {
                    (*sender, *receiver, (p.clone(), es), (q.clone(), er2))
                } else {
                    (*receiver, *sender, (q.clone(), er2), (p.clone(), es))
                };
                self.replace(hi, vec![hp]);
                self.replace(lo, vec![lp]);
                CompLabel::Silent
            }
        };
        self.trace.steps.push(CompStep { action: action.clone(), label });
        Ok(self.trace.steps.last().expect("just pushed"))
    }

    fn internal(&mut self, i: usize) -> Result<CompLabel, CompError> {
        let (p, env) = self.get(i)?;
        Ok(match &*p {
            Process::Nil | Process::Par(..) => return Err(not_enabled("nothing to do")),
            Process::In { .. } | Process::Out { .. } => {
                return Err(not_enabled("communication needs an input, output or comm action"))
            }
            Process::InPattern { .. } => return Err(CompError::WrongDialect("in(c, pattern)")),
            Process::SvInit { .. } => return Err(CompError::WrongDialect("[s |-> M]")),
            Process::SvAssign { .. } => return Err(CompError::WrongDialect("s := M")),
            Process::SvRead { .. } => return Err(CompError::WrongDialect("read")),
            Process::SvLock(_) => return Err(CompError::WrongDialect("lock")),
            Process::SvUnlock(_) => return Err(CompError::WrongDialect("unlock")),
            Process::Repl { body, copies } => {
                let rest = Process::Repl { body: body.clone(), copies: copies + 1 }.arc();
                self.replace(i, vec![(body.clone(), env.clone()), (rest, env)]);
                CompLabel::Silent
            }
            Process::New(n, q) => {
                let r = self.imp.fresh_nonce();
                let mut env2 = env;
                env2.names.insert(n.clone(), r);
                self.replace(i, vec![(q.clone(), env2)]);
                CompLabel::Silent
            }
            Process::Let { var, expr, then, else_ } => {
                match self.eval(expr, &env)? {
                    Some(v) => {
                        let mut env2 = env;
                        env2.vars.insert(var.clone(), v);
                        self.replace(i, vec![(then.clone(), env2)]);
                    }
                    None => self.replace(i, vec![(else_.clone(), env)]),
                }
                CompLabel::Silent
            }
            Process::If { lhs, rhs, then, else_ } => {
                let equal = match (self.eval(lhs, &env)?, self.eval(rhs, &env)?) {
                    (Some(a), Some(b)) => a == b,
                    _ => false,
                };
                let next = if equal { then } else { else_ };
                self.replace(i, vec![(next.clone(), env)]);
                CompLabel::Silent
            }
            Process::Event(e, q) => {
                let e = self.eval_event(e, &env)?;
                self.replace(i, vec![(q.clone(), env)]);
                CompLabel::Events { events: vec![e] }
            }
            Process::Insert { key, value, cont } => {
                let k = self.eval_defined(key, &env, "cell")?;
                let v = self.eval_defined(value, &env, "value")?;
                if let Some(j) = self.cells.iter().position(|(c, _)| *c == k) {
                    self.cells.remove(j);
                }
                self.cells.push((k, v));
                self.replace(i, vec![(cont.clone(), env)]);
                CompLabel::Silent
            }
            Process::Delete { key, cont } => {
                let k = self.eval_defined(key, &env, "cell")?;
                if let Some(j) = self.cells.iter().position(|(c, _)| *c == k) {
                    self.cells.remove(j);
                }
                self.replace(i, vec![(cont.clone(), env)]);
                CompLabel::Silent
            }
            Process::Lookup { key, var, then, else_ } => {
                let k = self.eval_defined(key, &env, "cell")?;
                match self.cells.iter().position(|(c, _)| *c == k) {
                    Some(j) => {
                        let mut env2 = env;
                        env2.vars.insert(var.clone(), self.cells[j].1.clone());
                        self.replace(i, vec![(then.clone(), env2)]);
                    }
                    None => match else_ {
                        Some(e) => self.replace(i, vec![(e.clone(), env)]),
                        None => return Err(not_enabled("cell is not set")),
                    },
                }
                CompLabel::Silent
            }
            Process::Lock(t, cont) => {
                let k = self.eval_defined(t, &env, "lock")?;
                if self.locks.contains(&k) {
                    return Err(not_enabled("already locked"));
                }
                self.locks.push(k);
                self.replace(i, vec![(cont.clone(), env)]);
                CompLabel::Silent
            }
            Process::Unlock(t, cont) => {
                let k = self.eval_defined(t, &env, "lock")?;
                let j = self.locks.iter().position(|l| *l == k).ok_or_else(|| not_enabled("not locked"))?;
                self.locks.remove(j);
                self.replace(i, vec![(cont.clone(), env)]);
                CompLabel::Silent
            }
            Process::Msr { lhs, events, rhs, cont } => self.msr(i, lhs, events, rhs, cont, env)?,
        })
    }

    fn msr(
        &mut self,
        i: usize,
        lhs: &[Fact],
        events: &[Event],
        rhs: &[Fact],
        cont: &Proc,
        env: Env,
    ) -> Result<CompLabel, CompError> {
        let mut pattern = Vec::with_capacity(lhs.len());
        for f in lhs {
            let mut args = Vec::with_capacity(f.args.len());
            for a in &f.args {
                args.push(match a.as_var() {
                    Some(v) if !env.vars.contains_key(v) => Pat::Var(v.clone()),
                    _ => Pat::Value(self.eval_defined(a, &env, "fact argument")?),
                });
            }
            pattern.push((f, args));
        }
        let order: Vec<&(&Fact, Vec<Pat>)> =
            pattern.iter().filter(|(f, _)| !f.persistent).chain(pattern.iter().filter(|(f, _)| f.persistent)).collect();
        let mut used = vec![false; self.msstate.len()];
        let mut consumed = Vec::new();
        let mut subst = HashMap::new();
        if !match_facts(&self.msstate, &order, self.greedy_match, 0, &mut used, &mut consumed, &mut subst) {
            return Err(not_enabled("no matching facts"));
        }
        let mut env2 = env;
        env2.vars.extend(subst);
        let mut raised = Vec::with_capacity(events.len());
        for e in events {
            raised.push(self.eval_event(e, &env2)?);
        }
        let mut added = Vec::with_capacity(rhs.len());
        for f in rhs {
            let args = f.args.iter().map(|a| self.eval_defined(a, &env2, "fact argument")).collect::<Result<_, _>>()?;
            added.push(CompFact { symbol: f.symbol.clone(), persistent: f.persistent, args });
        }
        consumed.sort_unstable();
        for j in consumed.into_iter().rev() {
            self.msstate.remove(j);
        }
        for f in added {
            if !(f.persistent && self.msstate.contains(&f)) {
                self.msstate.push(f);
            }
        }
        self.replace(i, vec![(cont.clone(), env2)]);
        Ok(if raised.is_empty() { CompLabel::Silent } else { CompLabel::Events { events: raised } })
    }
}

enum Pat {
    Var(Sym),
    Value(Bitstring),
}

/// Backtracking fact matching: linear facts first, consuming distinct
/// entries, then persistent ones without consumption. Greedy mode keeps
/// the first candidate for each fact.
fn match_facts(
    msstate: &[CompFact],
    order: &[&(&Fact, Vec<Pat>)],
    greedy: bool,
    k: usize,
    used: &mut Vec<bool>,
    consumed: &mut Vec<usize>,
    subst: &mut HashMap<Sym, Bitstring>,
) -> bool {
    let Some((pat, args)) = order.get(k).map(|x| (x.0, &x.1)) else { return true };
    for (i, fact) in msstate.iter().enumerate() {
        if fact.symbol != pat.symbol || fact.persistent != pat.persistent || fact.args.len() != args.len() {
            continue;
        }
        if !pat.persistent && used[i] {
            continue;
        }
        let mut s2 = subst.clone();
        let ok = args.iter().zip(&fact.args).all(|(p, a)| match p {
            Pat::Value(v) => v == a,
            Pat::Var(x) => match s2.get(x) {
                Some(b) => b == a,
                None => {
                    s2.insert(x.clone(), a.clone());
                    true
                }
            },
        });
        if !ok {
            continue;
        }
        if !pat.persistent {
            used[i] = true;
            consumed.push(i);
        }
        if match_facts(msstate, order, greedy, k + 1, used, consumed, &mut s2) {
            *subst = s2;
            return true;
        }
        if !pat.persistent {
            used[i] = false;
            consumed.pop();
        }
        if greedy {
            return false;
        }
    }
    false
}

/// Runs a byte-level script from the start of `p0`.
pub fn exec_computational(
    model: &SymbolicModel,
    p0: &Proc,
    script: &[CompAction],
    k: usize,
    seed: u64,
) -> Result<CompTrace, CompError> {
    exec_computational_with(model, p0, script, k, seed, StepOptions::default())
}

pub fn exec_computational_with(
    model: &SymbolicModel,
    p0: &Proc,
    script: &[CompAction],
    k: usize,
    seed: u64,
    opts: StepOptions,
) -> Result<CompTrace, CompError> {
    let mut m = Machine::start(model, p0, k, seed)?;
    m.greedy_match = opts.greedy_match;
    for (index, a) in script.iter().enumerate() {
        m.step(a).map_err(|e| CompError::Step { index, source: Box::new(e) })?;
    }
    Ok(m.into_trace())
}

/// Runs a symbolic script, compiling each recipe to bytes on the
/// adversary's view at the time it is used.
pub fn exec_recipes(
    model: &SymbolicModel,
    p0: &Proc,
    script: &[Action],
    k: usize,
    seed: u64,
) -> Result<CompTrace, CompError> {
    exec_recipes_with(model, p0, script, k, seed, StepOptions::default())
}

pub fn exec_recipes_with(
    model: &SymbolicModel,
    p0: &Proc,
    script: &[Action],
    k: usize,
    seed: u64,
    opts: StepOptions,
) -> Result<CompTrace, CompError> {
    let mut m = Machine::start(model, p0, k, seed)?;
    m.greedy_match = opts.greedy_match;
    for (index, a) in script.iter().enumerate() {
        let wrap = |e| CompError::Step { index, source: Box::new(e) };
        let c = m.compile(a).map_err(wrap)?;
        m.step(&c).map_err(wrap)?;
    }
    Ok(m.into_trace())
}

/// Checks that two event sequences agree up to a bijection between
/// symbolic nonces and the nonce byte strings of the computational run.
pub fn events_agree(symbolic: &[Event], computational: &[CompEvent]) -> Result<(), String> {
    if symbolic.len() != computational.len() {
        return Err(format!("{} symbolic events, {} computational", symbolic.len(), computational.len()));
    }
    let mut fwd: HashMap<Nonce, Nonce> = HashMap::new();
    let mut back: HashMap<Nonce, Nonce> = HashMap::new();
    for (i, (s, c)) in symbolic.iter().zip(computational).enumerate() {
        if s.symbol != c.symbol || s.args.len() != c.args.len() {
            return Err(format!("event {i}: {s} vs {c}"));
        }
        for (a, b) in s.args.iter().zip(&c.args) {
            let t = decode(b).ok_or_else(|| format!("event {i}: undecodable argument {b}"))?;
            if !same_shape(a, &t, &mut fwd, &mut back) {
                return Err(format!("event {i}: {a} does not correspond to {t}"));
            }
        }
    }
    Ok(())
}

fn same_shape(s: &Term, c: &Term, fwd: &mut HashMap<Nonce, Nonce>, back: &mut HashMap<Nonce, Nonce>) -> bool {
    match (s.kind(), c.kind()) {
        (TermKind::App(f, xs), TermKind::App(g, ys)) => {
            f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| same_shape(x, y, fwd, back))
        }
        (TermKind::Nonce(n), TermKind::Nonce(m)) => {
            let ok_f = fwd.get(n).is_none_or(|x| x == m);
            let ok_b = back.get(m).is_none_or(|x| x == n);
            if ok_f && ok_b {
                fwd.insert(n.clone(), m.clone());
                back.insert(m.clone(), n.clone());
            }
            ok_f && ok_b
        }
        _ => false,
    }
}

//! The `edge` command: check, run, and verify programs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use edge_core::ast::{validate_with, Program, SizeExpr};
use edge_core::engine::{instantiate, run_with, EngineError, RunLimits, Store};
use edge_core::fibertree::{Shape, Tensor};
use edge_core::operators::OperatorRegistry;
use edge_core::parser::parse_with_spans;
use edge_core::stdlib::{self, Pairing, StdlibError, Verdict};

use crate::io::{self, IoError, MatrixMarket};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

/// Overrides the default cascade generation limit.
pub const ENV_MAX_GENERATIONS: &str = "EDGE_MAX_GENERATIONS";
/// Overrides the default per-statement iteration cap.
pub const ENV_MAX_POINTS: &str = "EDGE_MAX_POINTS";

#[derive(Debug, Parser)]
#[command(name = "edge", version, about = "Extended Einsums over sparse tensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a program file.
    Check { program: PathBuf },
    /// Run a program and print tensor dumps.
    Run(RunArgs),
    /// Run a builtin graph program and compare it with its reference algorithm.
    Verify(VerifyArgs),
    /// List the builtin programs.
    List,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Program file.
    #[arg(required_unless_present = "builtin", conflicts_with = "builtin")]
    pub program: Option<PathBuf>,
    /// Name of a builtin program.
    #[arg(long)]
    pub builtin: Option<String>,
    /// MatrixMarket file bound to every two-rank user tensor without an --input.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Add the reverse of every graph edge.
    #[arg(long)]
    pub symmetrize: bool,
    /// Vertex ids, inline or in a file, bound to every list. Defaults to 0.
    #[arg(long)]
    pub sources: Option<String>,
    /// Size parameter, as `|V|=8` or `V=8`. Overrides inferred sizes.
    #[arg(long = "param", value_name = "NAME=N", value_parser = parse_param)]
    pub params: Vec<(String, u64)>,
    /// Bind a user tensor to a file: `.mtx` for MatrixMarket, anything else is a dump.
    #[arg(long = "input", value_name = "NAME=PATH", value_parser = parse_input)]
    pub inputs: Vec<(String, PathBuf)>,
    /// Passes each cascade may run before giving up.
    #[arg(long)]
    pub max_iters: Option<u64>,
    /// Tensors to print, in order. Defaults to every declared tensor.
    #[arg(long, value_delimiter = ',')]
    pub dump: Vec<String>,
    /// Write dumps here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Name of a builtin program with a reference algorithm.
    #[arg(long)]
    pub builtin: String,
    /// MatrixMarket graph.
    #[arg(long)]
    pub graph: PathBuf,
    /// Vertex ids, inline or in a file. Defaults to 0.
    #[arg(long)]
    pub sources: Option<String>,
    /// Passes each cascade may run before giving up.
    #[arg(long)]
    pub max_iters: Option<u64>,
}

fn parse_param(s: &str) -> Result<(String, u64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("`{s}` is not NAME=N"))?;
    let name = name.trim();
    let name = name
        .strip_prefix('|')
        .and_then(|n| n.strip_suffix('|'))
        .unwrap_or(name);
    if name.is_empty() {
        return Err(format!("`{s}` has no parameter name"));
    }
    let v = value
        .trim()
        .parse()
        .map_err(|_| format!("`{value}` is not a non-negative integer"))?;
    Ok((name.to_string(), v))
}

fn parse_input(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("`{s}` is not NAME=PATH")),
    }
}

/// A failed command: exit code and the message for standard error.
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn new(code: i32, msg: impl Into<String>) -> Self {
        Failure {
            code,
            msg: msg.into(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::new(EXIT_IO, e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::Invalid(_)
            | EngineError::Desugar(_)
            | EngineError::MissingUser(_)
            | EngineError::MissingParam(_)
            | EngineError::MissingList(_)
            | EngineError::BadInput { .. } => EXIT_INVALID,
            EngineError::GenerationLimit { .. }
            | EngineError::IterationCap { .. }
            | EngineError::OutOfShape { .. }
            | EngineError::PopulateSubset { .. }
            | EngineError::Op { .. }
            | EngineError::Tensor(_) => EXIT_RUNTIME,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<StdlibError> for Failure {
    fn from(e: StdlibError) -> Self {
        match e {
            StdlibError::Engine(e) => e.into(),
            StdlibError::Unknown { .. } | StdlibError::NoPairing(_) => {
                Failure::new(EXIT_IO, e.to_string())
            }
            StdlibError::Bind(_) | StdlibError::Tensor(_) => Failure::new(EXIT_INVALID, e.to_string()),
            StdlibError::Malformed(_) => Failure::new(EXIT_MISMATCH, e.to_string()),
            StdlibError::Oracle(_) => Failure::new(EXIT_RUNTIME, e.to_string()),
        }
    }
}

/// Parses `args` (program name first) and executes the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, reg: &OperatorRegistry, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                EXIT_IO
            } else {
                let _ = out.write_all(text.as_bytes());
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Check { program } => check(&program, reg, out, err),
        Command::Run(a) => run_program(&a, reg, out, err),
        Command::Verify(a) => verify(&a, reg, out, err),
        Command::List => list(out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            if !f.msg.is_empty() {
                let _ = writeln!(err, "edge: {}", f.msg);
            }
            f.code
        }
    }
}

fn write_out(out: &mut dyn Write, bytes: &[u8]) -> Result<(), Failure> {
    out.write_all(bytes)
        .map_err(|e| IoError::Write(e).into())
}

fn list(out: &mut dyn Write) -> Result<(), Failure> {
    let mut text = String::new();
    for (name, summary) in stdlib::list_programs() {
        text.push_str(&format!("{name:<24} {summary}\n"));
    }
    write_out(out, text.as_bytes())
}

fn read_source(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|source| {
        IoError::Read {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

/// Parses and validates program text, reporting problems as `path:line:col`.
fn load_program(
    label: &str,
    text: &str,
    reg: &OperatorRegistry,
    err: &mut dyn Write,
) -> Result<Program, Failure> {
    let parsed = match parse_with_spans(text) {
        Ok(p) => p,
        Err(errors) => {
            for e in &errors {
                let _ = writeln!(err, "{label}:{e}");
            }
            return Err(Failure::new(
                EXIT_INVALID,
                format!("{label}: {} syntax error(s)", errors.len()),
            ));
        }
    };
    let diags = validate_with(&parsed.program, reg);
    if diags.is_empty() {
        return Ok(parsed.program);
    }
    for d in &diags {
        match d.item.and_then(|i| parsed.item_spans.get(i)) {
            Some(span) => {
                let _ = writeln!(err, "{label}:{span}: {d}");
            }
            None => {
                let _ = writeln!(err, "{label}: {d}");
            }
        }
    }
    Err(Failure::new(
        EXIT_INVALID,
        format!("{label}: {} diagnostic(s)", diags.len()),
    ))
}

fn check(path: &Path, reg: &OperatorRegistry, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let text = read_source(path)?;
    load_program(&path.display().to_string(), &text, reg, err)?;
    write_out(out, format!("{}: ok\n", path.display()).as_bytes())
}

fn limits(max_iters: Option<u64>) -> Result<RunLimits, Failure> {
    let mut l = RunLimits::default();
    let env = |name: &str| -> Result<Option<u64>, Failure> {
        match std::env::var(name) {
            Ok(v) => v.trim().parse().map(Some).map_err(|_| {
                Failure::new(EXIT_IO, format!("{name}=`{v}` is not a non-negative integer"))
            }),
            Err(_) => Ok(None),
        }
    };
    if let Some(g) = max_iters.map(Some).unwrap_or(env(ENV_MAX_GENERATIONS)?) {
        l.max_generations = g;
    }
    if let Some(p) = env(ENV_MAX_POINTS)? {
        l.max_points = p;
    }
    Ok(l)
}

fn sources(arg: Option<&str>, err: &mut dyn Write) -> Result<Vec<u64>, Failure> {
    let list = io::load_id_list(arg.unwrap_or("0"))?;
    if !list.repeated.is_empty() {
        let dropped: Vec<String> = list.repeated.iter().map(u64::to_string).collect();
        let _ = writeln!(err, "edge: warning: ignoring repeated source(s) {}", dropped.join(", "));
    }
    Ok(list.ids)
}

enum Source {
    Matrix(MatrixMarket),
    Dump(Tensor),
}

impl Source {
    fn load(path: &Path) -> Result<Source, Failure> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")) {
            return Ok(Source::Matrix(MatrixMarket::read(path)?));
        }
        let mut tensors = io::load_dump(path)?;
        match tensors.len() {
            1 => Ok(Source::Dump(tensors.remove(0))),
            n => Err(Failure::new(
                EXIT_IO,
                format!("{}: expected one tensor, found {n}", path.display()),
            )),
        }
    }

    /// Extent of rank `i` when bound to a tensor with `ranks` ranks.
    fn extent(&self, i: usize, ranks: usize) -> Option<u64> {
        match self {
            Source::Matrix(m) if ranks == 1 => Some(m.rows),
            Source::Matrix(m) => [m.rows, m.cols].get(i).copied(),
            Source::Dump(t) => match t.decl().ranks.get(i)?.shape {
                Shape::Bounded(n) => Some(n),
                Shape::Unbounded => None,
            },
        }
    }
}

fn run_program(
    a: &RunArgs,
    reg: &OperatorRegistry,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let p = match (&a.program, &a.builtin) {
        (_, Some(name)) => {
            let np = stdlib::get_program(name)?;
            load_program(name, np.source, reg, err)?
        }
        (Some(path), None) => {
            let text = read_source(path)?;
            load_program(&path.display().to_string(), &text, reg, err)?
        }
        (None, None) => unreachable!("clap requires a program or --builtin"),
    };
    let dumps: Vec<String> = if a.dump.is_empty() {
        p.decls.iter().map(|d| d.name.clone()).collect()
    } else {
        a.dump.clone()
    };
    for name in &dumps {
        if p.decl(name).is_none() {
            return Err(Failure::new(EXIT_IO, format!("--dump: no tensor `{name}` in the program")));
        }
    }
    let users = p.user_tensors();
    let mut bound: BTreeMap<String, Source> = BTreeMap::new();
    for (name, path) in &a.inputs {
        if !users.contains(&name.as_str()) {
            return Err(Failure::new(
                EXIT_IO,
                format!("--input: `{name}` is not a user tensor of the program"),
            ));
        }
        bound.insert(name.clone(), Source::load(path)?);
    }
    if let Some(path) = &a.graph {
        let mut m = MatrixMarket::read(path)?;
        if a.symmetrize {
            m.symmetrize();
        }
        // Graphs are square even when the header is not.
        let n = m.vertices();
        m.rows = n;
        m.cols = n;
        for u in &users {
            let two_ranks = p.decl(u).is_some_and(|d| d.ranks.len() == 2);
            if two_ranks && !bound.contains_key(*u) {
                bound.insert(u.to_string(), Source::Matrix(m.clone()));
            }
        }
    }

    let mut store = Store::new();
    let explicit: BTreeMap<&str, u64> = a.params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mut inferred: BTreeMap<String, u64> = BTreeMap::new();
    for (name, src) in &bound {
        let d = p.decl(name).expect("bound names are user tensors");
        for (i, r) in d.ranks.iter().enumerate() {
            if let (SizeExpr::Param(x), Some(n)) = (&r.size, src.extent(i, d.ranks.len())) {
                let slot = inferred.entry(x.clone()).or_insert(n);
                *slot = (*slot).max(n);
            }
        }
    }
    for (k, v) in inferred {
        store.set_param(&k, v);
    }
    for (k, v) in &explicit {
        store.set_param(k, *v);
    }
    let ids = sources(a.sources.as_deref(), err)?;
    for l in p.lists() {
        store.set_list(&l, ids.clone());
    }
    for (name, src) in &bound {
        let d = p.decl(name).expect("bound names are user tensors");
        let decl = instantiate(d, &store)?;
        let bad = |reason: String| {
            Failure::from(EngineError::BadInput {
                name: name.clone(),
                reason,
            })
        };
        let t = match src {
            Source::Matrix(m) => m.to_tensor(&decl).map_err(|e| bad(e.to_string()))?,
            Source::Dump(given) => {
                if given.rank_count() != decl.rank_count() || given.dtype() != decl.dtype {
                    return Err(bad(format!(
                        "dump has {} ranks of {}, declaration has {} of {}",
                        given.rank_count(),
                        given.dtype(),
                        decl.rank_count(),
                        decl.dtype
                    )));
                }
                let mut t = Tensor::new(decl);
                for (pt, v) in given.iter() {
                    t.set(&pt, v).map_err(|e| bad(e.to_string()))?;
                }
                t
            }
        };
        store.insert(t);
    }

    let result = run_with(&p, store, limits(a.max_iters)?, reg)?;
    let mut text = Vec::new();
    for name in &dumps {
        let t = result.get(name).expect("declared tensors are in the store");
        io::dump_tensor(t, &mut text)?;
    }
    match &a.out {
        Some(path) => std::fs::write(path, &text).map_err(|e| IoError::Write(e).into()),
        None => write_out(out, &text),
    }
}

fn verify(
    a: &VerifyArgs,
    reg: &OperatorRegistry,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let np = stdlib::get_program(&a.builtin)?;
    if np.pairing == Pairing::None {
        let paired: Vec<&str> = stdlib::list_programs()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| stdlib::get_program(n).is_ok_and(|p| p.pairing != Pairing::None))
            .collect();
        return Err(Failure::new(
            EXIT_IO,
            format!(
                "`{}` has no reference algorithm; verifiable programs: {}",
                np.name,
                paired.join(", ")
            ),
        ));
    }
    let g = MatrixMarket::read(&a.graph)?.to_graph();
    let ids = sources(a.sources.as_deref(), err)?;
    match stdlib::verify(&np, &g, &ids, limits(a.max_iters)?, reg)? {
        Verdict::Pass => write_out(
            out,
            format!("PASS {} ({} oracle)\n", np.name, np.pairing.oracle_name()).as_bytes(),
        ),
        Verdict::Fail(m) => Err(Failure::new(EXIT_MISMATCH, format!("FAIL {}: {m}", np.name))),
    }
}

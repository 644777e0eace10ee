//! `reluplex` command-line tool.
//!
//! Exit codes: 0 UNSAT (the property holds), 1 SAT, 2 TIMEOUT, 3 UNKNOWN,
//! 64 usage error, 65 malformed input data, 66 unreadable or unwritable
//! file, 70 internal error. `--negate-query` swaps 0 and 1.

/// `println!` that ignores write errors such as a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! say_inline {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

mod report;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use reluplex::encoding::{solve_query, EncodeError, QueryOptions, QueryVerdict};
use reluplex::export::{to_big_m_lp, to_smtlib, BigM, ExportError, DEFAULT_BIG_M};
use reluplex::network::{Network, NetworkError};
use reluplex::property::{Query, QueryError};
use reluplex::reduction::{reduce, CnfFormula, ReductionError};
use reluplex::robustness::{
    check_local_robustness, robustness_binary_search, LabelConvention, RobustnessError,
    SearchStatus,
};
use reluplex::{Budget, SolverConfig};

use report::{aggregate, print_stats, print_witness, SCHEMA};

pub const EXIT_UNSAT: u8 = 0;
pub const EXIT_SAT: u8 = 1;
pub const EXIT_TIMEOUT: u8 = 2;
pub const EXIT_UNKNOWN: u8 = 3;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_DATA: u8 = 65;
pub const EXIT_IO: u8 = 66;
pub const EXIT_INTERNAL: u8 = 70;

#[derive(Parser, Debug)]
#[command(name = "reluplex", version, about = "Verify properties of ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decide a property query on a network.
    Solve(SolveArgs),
    /// Local adversarial robustness at a point, on a δ grid or by binary search.
    Robustness(RobustnessArgs),
    /// Write the query as SMT-LIB or as a big-M mixed-integer LP.
    Export(ExportArgs),
    /// Turn a DIMACS 3-SAT formula into a network and property.
    Reduce(ReduceArgs),
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Per-query time limit in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// ReLU repairs of one pair before splitting on it.
    #[arg(long, default_value_t = 5)]
    split_threshold: u32,
    /// Pivots between full bound-tightening passes.
    #[arg(long, default_value_t = 5000)]
    tighten_cadence: u64,
    /// Row residual that triggers tableau restoration.
    #[arg(long, default_value_t = 1e-6)]
    roundoff_threshold: f64,
    /// Pivots between roundoff checks.
    #[arg(long, default_value_t = 5000)]
    roundoff_cadence: u64,
    /// Shrink ReLU ranges by this amount; UNSAT then reports UNKNOWN.
    #[arg(long, default_value_t = 0.0)]
    under_approx: f64,
    /// Backtrack one split at a time instead of backjumping.
    #[arg(long)]
    chronological: bool,
    /// Worker threads for independent sub-queries.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Print a machine-readable report on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SolveArgs {
    network: PathBuf,
    property: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write split/conflict events as JSON lines.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// The query states the property itself: SAT means it holds.
    #[arg(long)]
    negate_query: bool,
}

#[derive(Args, Debug)]
struct RobustnessArgs {
    network: PathBuf,
    /// Comma-separated input point.
    #[arg(long, allow_hyphen_values = true)]
    point: String,
    /// δ values to check (comma-separated or repeated).
    #[arg(long, value_delimiter = ',', conflicts_with = "search")]
    delta: Vec<f64>,
    /// Binary search for the largest robust δ in [LO, HI].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    search: Option<Vec<f64>>,
    /// Width at which the binary search stops.
    #[arg(long, default_value_t = 1e-3)]
    precision: f64,
    /// The label is the highest-scoring output (default: lowest).
    #[arg(long)]
    max_label: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExportFormat {
    Smtlib,
    Lp,
}

#[derive(Args, Debug)]
struct ExportArgs {
    network: PathBuf,
    property: PathBuf,
    #[arg(long, value_enum)]
    format: ExportFormat,
    /// Big-M constant for the LP encoding (derived from the input box by default).
    #[arg(long)]
    big_m: Option<f64>,
    /// Output file; LP exports of disjunctive queries get `.<k>` suffixes.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReduceArgs {
    cnf: PathBuf,
    /// Discreteness slack; must be below 1/(clauses + 3).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Network output path (default: `<cnf stem>.net`).
    #[arg(long)]
    network_out: Option<PathBuf>,
    /// Property output path (default: `<cnf stem>.property.json`).
    #[arg(long)]
    property_out: Option<PathBuf>,
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    fn usage(msg: impl std::fmt::Display) -> Self {
        Self::new(EXIT_USAGE, anyhow::anyhow!("{msg}"))
    }
}

impl From<NetworkError> for Failure {
    fn from(e: NetworkError) -> Self {
        let code = if matches!(e, NetworkError::Io { .. }) {
            EXIT_IO
        } else {
            EXIT_DATA
        };
        Self::new(code, e)
    }
}

impl From<QueryError> for Failure {
    fn from(e: QueryError) -> Self {
        let code = if matches!(e, QueryError::Io { .. }) {
            EXIT_IO
        } else {
            EXIT_DATA
        };
        Self::new(code, e)
    }
}

impl From<EncodeError> for Failure {
    fn from(e: EncodeError) -> Self {
        match e {
            EncodeError::Query(q) => q.into(),
            other => Self::new(EXIT_INTERNAL, other),
        }
    }
}

impl From<RobustnessError> for Failure {
    fn from(e: RobustnessError) -> Self {
        match e {
            RobustnessError::Solve(s) => s.into(),
            RobustnessError::Network(n) => n.into(),
            other => Self::new(EXIT_USAGE, other),
        }
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Query(q) => q.into(),
            other => Self::new(EXIT_USAGE, other),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_IO, anyhow::anyhow!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Robustness(a) => cmd_robustness(a),
        Command::Export(a) => cmd_export(a),
        Command::Reduce(a) => cmd_reduce(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

impl SolverArgs {
    fn options(&self) -> Result<QueryOptions, Failure> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Failure::usage(format!("--{name} must be positive, got {v}")))
            }
        };
        if let Some(t) = self.timeout {
            positive("timeout", t)?;
        }
        positive("roundoff-threshold", self.roundoff_threshold)?;
        if self.split_threshold == 0 || self.tighten_cadence == 0 || self.roundoff_cadence == 0 {
            return Err(Failure::usage(
                "--split-threshold, --tighten-cadence and --roundoff-cadence must be positive",
            ));
        }
        if !(self.under_approx >= 0.0 && self.under_approx.is_finite()) {
            return Err(Failure::usage("--under-approx must be non-negative"));
        }
        if self.jobs == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        if self.jobs > 1 {
            // Only fails if a pool already exists, which is harmless.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(self.jobs)
                .build_global();
        }
        let config = SolverConfig {
            split_threshold: self.split_threshold,
            tighten_cadence: self.tighten_cadence,
            roundoff_threshold: self.roundoff_threshold,
            roundoff_cadence: self.roundoff_cadence,
            under_approx_epsilon: self.under_approx,
            backjumping: !self.chronological,
            ..SolverConfig::default()
        };
        let budget = match self.timeout {
            Some(t) => Budget::timeout(Duration::from_secs_f64(t)),
            None => Budget::unlimited(),
        };
        Ok(QueryOptions {
            config,
            budget,
            parallel: self.jobs > 1,
        })
    }
}

fn verdict_code(v: QueryVerdict) -> u8 {
    match v {
        QueryVerdict::Unsat => EXIT_UNSAT,
        QueryVerdict::Sat => EXIT_SAT,
        QueryVerdict::Timeout => EXIT_TIMEOUT,
        QueryVerdict::Unknown => EXIT_UNKNOWN,
    }
}

fn print_json(value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_INTERNAL, e))?;
    say!("{text}");
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<u8, Failure> {
    let net = Network::load(&args.network)?;
    let query = Query::load(&args.property)?;
    let mut opts = args.solver.options()?;
    opts.config.trace = args.trace.is_some();
    let outcome = solve_query(&net, &query, &opts)?;

    if let Some(path) = &args.trace {
        let file = File::create(path).map_err(|e| io_failure(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &outcome.results {
            for event in &r.trace {
                let mut value = serde_json::to_value(event).map_err(|e| Failure::new(EXIT_INTERNAL, e))?;
                value["sub_query"] = json!(r.index);
                writeln!(w, "{value}").map_err(|e| io_failure(path, e))?;
            }
        }
        w.flush().map_err(|e| io_failure(path, e))?;
    }

    let mut code = verdict_code(outcome.verdict);
    if args.negate_query && code <= EXIT_SAT {
        code = EXIT_SAT - code;
    }
    let holds = match (outcome.verdict, args.negate_query) {
        (QueryVerdict::Unsat, false) | (QueryVerdict::Sat, true) => Some(true),
        (QueryVerdict::Sat, false) | (QueryVerdict::Unsat, true) => Some(false),
        _ => None,
    };
    let stats = aggregate(outcome.results.iter().map(|r| &r.stats));
    if args.solver.json {
        print_json(&json!({
            "schema": SCHEMA,
            "command": "solve",
            "network": args.network,
            "property": args.property,
            "verdict": outcome.verdict,
            "property_holds": holds,
            "exit_code": code,
            "witness": outcome.witness,
            "sat_disjunct": outcome.sat_disjunct,
            "stats": stats,
            "relu_pairs": outcome.results.first().map_or(0, |r| r.relu_pairs),
            "sub_queries": outcome.results,
        }))?;
    } else {
        say!("{}", outcome.verdict.label());
        if let Some(h) = holds {
            say!("property {}", if h { "holds" } else { "violated" });
        }
        if let Some(w) = &outcome.witness {
            print_witness(w);
        }
        print_stats(&stats);
    }
    Ok(code)
}

fn parse_point(text: &str) -> Result<Vec<f64>, Failure> {
    let point: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    match point {
        Ok(p) if p.iter().all(|v| v.is_finite()) => Ok(p),
        _ => Err(Failure::usage(format!(
            "malformed point `{text}`: expected comma-separated numbers"
        ))),
    }
}

fn cmd_robustness(args: RobustnessArgs) -> Result<u8, Failure> {
    let net = Network::load(&args.network)?;
    let point = parse_point(&args.point)?;
    let opts = args.solver.options()?;
    let convention = if args.max_label {
        LabelConvention::MaxScore
    } else {
        LabelConvention::MinScore
    };
    if let Some(bracket) = &args.search {
        let (lo, hi) = (bracket[0], bracket[1]);
        let out = robustness_binary_search(
            &net,
            &point,
            lo,
            hi,
            args.precision,
            None,
            convention,
            &opts,
        )?;
        let code = match out.status {
            SearchStatus::NoAdversarialUpTo => EXIT_UNSAT,
            SearchStatus::Bracketed | SearchStatus::AdversarialAtLower => EXIT_SAT,
            SearchStatus::Aborted => EXIT_TIMEOUT,
        };
        if args.solver.json {
            print_json(&json!({
                "schema": SCHEMA,
                "command": "robustness-search",
                "point": point,
                "status": out.status,
                "bracket": out.bracket,
                "steps": out.steps,
                "exit_code": code,
            }))?;
        } else {
            for s in &out.steps {
                say!("delta {:<12} {}", s.delta, s.verdict.label());
            }
            match out.status {
                SearchStatus::NoAdversarialUpTo => {
                    say!("no adversarial input within delta {}", out.bracket.1)
                }
                SearchStatus::AdversarialAtLower => {
                    say!("adversarial input already at delta {}", out.bracket.0)
                }
                SearchStatus::Bracketed => say!(
                    "largest robust delta in [{}, {}]",
                    out.bracket.0, out.bracket.1
                ),
                SearchStatus::Aborted => say!(
                    "search aborted; boundary in [{}, {}]",
                    out.bracket.0, out.bracket.1
                ),
            }
        }
        return Ok(code);
    }
    if args.delta.is_empty() {
        return Err(Failure::usage("give --delta values or --search LO HI"));
    }
    let mut rows = Vec::with_capacity(args.delta.len());
    for &delta in &args.delta {
        rows.push(check_local_robustness(
            &net, &point, delta, None, convention, &opts,
        )?);
    }
    let verdict = rows
        .iter()
        .map(|r| r.verdict)
        .fold(QueryVerdict::Unsat, |acc, v| match (acc, v) {
            (QueryVerdict::Sat, _) | (_, QueryVerdict::Sat) => QueryVerdict::Sat,
            (QueryVerdict::Timeout, _) | (_, QueryVerdict::Timeout) => QueryVerdict::Timeout,
            (QueryVerdict::Unknown, _) | (_, QueryVerdict::Unknown) => QueryVerdict::Unknown,
            _ => QueryVerdict::Unsat,
        });
    let code = verdict_code(verdict);
    if args.solver.json {
        print_json(&json!({
            "schema": SCHEMA,
            "command": "robustness",
            "point": point,
            "verdict": verdict,
            "exit_code": code,
            "results": rows,
        }))?;
    } else {
        say!("label {}", rows[0].label);
        for r in &rows {
            let stats = aggregate(r.stats.iter());
            say_inline!("delta {:<12} {:<8}", r.delta, r.verdict.label());
            match r.competitor {
                Some(j) => say_inline!(" competitor {j}"),
                None => say_inline!("             "),
            }
            say!(
                "  splits {} depth {} time {:.3}s",
                stats.total_splits, stats.max_stack_depth, stats.wall_time
            );
        }
    }
    Ok(code)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn cmd_export(args: ExportArgs) -> Result<u8, Failure> {
    let net = Network::load(&args.network)?;
    let query = Query::load(&args.property)?;
    let files = match args.format {
        ExportFormat::Smtlib => vec![to_smtlib(&net, &query)?],
        ExportFormat::Lp => {
            let big_m = match args.big_m {
                Some(m) => BigM::Fixed(m),
                None => BigM::Auto,
            };
            let lp = match to_big_m_lp(&net, &query, big_m) {
                Err(ExportError::UnboundedInputs) => {
                    eprintln!(
                        "WARNING: input box is unbounded; using big-M = {DEFAULT_BIG_M}, \
                         which is NOT validated against reachable values"
                    );
                    to_big_m_lp(&net, &query, BigM::Fixed(DEFAULT_BIG_M))?
                }
                other => other?,
            };
            if !lp.validated {
                eprintln!(
                    "WARNING: big-M = {} could not be validated (unbounded inputs)",
                    lp.big_m
                );
            }
            lp.files
        }
    };
    match &args.output {
        None => {
            for f in &files {
                say_inline!("{f}");
            }
        }
        Some(path) if files.len() == 1 => write_text(path, &files[0])?,
        Some(path) => {
            for (k, f) in files.iter().enumerate() {
                let mut p = path.clone().into_os_string();
                p.push(format!(".{k}"));
                write_text(Path::new(&p), f)?;
            }
        }
    }
    Ok(0)
}

fn cmd_reduce(args: ReduceArgs) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(&args.cnf).map_err(|e| io_failure(&args.cnf, e))?;
    let formula = CnfFormula::parse_dimacs(&text).map_err(|e| Failure::new(EXIT_DATA, e))?;
    let epsilon = args.epsilon.unwrap_or_else(|| formula.default_epsilon());
    let (net, query) = reduce(&formula, epsilon).map_err(|e| match e {
        ReductionError::Epsilon { .. } | ReductionError::NoClauses => Failure::new(EXIT_USAGE, e),
        other => Failure::new(EXIT_DATA, other),
    })?;
    let stem = args
        .cnf
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "reduced".into());
    let dir = args.cnf.parent().unwrap_or(Path::new("."));
    let net_path = args
        .network_out
        .unwrap_or_else(|| dir.join(format!("{stem}.net")));
    let prop_path = args
        .property_out
        .unwrap_or_else(|| dir.join(format!("{stem}.property.json")));
    net.save(&net_path)?;
    query.save(&prop_path)?;
    say!(
        "{} variables, {} clauses, {} ReLUs, epsilon {}",
        formula.num_vars,
        formula.clauses.len(),
        net.num_relus(),
        epsilon
    );
    say!("network  {}", net_path.display());
    say!("property {}", prop_path.display());
    Ok(0)
}

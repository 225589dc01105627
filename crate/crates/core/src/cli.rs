//! Batch command-line front end.
//!
//! Every artifact starts with a manifest holding the resolved parameters.
//! Settings resolve as command-line flag, then `--config` file entry, then
//! built-in default. The config file holds `key = value` lines using the
//! long flag names (`n`, `alpha`, `rho`, `seed`, `reps`, `quad-tol`, …);
//! `#` starts a comment and lists are comma separated.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 numerical
//! non-convergence or failed certification.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::bounds::{asymptotic_rescaled_level, corrected_bonferroni_level, line_bound};
use crate::error::FwerError;
use crate::exact::{
    asymptotic_diagnostics, convexity_scan, h_exact, h_prime, h_second, lemma_ladder,
};
use crate::mc::{
    self, reproduce_table1, simulate_fwer, McSpec, REFERENCE_FWER_HAT, TABLE1_ALPHA, TABLE1_RHO,
};
use crate::model::{cutoff_from_level, ModelConfig};
use crate::quadrature::{QuadratureMethod, QuadratureSpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
const SCHEMA_VERSION: u32 = 1;

const CONFIG_KEYS: &[&str] = &[
    "n",
    "alpha",
    "alpha-n",
    "rho",
    "seed",
    "reps",
    "streams",
    "format",
    "quad-method",
    "quad-nodes",
    "quad-tol",
];

#[derive(Parser, Debug)]
#[command(
    name = "fwer",
    version,
    about = "Family-wise error rate of Bonferroni tests under equicorrelation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Output format [default: csv]
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write the artifact here instead of standard output
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Key-value settings file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Quadrature rule [default: adaptive]
    #[arg(long, global = true, value_enum)]
    quad_method: Option<Method>,
    /// Gauss–Hermite node count [default: 201]
    #[arg(long, global = true)]
    quad_nodes: Option<usize>,
    /// Relative quadrature tolerance (absolute tolerance is a tenth of it)
    #[arg(long, global = true)]
    quad_tol: Option<f64>,
    /// Record the current UTC time in the manifest (breaks byte-identical reruns)
    #[arg(long, global = true)]
    timestamp: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Adaptive,
    Hermite,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quadrature FWER and curvature terms
    Exact(ExactArgs),
    /// Monte Carlo FWER estimate
    Simulate(SimulateArgs),
    /// 36-cell simulation design with exact and bound columns
    Table1(Table1Args),
    /// Convexity, asymptotic and curvature-term diagnostics (long format)
    Scan(ScanArgs),
    /// Correlation-corrected per-test level from the chord bound
    Correct(CorrectArgs),
    /// Print the tool version
    Version,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct ExactArgs {
    /// Number of hypotheses [default: 10000]
    #[arg(long)]
    n: Option<u64>,
    /// Family level, per-test level alpha/n [default: 0.05]
    #[arg(long)]
    alpha: Option<f64>,
    /// Per-test level (overrides --alpha)
    #[arg(long = "alpha-n")]
    alpha_n: Option<f64>,
    /// Correlation or comma-separated grid [default: 0.5]
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct SimulateArgs {
    /// [default: 10000]
    #[arg(long)]
    n: Option<u64>,
    /// [default: 0.05]
    #[arg(long)]
    alpha: Option<f64>,
    /// [default: 0.5]
    #[arg(long)]
    rho: Option<f64>,
    /// Replications [default: 10000]
    #[arg(long)]
    reps: Option<u64>,
    /// [default: 12345]
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent replication blocks; never changes the result [default: 8]
    #[arg(long)]
    streams: Option<usize>,
}

#[derive(Args, Debug)]
struct Table1Args {
    /// [default: 12345]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: 10000]
    #[arg(long)]
    reps: Option<u64>,
    /// [default: 10000]
    #[arg(long)]
    n: Option<u64>,
    /// [default: 8]
    #[arg(long)]
    streams: Option<usize>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct ScanArgs {
    /// Comma-separated ladder [default: 100,1000,10000]
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u64>>,
    /// [default: 0.05]
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated grid [default: 0.1,0.2,…,0.9]
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct CorrectArgs {
    /// Target family level [default: 0.05]
    #[arg(long)]
    alpha: Option<f64>,
    /// [default: 0.5]
    #[arg(long)]
    rho: Option<f64>,
    /// [default: 10000]
    #[arg(long)]
    n: Option<u64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<FwerError> for CliError {
    fn from(e: FwerError) -> Self {
        match e {
            FwerError::Domain(_) => CliError::Usage(e.to_string()),
            FwerError::NonConvergence { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Provenance record written at the top of every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// Resolves settings and records what was used.
struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, Value>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            file = parse_config(&text)?;
        }
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn raw<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.file
            .get(key)
            .map(|s| {
                s.parse()
                    .map_err(|_| usage(format!("config key {key}: cannot parse {s:?}")))
            })
            .transpose()
    }

    fn raw_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        self.file
            .get(key)
            .map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| {
                        p.parse()
                            .map_err(|_| usage(format!("config key {key}: cannot parse {p:?}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Flag, then file, then default; the result is recorded.
    fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Serialize + Clone,
    {
        let v = match flag {
            Some(v) => v,
            None => self.raw(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Like [`Settings::value`] without a default.
    fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Serialize + Clone,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.raw(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    fn list<T>(
        &mut self,
        key: &str,
        flag: Option<Vec<T>>,
        default: Vec<T>,
    ) -> Result<Vec<T>, CliError>
    where
        T: FromStr + Serialize + Clone,
    {
        let v = match flag {
            Some(v) => v,
            None => self.raw_list(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Resolved but left out of the manifest (execution detail only).
    fn unrecorded<T: FromStr>(
        &self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, CliError> {
        Ok(match flag {
            Some(v) => v,
            None => self.raw(key)?.unwrap_or(default),
        })
    }

    fn record<T: Serialize>(&mut self, key: &str, v: &T) {
        self.resolved.insert(
            key.to_string(),
            serde_json::to_value(v).unwrap_or(Value::Null),
        );
    }
}

fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(usage(format!("config line {}: unknown key {key:?}", i + 1)));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn quadrature(common: &Common, settings: &mut Settings) -> Result<QuadratureSpec, CliError> {
    let method = match common.quad_method {
        Some(m) => m,
        None => match settings.file.get("quad-method").map(String::as_str) {
            None | Some("adaptive") => Method::Adaptive,
            Some("hermite") => Method::Hermite,
            Some(other) => return Err(usage(format!("unknown quadrature method {other:?}"))),
        },
    };
    let nodes = settings.value("quad-nodes", common.quad_nodes, 201usize)?;
    let mut spec = match method {
        Method::Adaptive => QuadratureSpec::adaptive(),
        Method::Hermite => QuadratureSpec::gauss_hermite(nodes),
    };
    settings.record(
        "quad-method",
        &match spec.method {
            QuadratureMethod::AdaptiveSubdivision => "adaptive",
            QuadratureMethod::GaussHermite => "hermite",
        },
    );
    if let Some(tol) = settings.optional("quad-tol", common.quad_tol)? {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(usage(format!("--quad-tol must lie in (0, 1), got {tol}")));
        }
        spec = spec.with_tolerances(0.1 * tol, tol);
    }
    spec.validate()?;
    Ok(spec)
}

fn timestamp(requested: bool) -> Option<String> {
    use chrono::{DateTime, SecondsFormat, Utc};
    let at = if requested {
        Some(Utc::now())
    } else {
        std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse::<i64>().ok())
            .and_then(|s| DateTime::from_timestamp(s, 0))
    };
    at.map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
}

/// One output cell.
#[derive(Debug, Clone)]
enum Cell {
    F(f64),
    U(u64),
    B(bool),
    S(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(x) => format!("{x:.16e}"),
            Cell::U(k) => k.to_string(),
            Cell::B(b) => b.to_string(),
            Cell::S(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(x) if x.is_finite() => json!(x),
            Cell::F(_) | Cell::Empty => Value::Null,
            Cell::U(k) => json!(k),
            Cell::B(b) => json!(b),
            Cell::S(s) => json!(s),
        }
    }
}

fn opt(x: Option<f64>) -> Cell {
    x.map_or(Cell::Empty, Cell::F)
}

struct Table {
    schema: &'static str,
    columns: &'static [&'static str],
    rows: Vec<Vec<Cell>>,
    summary: Vec<String>,
}

impl Table {
    fn new(schema: &'static str, columns: &'static [&'static str]) -> Self {
        Self {
            schema,
            columns,
            rows: Vec::new(),
            summary: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn render(&self, manifest: &RunManifest, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut out = String::new();
                let _ = writeln!(
                    out,
                    "# manifest: {}",
                    serde_json::to_string(manifest).expect("manifest")
                );
                let _ = writeln!(out, "# schema: {} v{SCHEMA_VERSION}", self.schema);
                let _ = writeln!(out, "{}", self.columns.join(","));
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                    let _ = writeln!(out, "{}", cells.join(","));
                }
                for line in &self.summary {
                    let _ = writeln!(out, "# summary: {line}");
                }
                out
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let obj: serde_json::Map<String, Value> = self
                            .columns
                            .iter()
                            .zip(row)
                            .map(|(k, c)| (k.to_string(), c.json()))
                            .collect();
                        Value::Object(obj)
                    })
                    .collect();
                let doc = json!({
                    "manifest": manifest,
                    "schema": format!("{} v{SCHEMA_VERSION}", self.schema),
                    "rows": rows,
                    "summary": self.summary,
                });
                let mut s = serde_json::to_string_pretty(&doc).expect("json");
                s.push('\n');
                s
            }
        }
    }
}

/// Result of one command: the table, and an error to report after it is written.
struct Outcome {
    table: Table,
    seed: Option<u64>,
    failure: Option<CliError>,
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{e}");
                    1
                }
            };
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            if e.code() == 1 {
                let _ = writeln!(stderr, "run with --help for usage");
            }
            e.code()
        }
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut settings = Settings::load(cli.common.config.as_deref())?;
    let format = match cli.common.format {
        Some(f) => f,
        None => match settings.file.get("format").map(String::as_str) {
            None | Some("csv") => Format::Csv,
            Some("json") => Format::Json,
            Some(other) => return Err(usage(format!("unknown format {other:?}"))),
        },
    };
    let (name, outcome) = match cli.command {
        Command::Version => {
            writeln!(stdout, "fwer {TOOL_VERSION}").map_err(|e| usage(e.to_string()))?;
            return Ok(());
        }
        Command::Exact(a) => ("exact", cmd_exact(a, &cli.common, &mut settings)?),
        Command::Simulate(a) => ("simulate", cmd_simulate(a, &mut settings)?),
        Command::Table1(a) => ("table1", cmd_table1(a, &cli.common, &mut settings)?),
        Command::Scan(a) => ("scan", cmd_scan(a, &cli.common, &mut settings)?),
        Command::Correct(a) => ("correct", cmd_correct(a, &cli.common, &mut settings)?),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        parameters: std::mem::take(&mut settings.resolved),
        seed: outcome.seed,
        tool_version: TOOL_VERSION.to_string(),
        timestamp: timestamp(cli.common.timestamp),
    };
    let text = outcome.table.render(&manifest, format);
    match &cli.common.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?,
        None => match stdout.write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                return Err(usage(e.to_string()))
            }
            _ => {}
        },
    }
    outcome.failure.map_or(Ok(()), Err)
}

fn first_numerical(errors: impl IntoIterator<Item = FwerError>) -> Option<CliError> {
    errors
        .into_iter()
        .next()
        .map(|e| CliError::Numerical(e.to_string()))
}

fn cmd_exact(a: ExactArgs, common: &Common, s: &mut Settings) -> Result<Outcome, CliError> {
    let n = s.value("n", a.n, 10_000u64)?;
    let alpha_n = match s.optional("alpha-n", a.alpha_n)? {
        Some(level) => level,
        None => {
            let alpha = s.value("alpha", a.alpha, 0.05)?;
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(usage(format!("--alpha must lie in (0, 1), got {alpha}")));
            }
            alpha / n.max(1) as f64
        }
    };
    let grid = s.list("rho", a.rho, vec![0.5])?;
    if grid.is_empty() {
        return Err(usage("empty correlation grid"));
    }
    let spec = quadrature(common, s)?;
    let configs = grid
        .iter()
        .map(|&rho| ModelConfig::new(n, rho, alpha_n))
        .collect::<Result<Vec<_>, _>>()?;

    let mut table = Table::new(
        "exact",
        &[
            "rho",
            "h",
            "fwer",
            "h_prime",
            "h_second",
            "term1",
            "term2",
            "term3",
            "quad_error",
            "status",
        ],
    );
    let mut errors = Vec::new();
    for c in &configs {
        let row = (|| -> Result<Vec<Cell>, FwerError> {
            let e = h_exact(c, &spec)?;
            let interior = c.rho() > 0.0 && c.rho() < 1.0;
            let (hp, hs) = if interior {
                (Some(h_prime(c, &spec)?), Some(h_second(c, &spec)?))
            } else {
                (None, None)
            };
            let err = e.quad_error_estimate
                + hp.map_or(0.0, |i| i.error)
                + hs.map_or(0.0, |b| b.quad_error_estimate);
            Ok(vec![
                Cell::F(c.rho()),
                Cell::F(e.h),
                Cell::F(e.fwer),
                opt(hp.map(|i| i.value)),
                opt(hs.map(|b| b.total)),
                opt(hs.map(|b| b.term1)),
                opt(hs.map(|b| b.term2)),
                opt(hs.map(|b| b.term3)),
                Cell::F(err),
                Cell::S("ok".into()),
            ])
        })();
        match row {
            Ok(r) => table.push(r),
            Err(e) => {
                let mut r = vec![Cell::F(c.rho())];
                r.extend(std::iter::repeat_n(Cell::Empty, 8));
                r.push(Cell::S(e.to_string()));
                table.push(r);
                errors.push(e);
            }
        }
    }
    Ok(Outcome {
        table,
        seed: None,
        failure: first_numerical(errors),
    })
}

fn cmd_simulate(a: SimulateArgs, s: &mut Settings) -> Result<Outcome, CliError> {
    let n = s.value("n", a.n, 10_000u64)?;
    let alpha = s.value("alpha", a.alpha, 0.05)?;
    let rho = s.value("rho", a.rho, 0.5)?;
    let reps = s.value("reps", a.reps, 10_000u64)?;
    let seed = s.value("seed", a.seed, 12_345u64)?;
    let streams = s.unrecorded("streams", a.streams, 8usize)?;
    let config = ModelConfig::bonferroni(n, alpha, rho)?;
    let spec = McSpec::new(reps, seed, streams)?;
    let e = simulate_fwer(&config, &spec);
    let mut table = Table::new(
        "simulate",
        &[
            "n",
            "alpha",
            "alpha_n",
            "rho",
            "cutoff",
            "fwer_hat",
            "exceedances",
            "replications",
            "std_error",
            "ci95_low",
            "ci95_high",
            "seed",
        ],
    );
    table.push(vec![
        Cell::U(n),
        Cell::F(alpha),
        Cell::F(config.alpha_n()),
        Cell::F(rho),
        Cell::F(config.cutoff()),
        Cell::F(e.fwer_hat),
        Cell::U(e.exceedances),
        Cell::U(e.replications),
        Cell::F(e.std_error),
        Cell::F(e.ci95_low),
        Cell::F(e.ci95_high),
        Cell::U(e.seed),
    ]);
    Ok(Outcome {
        table,
        seed: Some(seed),
        failure: None,
    })
}

fn cmd_table1(a: Table1Args, common: &Common, s: &mut Settings) -> Result<Outcome, CliError> {
    let seed = s.value("seed", a.seed, 12_345u64)?;
    let reps = s.value("reps", a.reps, mc::TABLE1_REPLICATIONS)?;
    let n = s.value("n", a.n, mc::TABLE1_N)?;
    let streams = s.unrecorded("streams", a.streams, 8usize)?;
    let quad = quadrature(common, s)?;
    let spec = McSpec::new(reps, seed, streams)?;
    let rows = reproduce_table1(n, &spec, &quad)?;

    let mut table = Table::new(
        "table1",
        &[
            "rho",
            "alpha",
            "fwer_hat",
            "se",
            "fwer_exact",
            "bound_alpha_1mrho",
            "line_bound",
            "verdict",
            "exceedances",
            "exact_z",
            "reference_fwer_hat",
        ],
    );
    let mut failure = None;
    for row in &rows {
        let i = TABLE1_RHO
            .iter()
            .position(|&r| r == row.rho)
            .expect("design row");
        let j = TABLE1_ALPHA
            .iter()
            .position(|&x| x == row.alpha)
            .expect("design column");
        let exact = match &row.fwer_exact {
            Ok(v) => Cell::F(*v),
            Err(msg) => {
                failure.get_or_insert_with(|| CliError::Numerical(msg.clone()));
                Cell::Empty
            }
        };
        table.push(vec![
            Cell::F(row.rho),
            Cell::F(row.alpha),
            Cell::F(row.estimate.fwer_hat),
            Cell::F(row.estimate.std_error),
            exact,
            Cell::F(row.bound_alpha_1mrho),
            Cell::F(row.line_bound),
            Cell::S(
                if row.within_bound {
                    "within"
                } else {
                    "exceeds"
                }
                .into(),
            ),
            Cell::U(row.estimate.exceedances),
            opt(row.exact_z_score()),
            Cell::F(REFERENCE_FWER_HAT[i][j]),
        ]);
    }
    let within = rows.iter().filter(|r| r.within_bound).count();
    table.summary.push(format!(
        "{within} of {} cells satisfy fwer_hat <= alpha(1-rho)",
        rows.len()
    ));
    Ok(Outcome {
        table,
        seed: Some(seed),
        failure,
    })
}

fn cmd_scan(a: ScanArgs, common: &Common, s: &mut Settings) -> Result<Outcome, CliError> {
    let ladder = s.list("n", a.n, vec![100u64, 1_000, 10_000])?;
    let alpha = s.value("alpha", a.alpha, 0.05)?;
    let grid = s.list("rho", a.rho, (1..=9).map(|k| k as f64 / 10.0).collect())?;
    let spec = quadrature(common, s)?;
    if grid.is_empty() {
        return Err(usage("empty correlation grid"));
    }
    if ladder.is_empty() {
        return Err(usage("empty n ladder"));
    }
    for &n in &ladder {
        for &rho in &grid {
            ModelConfig::bonferroni(n, alpha, rho)?;
            if n < 2 || !(rho > 0.0 && rho < 1.0) {
                return Err(usage(format!(
                    "scan needs n >= 2 and correlations strictly inside (0, 1); got n = {n}, rho = {rho}"
                )));
            }
        }
    }

    let mut table = Table::new("scan", &["section", "n", "rho", "quantity", "value"]);
    let mut errors = Vec::new();
    let put = |table: &mut Table, section: &str, n: u64, rho: f64, q: &str, v: f64| {
        table.push(vec![
            Cell::S(section.into()),
            Cell::U(n),
            Cell::F(rho),
            Cell::S(q.into()),
            Cell::F(v),
        ]);
    };
    for &n in &ladder {
        for row in convexity_scan(n, alpha, &grid, &spec) {
            match row {
                Ok(r) => {
                    put(&mut table, "convexity", n, r.rho, "fwer", r.fwer);
                    put(
                        &mut table,
                        "convexity",
                        n,
                        r.rho,
                        "h_second",
                        r.h_second_total,
                    );
                    put(
                        &mut table,
                        "convexity",
                        n,
                        r.rho,
                        "fwer_second_derivative",
                        -r.h_second_total,
                    );
                    put(
                        &mut table,
                        "convexity",
                        n,
                        r.rho,
                        "quad_error",
                        r.quad_error_estimate,
                    );
                }
                Err(e) => errors.push(e),
            }
        }
    }
    for &rho in &grid {
        match asymptotic_diagnostics(&ladder, alpha, rho) {
            Ok(rows) => {
                for r in rows {
                    put(&mut table, "asymptotic", r.n, rho, "cutoff", r.cutoff);
                    put(
                        &mut table,
                        "asymptotic",
                        r.n,
                        rho,
                        "cutoff_sq_over_log_n",
                        r.cutoff_sq_over_log_n,
                    );
                    put(
                        &mut table,
                        "asymptotic",
                        r.n,
                        rho,
                        "mills_ratio",
                        r.mills_ratio,
                    );
                    put(&mut table, "asymptotic", r.n, rho, "z0", r.z0);
                    put(
                        &mut table,
                        "asymptotic",
                        r.n,
                        rho,
                        "z0_plus_c_t",
                        r.z0_plus_c_t,
                    );
                    put(
                        &mut table,
                        "asymptotic",
                        r.n,
                        rho,
                        "z0_plus_c_sqrt_rho_t",
                        r.z0_plus_c_sqrt_rho_t,
                    );
                }
            }
            Err(e) => errors.push(e),
        }
        match lemma_ladder(&ladder, alpha, rho, &spec) {
            Ok(rows) => {
                for r in rows {
                    put(&mut table, "terms", r.n, rho, "term1", r.term1);
                    put(&mut table, "terms", r.n, rho, "term2", r.term2);
                    put(&mut table, "terms", r.n, rho, "term3", r.term3);
                    put(&mut table, "terms", r.n, rho, "abs_term2", r.term2.abs());
                    put(&mut table, "terms", r.n, rho, "abs_term3", r.term3.abs());
                    put(
                        &mut table,
                        "terms",
                        r.n,
                        rho,
                        "h_second_total",
                        r.h_second_total,
                    );
                    put(
                        &mut table,
                        "terms",
                        r.n,
                        rho,
                        "lemma2_residual",
                        r.lemma2_residual,
                    );
                }
            }
            Err(e) => errors.push(e),
        }
    }
    Ok(Outcome {
        table,
        seed: None,
        failure: first_numerical(errors),
    })
}

fn cmd_correct(a: CorrectArgs, common: &Common, s: &mut Settings) -> Result<Outcome, CliError> {
    let alpha = s.value("alpha", a.alpha, 0.05)?;
    let rho = s.value("rho", a.rho, 0.5)?;
    let n = s.value("n", a.n, 10_000u64)?;
    let spec = quadrature(common, s)?;
    let a_star = corrected_bonferroni_level(alpha, rho, n)?;
    let config = ModelConfig::new(n, rho, a_star)?;
    let fwer = h_exact(&config, &spec)?.fwer;
    let certified = fwer <= alpha;
    let mut table = Table::new(
        "correct",
        &[
            "alpha_target",
            "rho",
            "n",
            "a_star",
            "cutoff_star",
            "fwer_exact",
            "line_bound",
            "bonferroni_level",
            "rescaled_level",
            "certified",
        ],
    );
    table.push(vec![
        Cell::F(alpha),
        Cell::F(rho),
        Cell::U(n),
        Cell::F(a_star),
        Cell::F(cutoff_from_level(a_star)?),
        Cell::F(fwer),
        Cell::F(line_bound(rho, n, a_star)?),
        Cell::F(alpha / n as f64),
        Cell::F(asymptotic_rescaled_level(alpha, rho, n)?),
        Cell::B(certified),
    ]);
    let failure = (!certified).then(|| {
        CliError::Numerical(format!(
            "certification failed: exact FWER {fwer:e} exceeds target {alpha}"
        ))
    });
    Ok(Outcome {
        table,
        seed: None,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("fwer").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn config_parsing() {
        let m = parse_config("# comment\nn = 100\nquad_tol=1e-9 # trailing\n\nrho = 0.1, 0.2\n")
            .unwrap();
        assert_eq!(m["n"], "100");
        assert_eq!(m["quad-tol"], "1e-9");
        assert_eq!(m["rho"], "0.1, 0.2");
        assert!(parse_config("bogus = 1").is_err());
        assert!(parse_config("n 100").is_err());
    }

    #[test]
    fn csv_cells() {
        assert_eq!(Cell::F(0.1).csv(), "1.0000000000000001e-1");
        assert_eq!(Cell::S("a,b".into()).csv(), "\"a,b\"");
        assert_eq!(Cell::Empty.csv(), "");
        assert_eq!(Cell::F(f64::NAN).json(), Value::Null);
    }

    #[test]
    fn version_and_help() {
        let (code, out, _) = run_capture(&["version"]);
        assert_eq!(code, 0);
        assert_eq!(out.trim(), format!("fwer {TOOL_VERSION}"));
        assert_eq!(run_capture(&["--help"]).0, 0);
        assert_eq!(run_capture(&["frobnicate"]).0, 1);
    }
}

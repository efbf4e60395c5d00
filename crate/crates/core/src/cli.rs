//! Command-line frontend.
//!
//! Each subcommand is also exposed as a library function returning the exit
//! code together with the report, so callers can drive the pipelines without
//! spawning a process.

use crate::existence::{certify_existence, ExistenceCertificate, ExistenceConfig, ExistenceStatus};
use crate::loadflow::{check_security, SecurityMode};
use crate::netmodel::{check_condition1, parse_network, Network, NetworkError, Verdict};
use crate::uniqueness::{certify_uniqueness, FalsifyConfig, UniquenessCertificate, UniquenessStatus};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_REFUTED: i32 = 1;
pub const EXIT_UNKNOWN: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("IoError: {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("UsageError: {0}")]
    Usage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Parser)]
#[command(name = "dcsec", version, about = "Existence and uniqueness certificates for DC load flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a grid file and check the voltage-ordering condition.
    Validate(CommonArgs),
    /// Certify existence of a secure load-flow solution.
    Exists(CommonArgs),
    /// Certify uniqueness within the security set.
    Unique(CommonArgs),
    /// Solve the relaxation over a grid of injection scalings.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1.0)]
        lambda_max: f64,
        #[arg(long, default_value_t = 21)]
        steps: usize,
    },
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    margin: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    starts: usize,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    output: OutputFormat,
    /// Include per-stage wall-clock durations in the report.
    #[arg(long)]
    timing: bool,
}

/// Numeric knobs shared by every command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Options {
    pub tol: f64,
    pub max_iter: usize,
    pub margin: f64,
    pub seed: u64,
    pub starts: usize,
    pub timing: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { tol: 1e-8, max_iter: 200, margin: 1e-9, seed: 42, starts: 32, timing: false }
    }
}

impl Options {
    pub fn existence(&self) -> ExistenceConfig {
        let mut cfg = ExistenceConfig { margin: self.margin, ..ExistenceConfig::default() };
        cfg.solver.tol = self.tol;
        cfg.solver.max_iter = self.max_iter;
        cfg
    }

    pub fn falsify(&self) -> FalsifyConfig {
        FalsifyConfig { starts: self.starts, seed: self.seed, ..FalsifyConfig::default() }
    }
}

impl From<&CommonArgs> for Options {
    fn from(a: &CommonArgs) -> Self {
        Options { tol: a.tol, max_iter: a.max_iter, margin: a.margin, seed: a.seed, starts: a.starts, timing: a.timing }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub lambdas: Vec<f64>,
    pub statuses: Vec<ExistenceStatus>,
    pub last_solution_lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub input_digest: String,
    pub condition1: Verdict,
    pub warnings: Vec<String>,
    pub existence: Option<ExistenceCertificate>,
    pub uniqueness: Option<UniquenessCertificate>,
    pub sweep: Option<SweepSummary>,
    pub timing_ms: Option<BTreeMap<String, f64>>,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub status: ExistenceStatus,
    pub tightness_alpha: Option<f64>,
    pub tightness_beta: Option<f64>,
    pub margin: Option<f64>,
    pub voltages: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub outcome: CommandOutcome,
    pub n_pq: usize,
    pub rows: Vec<SweepRow>,
}

/// SHA-256 of the canonical serialization of the parsed network.
pub fn input_digest(net: &Network) -> String {
    hex::encode(Sha256::digest(net.to_json().as_bytes()))
}

pub fn load_network(path: &Path) -> Result<Network, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(parse_network(&text)?)
}

struct Timer {
    enabled: bool,
    stages: BTreeMap<String, f64>,
}

impl Timer {
    fn new(enabled: bool) -> Self {
        Timer { enabled, stages: BTreeMap::new() }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn finish(self) -> Option<BTreeMap<String, f64>> {
        self.enabled.then_some(self.stages)
    }
}

fn base_report(command: &str, net: &Network) -> RunReport {
    let condition1 = check_condition1(net);
    let mut warnings = Vec::new();
    if !condition1.holds {
        warnings.push(format!(
            "condition 2*v_min > v_max > v0 > v_min fails (margins {:?})",
            condition1.margins
        ));
    }
    RunReport {
        command: command.to_string(),
        input_digest: input_digest(net),
        condition1,
        warnings,
        existence: None,
        uniqueness: None,
        sweep: None,
        timing_ms: None,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn cmd_validate(path: &Path, opts: &Options) -> Result<CommandOutcome, CliError> {
    let mut timer = Timer::new(opts.timing);
    let net = timer.time("parse", || load_network(path))?;
    let mut report = base_report("validate", &net);
    report.timing_ms = timer.finish();
    Ok(CommandOutcome { exit_code: EXIT_OK, report })
}

pub fn cmd_exists(path: &Path, opts: &Options) -> Result<CommandOutcome, CliError> {
    let mut timer = Timer::new(opts.timing);
    let net = timer.time("parse", || load_network(path))?;
    let cfg = opts.existence();
    let (cert, _) = timer.time("existence", || certify_existence(&net, &cfg));
    let exit_code = match cert.status {
        ExistenceStatus::SolutionFound => EXIT_OK,
        ExistenceStatus::P1Infeasible => EXIT_REFUTED,
        ExistenceStatus::Undecided => EXIT_UNKNOWN,
    };
    let mut report = base_report("exists", &net);
    report.existence = Some(cert);
    report.timing_ms = timer.finish();
    Ok(CommandOutcome { exit_code, report })
}

pub fn cmd_unique(path: &Path, opts: &Options) -> Result<CommandOutcome, CliError> {
    let mut timer = Timer::new(opts.timing);
    let net = timer.time("parse", || load_network(path))?;
    let cfg = opts.falsify();
    let cert = timer.time("uniqueness", || certify_uniqueness(&net, &cfg));
    let exit_code = match cert.status {
        UniquenessStatus::UniqueCertified => EXIT_OK,
        UniquenessStatus::CounterexampleFound => EXIT_REFUTED,
        UniquenessStatus::Unknown => EXIT_UNKNOWN,
    };
    let mut report = base_report("unique", &net);
    report.uniqueness = Some(cert);
    report.timing_ms = timer.finish();
    Ok(CommandOutcome { exit_code, report })
}

/// Evenly spaced scalings `0, …, lambda_max`; a single point when
/// `lambda_max` is zero.
pub fn sweep_grid(lambda_max: f64, steps: usize) -> Result<Vec<f64>, CliError> {
    if steps < 2 {
        return Err(CliError::Usage(format!("--steps must be at least 2, got {steps}")));
    }
    if !lambda_max.is_finite() || lambda_max < 0.0 {
        return Err(CliError::Usage(format!("--lambda-max must be finite and nonnegative, got {lambda_max}")));
    }
    if lambda_max == 0.0 {
        return Ok(vec![0.0]);
    }
    let last = (steps - 1) as f64;
    Ok((0..steps).map(|i| lambda_max * i as f64 / last).collect())
}

fn sweep_row(net: &Network, lambda: f64, cfg: &ExistenceConfig) -> SweepRow {
    let scaled = net.scaled_injections(lambda).expect("finite scaling of a valid network");
    let (cert, _) = certify_existence(&scaled, cfg);
    let found = cert.status == ExistenceStatus::SolutionFound;
    let voltages = cert.voltages.as_ref().filter(|_| found).map(|p| p.values.clone());
    let margin = voltages.as_ref().map(|v| {
        check_security(&scaled, v, SecurityMode::Strict, cfg.margin).expect("length N").worst_margin()
    });
    SweepRow {
        lambda,
        status: cert.status,
        tightness_alpha: cert.tightness_alpha,
        tightness_beta: cert.tightness_beta,
        margin,
        voltages,
    }
}

pub fn cmd_sweep(path: &Path, opts: &Options, lambda_max: f64, steps: usize) -> Result<SweepOutcome, CliError> {
    let grid = sweep_grid(lambda_max, steps)?;
    let mut timer = Timer::new(opts.timing);
    let net = timer.time("parse", || load_network(path))?;
    let cfg = opts.existence();
    let rows: Vec<SweepRow> =
        timer.time("sweep", || grid.par_iter().map(|&l| sweep_row(&net, l, &cfg)).collect());
    let last_solution_lambda =
        rows.iter().rev().find(|r| r.status == ExistenceStatus::SolutionFound).map(|r| r.lambda);
    let mut report = base_report("sweep", &net);
    report.sweep = Some(SweepSummary {
        lambdas: rows.iter().map(|r| r.lambda).collect(),
        statuses: rows.iter().map(|r| r.status).collect(),
        last_solution_lambda,
    });
    report.timing_ms = timer.finish();
    Ok(SweepOutcome { outcome: CommandOutcome { exit_code: EXIT_OK, report }, n_pq: net.n_pq(), rows })
}

fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn status_name(s: ExistenceStatus) -> &'static str {
    match s {
        ExistenceStatus::SolutionFound => "SolutionFound",
        ExistenceStatus::P1Infeasible => "P1Infeasible",
        ExistenceStatus::Undecided => "Undecided",
    }
}

/// CSV with header `lambda,status,tightness_alpha,tightness_beta,margin,v_1..v_N`.
pub fn sweep_csv(n_pq: usize, rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,status,tightness_alpha,tightness_beta,margin");
    for n in 1..=n_pq {
        out.push_str(&format!(",v_{n}"));
    }
    out.push('\n');
    for r in rows {
        let mut cells = vec![
            fmt_num(r.lambda),
            status_name(r.status).to_string(),
            fmt_opt(r.tightness_alpha),
            fmt_opt(r.tightness_beta),
            fmt_opt(r.margin),
        ];
        match &r.voltages {
            Some(v) => cells.extend(v.iter().map(|&x| fmt_num(x))),
            None => cells.extend(std::iter::repeat_n(String::new(), n_pq)),
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn report_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report is serializable");
    s.push('\n');
    s
}

fn report_text(report: &RunReport) -> String {
    let mut out = format!("{} {}\n", report.command, report.input_digest);
    let c = &report.condition1;
    out.push_str(&format!("condition1: {} (margins {:?})\n", if c.holds { "holds" } else { "fails" }, c.margins));
    for w in &report.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    if let Some(e) = &report.existence {
        out.push_str(&format!("existence: {:?}\n", e.status));
        if let Some(v) = &e.voltages {
            out.push_str(&format!("  voltages: {:?}\n", v.values));
            out.push_str(&format!("  residual: {:e}\n", v.residual_norm));
        }
        if let (Some(a), Some(b)) = (e.tightness_alpha, e.tightness_beta) {
            out.push_str(&format!("  tightness: alpha {a:e}, beta {b:e}\n"));
        }
        out.push_str(&format!("  strict security: {}\n", e.strict_security));
    }
    if let Some(u) = &report.uniqueness {
        out.push_str(&format!("uniqueness: {:?} via {:?}, margin {:e}\n", u.status, u.method, u.margin));
        if let Some(cx) = &u.counterexample {
            out.push_str(&format!("  singular at v = {:?}, sigma_min {:e}\n", cx.v.values, cx.sigma_min));
        }
    }
    if let Some(s) = &report.sweep {
        match s.last_solution_lambda {
            Some(l) => out.push_str(&format!("largest lambda with SolutionFound: {l}\n")),
            None => out.push_str("no lambda with SolutionFound\n"),
        }
    }
    if let Some(t) = &report.timing_ms {
        for (stage, ms) in t {
            out.push_str(&format!("time {stage}: {ms:.3} ms\n"));
        }
    }
    out
}

fn execute(command: &Command) -> Result<(i32, String, Option<String>), CliError> {
    let common = match command {
        Command::Validate(c) | Command::Exists(c) | Command::Unique(c) => c,
        Command::Sweep { common, .. } => common,
    };
    let opts = Options::from(common);
    let format = common.output;
    if let Command::Sweep { lambda_max, steps, .. } = command {
        let sweep = cmd_sweep(&common.network, &opts, *lambda_max, *steps)?;
        let summary = sweep.outcome.report.sweep.as_ref().and_then(|s| s.last_solution_lambda);
        let note = match summary {
            Some(l) => format!("largest lambda with SolutionFound: {l}\n"),
            None => "no lambda with SolutionFound\n".to_string(),
        };
        let body = match format {
            OutputFormat::Json => report_json(&sweep.outcome.report),
            OutputFormat::Csv | OutputFormat::Text => sweep_csv(sweep.n_pq, &sweep.rows),
        };
        return Ok((sweep.outcome.exit_code, body, Some(note)));
    }
    if format == OutputFormat::Csv {
        return Err(CliError::Usage("csv output is only available for sweep".into()));
    }
    let outcome = match command {
        Command::Validate(_) => cmd_validate(&common.network, &opts)?,
        Command::Exists(_) => cmd_exists(&common.network, &opts)?,
        Command::Unique(_) => cmd_unique(&common.network, &opts)?,
        Command::Sweep { .. } => unreachable!(),
    };
    let body = match format {
        OutputFormat::Json => report_json(&outcome.report),
        _ => report_text(&outcome.report),
    };
    Ok((outcome.exit_code, body, None))
}

/// Parses `args` (including the program name), runs the command and writes
/// its output. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(rendered.as_bytes()) } else { stdout.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match execute(&cli.command) {
        Ok((code, body, note)) => {
            let _ = stdout.write_all(body.as_bytes());
            if let Some(note) = note {
                let _ = stderr.write_all(note.as_bytes());
            }
            code
        }
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            EXIT_INPUT
        }
    }
}

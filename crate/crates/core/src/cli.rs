//! Command-line front end.
//!
//! [`run`] parses arguments, executes one command on a sized thread pool and
//! returns the process exit status, so tests can drive the binary's exact
//! behaviour in-process. Every parsed command writes a manifest, including
//! commands that fail.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corrdim::{self, CorrelationLedger, MonitorConfig, DEFAULT_SCALES, LLM_BINS};
use crate::decoding::{
    self, Control, DecodeConfig, DecodeError, IfsCoupledConfig, MarkovConfig, RegulationMode, SourceConfig,
    SweepSummary,
};
use crate::ifs::{self, IfsConfig, IfsError};
use crate::manifest::{manifest_path_for, Manifest, MANIFEST_NAME};
use crate::rmr::{self, DampingMode, RegulatorConfig, RmrError};
use crate::trace::{self, StateVector, TraceMeta, TraceWriter};
use crate::{Error, Result};

pub const THREADS_ENV: &str = "GEODYN_THREADS";

#[derive(Debug, Parser, Serialize)]
#[command(name = "geodyn", version, about = "Correlation-dimension diagnostics and value-cache regulation")]
pub struct Cli {
    /// Worker threads for independent seeds and heads.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    /// Manifest location; defaults to manifest.json next to the main output.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// State-dependent IFS runs.
    #[command(subcommand)]
    Ifs(IfsCmd),
    /// Correlation dimension of a trace.
    #[command(subcommand)]
    Dim(DimCmd),
    /// Spectral analysis and damping of value streams.
    #[command(subcommand)]
    Rmr(RmrCmd),
    /// Synthetic decoding runs.
    #[command(subcommand)]
    Decode(DecodeCmd),
    /// Aggregates sweep summaries, monitor and spectral logs into one table.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand, Serialize)]
pub enum IfsCmd {
    Run(IfsRunArgs),
}

#[derive(Debug, Subcommand, Serialize)]
pub enum DimCmd {
    Estimate(DimEstimateArgs),
    Monitor(DimMonitorArgs),
}

#[derive(Debug, Subcommand, Serialize)]
pub enum RmrCmd {
    Analyze(RmrAnalyzeArgs),
    Regulate(RmrRegulateArgs),
}

#[derive(Debug, Subcommand, Serialize)]
pub enum DecodeCmd {
    Simulate(DecodeSimulateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IfsRunArgs {
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 50_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Order-parameter regulation strength.
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    /// Maps per group.
    #[arg(long, default_value_t = 3)]
    pub maps: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of `t,m_t,pi_right`; defaults to `<out stem>.series.csv`.
    #[arg(long)]
    pub series: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScaleArgs {
    /// Smallest scale; calibrated from the trace when omitted.
    #[arg(long, requires = "eps1")]
    pub eps0: Option<f64>,
    #[arg(long, requires = "eps0")]
    pub eps1: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SCALES)]
    pub scales: usize,
    /// Bin count for vocabulary projection; applied by default when rows exceed 10000 entries.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct DimEstimateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub scales: ScaleArgs,
    /// JSON output path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct DimMonitorArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub scales: ScaleArgs,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Bounded-memory approximate mode with this many retained points.
    #[arg(long)]
    pub reservoir: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RecordFormat::Jsonl)]
    pub format: RecordFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    SubspaceOnly,
    AsWritten,
}

#[derive(Debug, Args, Serialize)]
pub struct RegulatorArgs {
    #[arg(long, default_value_t = 10)]
    pub interval: u32,
    #[arg(long, default_value_t = 0.8)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 0.7)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.995)]
    pub gamma: f64,
    #[arg(long, default_value_t = 8)]
    pub top: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::SubspaceOnly)]
    pub mode: ModeArg,
}

impl RegulatorArgs {
    fn apply(&self, cfg: &mut RegulatorConfig) {
        cfg.interval = self.interval;
        cfg.lambda_min = self.lambda_min;
        cfg.eta = self.eta;
        cfg.gamma_damp = self.gamma;
        cfg.top = self.top;
        cfg.mode = match self.mode {
            ModeArg::SubspaceOnly => DampingMode::SubspaceOnly,
            ModeArg::AsWritten => DampingMode::AsWritten,
        };
    }
}

#[derive(Debug, Args, Serialize)]
pub struct RmrAnalyzeArgs {
    /// Trace of value rows for one head.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub layer: u32,
    #[arg(long, default_value_t = 0)]
    pub head: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub regulator: RegulatorArgs,
    /// Spectral log JSONL; standard output when omitted.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RmrRegulateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub layer: u32,
    #[arg(long, default_value_t = 0)]
    pub head: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub regulator: RegulatorArgs,
    /// Regulated value trace.
    #[arg(long)]
    pub out: PathBuf,
    /// Plan JSONL; defaults to `<out stem>.plans.jsonl`.
    #[arg(long)]
    pub plans: Option<PathBuf>,
    /// Spectral log JSONL; defaults to `<out stem>.spectral.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceArg {
    Markov,
    #[value(alias = "ifs")]
    IfsCoupled,
    #[value(alias = "trace")]
    TraceReplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RmrArg {
    On,
    Off,
    Random,
}

#[derive(Debug, Args, Serialize)]
#[group(id = "control", multiple = false)]
pub struct ControlArgs {
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Entropy target in nats.
    #[arg(long)]
    pub entropy: Option<f64>,
    /// Typical-sampling mass.
    #[arg(long)]
    pub typical: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeSimulateArgs {
    #[arg(long, value_enum, default_value_t = SourceArg::IfsCoupled)]
    pub source: SourceArg,
    /// Rows replayed by the trace source.
    #[arg(long, required_if_eq("source", "trace-replay"))]
    pub trace: Option<PathBuf>,
    #[arg(long, conflicts_with = "beta_sweep")]
    pub beta: Option<f64>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub beta_sweep: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RmrArg::Off)]
    pub rmr: RmrArg,
    #[command(flatten)]
    pub control: ControlArgs,
    #[arg(long, default_value_t = decoding::TOP_K)]
    pub top_k: usize,
    #[arg(long, default_value_t = decoding::TOP_P)]
    pub top_p: f64,
    #[arg(long, default_value_t = 1_000)]
    pub horizon: usize,
    /// Non-collapse threshold; the bundled synthetic threshold when omitted.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, requires = "eps1")]
    pub eps0: Option<f64>,
    #[arg(long, requires = "eps0")]
    pub eps1: Option<f64>,
    #[command(flatten)]
    pub regulator: RegulatorArgs,
    /// Sweep summary JSON; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step JSONL of the first run.
    #[arg(long)]
    pub steps: Option<PathBuf>,
    /// Spectral log JSONL of the first run.
    #[arg(long)]
    pub spectral: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Sweep summaries, monitor JSONL or spectral logs.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    pub format: TableFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure with its exit status: 2 for usage and configuration errors, 1 otherwise.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure {
            code: exit_code(&error),
            error,
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        error: Error::Config(msg.into()),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    let usage = match e {
        Error::Config(_) => true,
        Error::Ifs(x) => matches!(
            x,
            IfsError::InvalidBeta(_)
                | IfsError::InvalidEta(_)
                | IfsError::InvalidContraction { .. }
                | IfsError::InvalidGroups
                | IfsError::NoSteps
        ),
        Error::Dim(x) => matches!(x, corrdim::DimError::InvalidScales { .. } | corrdim::DimError::InvalidStride),
        Error::Rmr(x) => matches!(x, RmrError::InvalidParameter(_)),
        Error::Decode(x) => matches!(
            x,
            DecodeError::InvalidFilter { .. }
                | DecodeError::InvalidEntropyTarget(_)
                | DecodeError::InvalidConfig(_)
                | DecodeError::InvalidSource(_)
        ),
        _ => false,
    };
    if usage {
        2
    } else {
        1
    }
}

/// Error JSON printed to standard error on failure.
pub fn error_json(kind: &str, message: &str, code: i32) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message }, "exit_code": code }).to_string()
}

/// Thread count from `--parallel`, capped by `GEODYN_THREADS`.
pub fn thread_count(parallel: Option<usize>, env: Option<&str>) -> std::result::Result<usize, String> {
    let cap = match env {
        Some(s) => Some(
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {s:?}"))?,
        ),
        None => None,
    };
    let want = match parallel {
        Some(0) => return Err("--parallel must be at least 1".into()),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    Ok(cap.map_or(want, |c| want.min(c)))
}

/// Runs one invocation and returns its exit status.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{}", e.render());
                return 0;
            }
            let _ = writeln!(stderr, "{}", error_json("usage", e.render().to_string().trim(), 2));
            return 2;
        }
    };
    let env = std::env::var(THREADS_ENV).ok();
    let threads = match thread_count(cli.parallel, env.as_deref()) {
        Ok(n) => n,
        Err(msg) => {
            let _ = writeln!(stderr, "{}", error_json("usage", &msg, 2));
            return 2;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_json("runtime", &e.to_string(), 1));
            return 1;
        }
    };
    let (result, out) = pool.install(|| {
        let mut buf = Vec::new();
        let r = execute(&cli, &mut buf);
        (r, buf)
    });
    let _ = stdout.write_all(&out);
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "{}", error_json(f.error.kind(), &f.error.to_string(), f.code));
            f.code
        }
    }
}

struct Job {
    manifest: Manifest,
    path: PathBuf,
}

impl Job {
    fn new(cli: &Cli, name: &str, config: &impl Serialize, seed: Option<u64>, main_output: Option<&Path>) -> Self {
        let config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
        let path = cli
            .manifest
            .clone()
            .unwrap_or_else(|| main_output.map(manifest_path_for).unwrap_or_else(|| PathBuf::from(MANIFEST_NAME)));
        Job {
            manifest: Manifest::new(name, config, seed),
            path,
        }
    }

    fn output(&mut self, p: &Path) {
        self.manifest.outputs.push(p.to_path_buf());
    }

    fn finish(mut self, result: std::result::Result<(), Failure>) -> std::result::Result<(), Failure> {
        if let Err(f) = &result {
            self.manifest.fail(f.error.kind(), f.error.to_string());
        }
        let written = self.manifest.write(&self.path);
        match (result, written) {
            (Err(f), _) => Err(f),
            (Ok(()), Err(e)) => Err(Error::Io(e).into()),
            (Ok(()), Ok(())) => Ok(()),
        }
    }
}

fn execute(cli: &Cli, stdout: &mut Vec<u8>) -> std::result::Result<(), Failure> {
    match &cli.command {
        Command::Ifs(IfsCmd::Run(a)) => {
            let mut job = Job::new(cli, "ifs run", a, Some(a.seed), Some(&a.out));
            let r = ifs_run(a, &mut job, stdout);
            job.finish(r)
        }
        Command::Dim(DimCmd::Estimate(a)) => {
            let mut job = Job::new(cli, "dim estimate", a, None, a.out.as_deref());
            let r = dim_estimate(a, &mut job, stdout);
            job.finish(r)
        }
        Command::Dim(DimCmd::Monitor(a)) => {
            let mut job = Job::new(cli, "dim monitor", a, Some(a.seed), a.out.as_deref());
            let r = dim_monitor(a, &mut job, stdout);
            job.finish(r)
        }
        Command::Rmr(RmrCmd::Analyze(a)) => {
            let mut job = Job::new(cli, "rmr analyze", a, Some(a.seed), a.log.as_deref());
            let r = rmr_analyze(a, &mut job, stdout);
            job.finish(r)
        }
        Command::Rmr(RmrCmd::Regulate(a)) => {
            let mut job = Job::new(cli, "rmr regulate", a, Some(a.seed), Some(&a.out));
            let r = rmr_regulate(a, &mut job);
            job.finish(r)
        }
        Command::Decode(DecodeCmd::Simulate(a)) => {
            let mut job = Job::new(cli, "decode simulate", a, Some(a.seed), a.out.as_deref());
            let r = decode_simulate(a, &mut job, stdout);
            job.finish(r)
        }
        Command::Report(a) => {
            let mut job = Job::new(cli, "report", a, None, a.out.as_deref());
            let r = report(a, &mut job, stdout);
            job.finish(r)
        }
    }
}

fn require_input(p: &Path) -> std::result::Result<(), Failure> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("missing input {}", p.display())))
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes to `path` when given, else to the captured standard output.
fn emit(
    path: Option<&Path>,
    job: &mut Job,
    stdout: &mut Vec<u8>,
    f: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> std::result::Result<(), Failure> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush().map_err(Error::from)?;
            job.output(p);
        }
        None => f(stdout)?,
    }
    Ok(())
}

fn pretty(v: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn ifs_run(a: &IfsRunArgs, job: &mut Job, stdout: &mut Vec<u8>) -> std::result::Result<(), Failure> {
    let cfg = IfsConfig::reference(a.maps, a.beta);
    cfg.validate().map_err(Error::from)?;
    if a.steps == 0 {
        return Err(Error::Ifs(IfsError::NoSteps).into());
    }
    let run = ifs::run(&cfg, a.steps, a.seed, a.eta).map_err(Error::from)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    run.write_trace(&a.out).map_err(Error::from)?;
    job.output(&a.out);
    let meta = TraceMeta {
        source_kind: "ifs".into(),
        seed: Some(a.seed),
        decode_config: serde_json::to_value(a).map_err(Error::from)?,
    };
    job.output(&trace::write_meta(&a.out, &meta).map_err(Error::from)?);
    let series = a.series.clone().unwrap_or_else(|| sibling(&a.out, ".series.csv"));
    let mut w = create(&series)?;
    run.write_series_csv(&mut w).map_err(Error::from)?;
    w.flush().map_err(Error::from)?;
    job.output(&series);
    let (left, right) = run.half_plane_fractions(ifs::BURN_IN);
    let summary = serde_json::json!({
        "steps": a.steps,
        "beta": a.beta,
        "eta": a.eta,
        "left": left,
        "right": right,
        "confined": run.is_confined(ifs::BURN_IN, ifs::CONFINED_SHARE),
        "order_sign_flips": run.order_sign_flips(ifs::BURN_IN),
    });
    stdout.extend_from_slice(pretty(&summary)?.as_bytes());
    Ok(())
}

fn read_rows_f64(path: &Path) -> Result<Vec<Vec<f64>>> {
    Ok(trace::read_trace(path)?.iter().map(StateVector::to_f64).collect())
}

/// Rows as the ledger will see them, with the projection rule applied.
fn project_rows(rows: Vec<Vec<f64>>, bins: Option<usize>) -> Result<Vec<Vec<f64>>> {
    match bins {
        Some(k) => rows.iter().map(|r| trace::bin_project_f64(r, k).map_err(Error::from)).collect(),
        None => Ok(rows),
    }
}

fn effective_bins(requested: Option<usize>, dim: usize) -> Option<usize> {
    requested.or((dim > LLM_BINS).then_some(LLM_BINS))
}

fn scale_range(s: &ScaleArgs, rows: &[Vec<f64>]) -> Result<(f64, f64)> {
    match (s.eps0, s.eps1) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Ok(corrdim::calibrate_scale_range(rows)?),
    }
}

fn dim_estimate(a: &DimEstimateArgs, job: &mut Job, stdout: &mut Vec<u8>) -> std::result::Result<(), Failure> {
    require_input(&a.input)?;
    let rows = read_rows_f64(&a.input)?;
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    let rows = project_rows(rows, effective_bins(a.scales.bins, dim))?;
    let (eps0, eps1) = scale_range(&a.scales, &rows)?;
    let mut ledger = CorrelationLedger::log_spaced(eps0, eps1, a.scales.scales).map_err(Error::from)?;
    for r in &rows {
        ledger.push(r).map_err(Error::from)?;
    }
    let est = corrdim::finite_time_dimension(&ledger).map_err(Error::from)?;
    let text = pretty(&est)?;
    emit(a.out.as_deref(), job, stdout, |w| Ok(w.write_all(text.as_bytes())?))
}

fn dim_monitor(a: &DimMonitorArgs, job: &mut Job, stdout: &mut Vec<u8>) -> std::result::Result<(), Failure> {
    require_input(&a.input)?;
    let header = trace::validate_trace(&a.input).map_err(Error::from)?;
    let bins = effective_bins(a.scales.bins, header.dim as usize);
    let (eps0, eps1) = match (a.scales.eps0, a.scales.eps1) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            let rows = project_rows(read_rows_f64(&a.input)?, bins)?;
            corrdim::calibrate_scale_range(&rows).map_err(Error::from)?
        }
    };
    let cfg = MonitorConfig {
        bins,
        eps0,
        eps1,
        scales: a.scales.scales,
        stride: a.stride,
        reservoir: a.reservoir,
    };
    let records = corrdim::monitor(&a.input, &cfg, a.seed).map_err(Error::from)?;
    emit(a.out.as_deref(), job, stdout, |w| {
        let mut buf = Vec::new();
        match a.format {
            RecordFormat::Jsonl => corrdim::write_jsonl(&records, &mut buf)?,
            RecordFormat::Csv => corrdim::write_csv(&records, &mut buf)?,
        }
        Ok(w.write_all(&buf)?)
    })
}

fn regulator_config(r: &RegulatorArgs, seed: u64, apply: bool) -> std::result::Result<RegulatorConfig, Failure> {
    let mut cfg = RegulatorConfig {
        seed,
        apply,
        ..RegulatorConfig::default()
    };
    r.apply(&mut cfg);
    cfg.validate().map_err(Error::from)?;
    Ok(cfg)
}

fn write_log(log: &[rmr::SpectralRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    rmr::write_spectral_log(log, &mut buf)?;
    Ok(buf)
}

fn rmr_analyze(a: &RmrAnalyzeArgs, job: &mut Job, stdout: &mut Vec<u8>) -> std::result::Result<(), Failure> {
    require_input(&a.input)?;
    let cfg = regulator_config(&a.regulator, a.seed, false)?;
    let rows = read_rows_f64(&a.input)?;
    let out = rmr::regulate_stream(&rows, &cfg, a.layer, a.head).map_err(Error::from)?;
    let buf = write_log(&out.log)?;
    emit(a.log.as_deref(), job, stdout, |w| Ok(w.write_all(&buf)?))
}

fn rmr_regulate(a: &RmrRegulateArgs, job: &mut Job) -> std::result::Result<(), Failure> {
    require_input(&a.input)?;
    let cfg = regulator_config(&a.regulator, a.seed, true)?;
    let rows = read_rows_f64(&a.input)?;
    let out = rmr::regulate_stream(&rows, &cfg, a.layer, a.head).map_err(Error::from)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    let mut w = TraceWriter::create(&a.out, rows.first().map(|r| r.len())).map_err(Error::from)?;
    for r in &out.rows {
        w.push(&StateVector::from_f64(r).map_err(Error::from)?.0).map_err(Error::from)?;
    }
    w.finish().map_err(Error::from)?;
    job.output(&a.out);
    let plans = a.plans.clone().unwrap_or_else(|| sibling(&a.out, ".plans.jsonl"));
    let mut pw = create(&plans)?;
    for p in &out.plans {
        rmr::write_plan(p, &mut pw).map_err(Error::from)?;
    }
    pw.flush().map_err(Error::from)?;
    job.output(&plans);
    let log = a.log.clone().unwrap_or_else(|| sibling(&a.out, ".spectral.jsonl"));
    let mut lw = create(&log)?;
    lw.write_all(&write_log(&out.log)?).map_err(Error::from)?;
    lw.flush().map_err(Error::from)?;
    job.output(&log);
    Ok(())
}

/// Source, betas and decode configuration described by the flags.
pub fn decode_setup(a: &DecodeSimulateArgs) -> std::result::Result<(SourceConfig, Vec<f64>, DecodeConfig), Failure> {
    let source = match a.source {
        SourceArg::Markov => SourceConfig::Markov(MarkovConfig::default()),
        SourceArg::IfsCoupled => SourceConfig::IfsCoupled(IfsCoupledConfig::default()),
        SourceArg::TraceReplay => {
            let path = a.trace.clone().ok_or_else(|| usage("--trace is required for the trace source"))?;
            require_input(&path)?;
            SourceConfig::TraceReplay { path }
        }
    };
    let betas = if !a.beta_sweep.is_empty() {
        a.beta_sweep.clone()
    } else {
        vec![a.beta.or(source.beta()).unwrap_or(1.0)]
    };
    if source.beta().is_some() && betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(usage("beta must be positive"));
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let mut cfg = DecodeConfig {
        horizon: a.horizon,
        top_k: a.top_k,
        top_p: a.top_p,
        ..DecodeConfig::default()
    };
    cfg.control = match (a.control.temperature, a.control.entropy, a.control.typical) {
        (_, Some(h), _) => Control::Entropy(h),
        (_, _, Some(t)) => Control::Typical(t),
        (t, _, _) => Control::Temperature(t.unwrap_or(1.0)),
    };
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    if let (Some(e0), Some(e1)) = (a.eps0, a.eps1) {
        cfg.monitor.eps0 = e0;
        cfg.monitor.eps1 = e1;
    }
    cfg.regulation = match a.rmr {
        RmrArg::On => RegulationMode::Rmr,
        RmrArg::Off => RegulationMode::Off,
        RmrArg::Random => RegulationMode::Random,
    };
    a.regulator.apply(&mut cfg.regulator);
    cfg.validate().map_err(Error::from)?;
    Ok((source, betas, cfg))
}

fn decode_simulate(a: &DecodeSimulateArgs, job: &mut Job, stdout: &mut Vec<u8>) -> std::result::Result<(), Failure> {
    let (source, betas, cfg) = decode_setup(a)?;
    let summary: SweepSummary = decoding::sweep(&source, &betas, a.seeds, &cfg, a.seed).map_err(Error::from)?;
    let text = pretty(&summary)?;
    emit(a.out.as_deref(), job, stdout, |w| Ok(w.write_all(text.as_bytes())?))?;
    if a.steps.is_some() || a.spectral.is_some() {
        let first = decoding::simulate(&source.with_beta(betas[0]), &cfg, crate::seed::derive(a.seed, "sweep", 0))
            .map_err(Error::from)?;
        if let Some(p) = &a.steps {
            let mut w = create(p)?;
            first.write_steps_jsonl(&mut w).map_err(Error::from)?;
            w.flush().map_err(Error::from)?;
            job.output(p);
        }
        if let Some(p) = &a.spectral {
            let mut w = create(p)?;
            w.write_all(&write_log(&first.spectral)?).map_err(Error::from)?;
            w.flush().map_err(Error::from)?;
            job.output(p);
        }
    }
    Ok(())
}

/// One aggregated row of `report`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReportRow {
    pub file: String,
    pub kind: &'static str,
    pub source: Option<String>,
    pub regulation: Option<String>,
    pub beta: Option<f64>,
    pub seeds: Option<usize>,
    pub non_collapse_rate: Option<f64>,
    pub loop_rate: Option<f64>,
    pub mean_d: Option<f64>,
    pub final_d: Option<f64>,
    pub records: Option<usize>,
    pub applications: Option<usize>,
    pub mean_lambda1: Option<f64>,
    pub max_lambda1: Option<f64>,
}

const REPORT_COLUMNS: &str = "file,kind,source,regulation,beta,seeds,non_collapse_rate,loop_rate,mean_d,final_d,records,applications,mean_lambda1,max_lambda1";

fn cell<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

impl ReportRow {
    fn csv(&self) -> String {
        [
            self.file.clone(),
            self.kind.to_string(),
            cell(&self.source),
            cell(&self.regulation),
            cell(&self.beta),
            cell(&self.seeds),
            cell(&self.non_collapse_rate),
            cell(&self.loop_rate),
            cell(&self.mean_d),
            cell(&self.final_d),
            cell(&self.records),
            cell(&self.applications),
            cell(&self.mean_lambda1),
            cell(&self.max_lambda1),
        ]
        .join(",")
    }
}

pub fn report_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    if let Ok(s) = serde_json::from_str::<SweepSummary>(&text) {
        let regulation = serde_json::to_value(s.regulation)?.as_str().map(str::to_string);
        return Ok(s
            .points
            .iter()
            .map(|p| ReportRow {
                file: file.clone(),
                kind: "sweep",
                source: Some(s.source.clone()),
                regulation: regulation.clone(),
                beta: Some(p.beta),
                seeds: Some(p.seeds),
                non_collapse_rate: Some(p.non_collapse_rate),
                loop_rate: Some(p.loop_rate),
                mean_d: Some(p.mean_d),
                ..ReportRow::default()
            })
            .collect());
    }
    let mut lines = Vec::new();
    for line in BufReader::new(text.as_bytes()).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(serde_json::from_str::<serde_json::Value>(&line)?);
        }
    }
    let first = lines
        .first()
        .ok_or_else(|| Error::Config(format!("{file} holds no records")))?;
    if first.get("lambdas").is_some() {
        let log: Vec<rmr::SpectralRecord> = lines
            .into_iter()
            .map(serde_json::from_value)
            .collect::<std::result::Result<_, _>>()?;
        let l1: Vec<f64> = log.iter().filter_map(|r| r.lambdas.first().copied()).collect();
        Ok(vec![ReportRow {
            file,
            kind: "spectral",
            records: Some(log.len()),
            applications: Some(log.iter().filter(|r| r.applied).count()),
            mean_lambda1: (!l1.is_empty()).then(|| l1.iter().sum::<f64>() / l1.len() as f64),
            max_lambda1: l1.iter().copied().reduce(f64::max),
            ..ReportRow::default()
        }])
    } else if first.get("c").is_some() {
        let recs: Vec<corrdim::MonitorRecord> = lines
            .into_iter()
            .map(serde_json::from_value)
            .collect::<std::result::Result<_, _>>()?;
        let ds: Vec<f64> = recs.iter().filter_map(|r| r.d).collect();
        Ok(vec![ReportRow {
            file,
            kind: "monitor",
            records: Some(recs.len()),
            final_d: recs.last().and_then(|r| r.d),
            mean_d: (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64),
            ..ReportRow::default()
        }])
    } else {
        Err(Error::Config(format!("{file} is not a sweep summary, monitor or spectral log")))
    }
}

fn report(a: &ReportArgs, job: &mut Job, stdout: &mut Vec<u8>) -> std::result::Result<(), Failure> {
    for p in &a.inputs {
        require_input(p)?;
    }
    let mut rows = Vec::new();
    for p in &a.inputs {
        rows.extend(report_rows(p)?);
    }
    let text = match a.format {
        TableFormat::Json => pretty(&rows)?,
        TableFormat::Csv => {
            let mut s = String::from(REPORT_COLUMNS);
            s.push('\n');
            for r in &rows {
                s.push_str(&r.csv());
                s.push('\n');
            }
            s
        }
    };
    emit(a.out.as_deref(), job, stdout, |w| Ok(w.write_all(text.as_bytes())?))
}

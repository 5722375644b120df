//! Command-line front end: `compress`, `dmd-batch`, `dmd-stream` and `synth`.
//!
//! Exit codes are `0` on success, `1` for runtime and data errors and `2` for
//! usage errors. Every command produces a [`RunReport`], printed as JSON with
//! `--json` and as plain text otherwise.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::codec::CodecMode;
use crate::dmd::{fit_batch, reconstruct_series, stream_init, DmdModel, RankChoice, SvdBackend, DEFAULT_TAU};
use crate::error::Error;
use crate::imageio::{self, Crop, FrameSpec, WatchOptions};
use crate::linalg::DenseMatrix;
use crate::metrics::{self, frobenius_relative_error};
use crate::store::{read_container, write_container_named, ContainerReader, SnapshotMatrix};
use crate::svd::{RsvdConfig, DEFAULT_EPSILON_SVD};
use crate::synth::{self, GeneratorKind, GeneratorSpec};

pub const SEED_ENV: &str = "DMDKIT_SEED";

#[derive(Debug, Parser)]
#[command(name = "dmdkit", version, about = "Dynamic mode decomposition over compressed snapshots and image streams")]
pub struct Cli {
    /// Print the run report as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Re-encode a snapshot container with another codec mode.
    Compress(CompressArgs),
    /// Fit DMD on a snapshot container and report reconstruction errors.
    DmdBatch(BatchArgs),
    /// Fit DMD on frames arriving in a directory.
    DmdStream(StreamArgs),
    /// Generate a synthetic snapshot container or frame directory.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// `lossless` or `accuracy=<eps>`.
    #[arg(long, default_value = "lossless")]
    pub mode: CodecMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SvdChoice {
    Exact,
    Rsvd,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    pub container: PathBuf,
    /// Fixed truncation rank.
    #[arg(long, conflicts_with = "tau")]
    pub rank: Option<usize>,
    /// Energy threshold for automatic rank selection.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value = "exact")]
    pub svd: SvdChoice,
    /// Randomized SVD oversampling.
    #[arg(long, default_value_t = 10)]
    pub oversampling: usize,
    /// Randomized SVD power iterations.
    #[arg(long, default_value_t = 2)]
    pub power_iterations: usize,
    /// Sketch rank for the randomized SVD when the rank is chosen automatically.
    #[arg(long)]
    pub sketch_rank: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cell volume for the conserved-mass column.
    #[arg(long)]
    pub cell_volume: Option<f64>,
    /// Output directory for `model.json` and `metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    pub frame_dir: PathBuf,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON_SVD)]
    pub epsilon_svd: f64,
    /// Crop rectangle `x,y,width,height`.
    #[arg(long)]
    pub crop: Option<String>,
    /// Frames buffered between the watcher and the DMD update.
    #[arg(long, default_value_t = 8)]
    pub queue: usize,
    /// Seconds to wait for a new frame before giving up.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Output directory for reconstructed frames, `metrics.csv` and `model.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// linear_lattice, traveling_wave, advecting_front or rising_blob.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Render this many frames instead of writing a container.
    #[arg(long, conflicts_with = "steps")]
    pub frames: Option<usize>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated spectrum for `linear_lattice`.
    #[arg(long, value_delimiter = ',')]
    pub eigenvalues: Option<Vec<f64>>,
    /// Codec mode of the written container.
    #[arg(long, default_value = "lossless")]
    pub mode: CodecMode,
    /// Container path, or frame directory with `--frames`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub inputs: Vec<String>,
    pub parameters: BTreeMap<String, Value>,
    pub timings: Vec<Phase>,
    pub wall_seconds: f64,
    pub metrics: BTreeMap<String, Value>,
}

impl RunReport {
    fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            inputs: Vec::new(),
            parameters: BTreeMap::new(),
            timings: Vec::new(),
            wall_seconds: 0.0,
            metrics: BTreeMap::new(),
        }
    }

    fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(key.into(), json!(value));
    }

    fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics.insert(key.into(), json!(value));
    }

    /// Share of wall time attributed to named phases.
    pub fn timing_coverage(&self) -> f64 {
        let covered: f64 = self.timings.iter().map(|p| p.seconds).sum();
        if self.wall_seconds > 0.0 {
            covered / self.wall_seconds
        } else {
            1.0
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.command);
        for (k, v) in &self.metrics {
            out.push_str(&format!("  {k}: {v}\n"));
        }
        for p in &self.timings {
            out.push_str(&format!("  time {}: {:.3}s\n", p.name, p.seconds));
        }
        out
    }
}

// Consecutive laps partition the run, so the phases add up to the wall time.
struct Stopwatch {
    start: Instant,
    last: Instant,
    phases: Vec<Phase>,
}

impl Stopwatch {
    fn start_at(start: Instant) -> Self {
        Self {
            start,
            last: start,
            phases: Vec::new(),
        }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.phases.push(Phase {
            name: name.into(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }

    fn finish(mut self, report: &mut RunReport, name: &str) {
        self.lap(name);
        report.wall_seconds = (self.last - self.start).as_secs_f64();
        report.timings = self.phases;
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::BadSpec(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let start = Instant::now();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let json = cli.json;
    match execute(cli, start) {
        Ok(report) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.to_text());
            }
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command. `start` is when the process began handling it.
pub fn execute(cli: Cli, start: Instant) -> CliResult<RunReport> {
    let mut clock = Stopwatch::start_at(start);
    clock.lap("parse");
    match cli.command {
        Command::Compress(a) => cmd_compress(a, clock),
        Command::DmdBatch(a) => cmd_dmd_batch(a, clock),
        Command::DmdStream(a) => cmd_dmd_stream(a, clock),
        Command::Synth(a) => cmd_synth(a, clock),
    }
}

fn default_seed() -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .or_else(|_| usage(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn file_size(path: &Path) -> CliResult<u64> {
    Ok(fs::metadata(path).map_err(|e| Error::io(path, e))?.len())
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string(value).expect("model serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn cmd_compress(a: CompressArgs, mut clock: Stopwatch) -> CliResult<RunReport> {
    let mut report = RunReport::new("compress");
    report.inputs.push(a.input.display().to_string());
    report.param("mode", a.mode.to_string());
    report.param("output", a.output.display().to_string());

    let mut reader = ContainerReader::open(&a.input)?;
    let field = reader.header().field.clone();
    let snaps = reader.read_all()?;
    clock.lap("read");
    let summary = write_container_named(&a.output, &snaps, a.mode, &field)?;
    clock.lap("encode");
    let check = read_container(&a.output)?;
    let max_change = check.data().sub(snaps.data()).max_abs();
    clock.lap("verify");

    let in_bytes = file_size(&a.input)?;
    let reduction = 1.0 - summary.bytes_written as f64 / in_bytes as f64;
    report.metric("snapshots", snaps.len());
    report.metric("input_bytes", in_bytes);
    report.metric("output_bytes", summary.bytes_written);
    report.metric("reduction_percent", 100.0 * reduction);
    report.metric("ratio_vs_raw", summary.ratio);
    report.metric("max_abs_change", max_change);
    clock.finish(&mut report, "report");
    Ok(report)
}

fn cmd_dmd_batch(a: BatchArgs, mut clock: Stopwatch) -> CliResult<RunReport> {
    let mut report = RunReport::new("dmd-batch");
    report.inputs.push(a.container.display().to_string());
    let rank = match (a.rank, a.tau) {
        (Some(0), _) => return usage("--rank must be at least 1"),
        (Some(r), _) => RankChoice::Fixed(r),
        (None, Some(t)) if !(t > 0.0 && t < 1.0) => return usage("--tau must lie in (0, 1)"),
        (None, Some(t)) => RankChoice::Auto(t),
        (None, None) => RankChoice::Auto(DEFAULT_TAU),
    };
    if let Some(v) = a.cell_volume {
        if !(v > 0.0) {
            return usage("--cell-volume must be positive");
        }
    }
    let backend = match a.svd {
        SvdChoice::Exact => SvdBackend::Exact,
        SvdChoice::Rsvd => {
            let seed = match a.seed {
                Some(s) => s,
                None => default_seed()?,
            };
            let sketch = match (rank, a.sketch_rank) {
                (RankChoice::Fixed(r), _) => r,
                (_, Some(k)) => k,
                _ => return usage("--svd rsvd with an automatic rank needs --sketch-rank"),
            };
            report.param("seed", seed);
            SvdBackend::Rsvd(RsvdConfig {
                rank: sketch,
                oversampling: a.oversampling,
                power_iterations: a.power_iterations,
                seed,
            })
        }
    };
    report.param("rank", rank);
    report.param("svd", format!("{:?}", a.svd).to_lowercase());
    report.param("out", a.out.display().to_string());

    let snaps = read_container(&a.container)?;
    clock.lap("read");
    let model = fit_batch(&snaps, rank, backend)?;
    clock.lap("fit");
    let recon = reconstruct_series(&model, &snaps.times())?;
    clock.lap("reconstruct");
    let rows = metrics::metric_rows(&snaps, &recon, None, a.cell_volume)?;
    let eta_f = frobenius_relative_error(&snaps, &recon)?;
    clock.lap("metrics");
    create_dir(&a.out)?;
    write_json(&a.out.join("model.json"), &model)?;
    metrics::write_csv(a.out.join("metrics.csv"), &rows)?;
    clock.lap("write");

    report.metric("snapshots", snaps.len());
    report.metric("rank", model.rank);
    report.metric("eta_F", eta_f);
    report.metric("max_eta", rows.iter().map(|r| r.eta).fold(0.0, f64::max));
    if a.cell_volume.is_some() {
        let worst = rows.iter().filter_map(|r| r.mass_err).fold(0.0, f64::max);
        report.metric("max_mass_err", worst);
    }
    clock.finish(&mut report, "report");
    Ok(report)
}

fn parse_crop(text: &str) -> CliResult<Crop> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .or_else(|_| usage(format!("--crop expects x,y,width,height, got `{text}`")))?;
    match parts[..] {
        [x, y, width, height] => Ok(Crop { x, y, width, height }),
        _ => usage(format!("--crop expects four values, got `{text}`")),
    }
}

// Waits for the first frame and reads its geometry.
fn first_frame_spec(dir: &Path, poll: Duration, timeout: Option<Duration>) -> CliResult<Option<FrameSpec>> {
    let first = dir.join(imageio::frame_name(0));
    let started = Instant::now();
    loop {
        if first.exists() {
            let bytes = fs::read(&first).map_err(|e| Error::io(&first, e))?;
            return Ok(Some(imageio::probe_frame(&bytes)?));
        }
        if dir.join(imageio::END_OF_STREAM).exists() {
            return Ok(None);
        }
        if timeout.is_some_and(|t| started.elapsed() > t) {
            return Err(Error::io(
                &first,
                std::io::Error::new(std::io::ErrorKind::TimedOut, "no frame arrived"),
            )
            .into());
        }
        thread::sleep(poll);
    }
}

fn cmd_dmd_stream(a: StreamArgs, mut clock: Stopwatch) -> CliResult<RunReport> {
    let mut report = RunReport::new("dmd-stream");
    report.inputs.push(a.frame_dir.display().to_string());
    if a.rank == 0 {
        return usage("--rank must be at least 1");
    }
    if !(a.dt > 0.0 && a.dt.is_finite()) {
        return usage("--dt must be positive");
    }
    if !(a.epsilon_svd > 0.0) {
        return usage("--epsilon-svd must be positive");
    }
    if a.queue == 0 {
        return usage("--queue must be at least 1");
    }
    let crop = a.crop.as_deref().map(parse_crop).transpose()?;
    let timeout = match a.timeout {
        Some(t) if !(t > 0.0) => return usage("--timeout must be positive"),
        other => other.map(Duration::from_secs_f64),
    };
    report.param("rank", a.rank);
    report.param("dt", a.dt);
    report.param("epsilon_svd", a.epsilon_svd);
    report.param("queue", a.queue);
    report.param("out", a.out.display().to_string());

    let mut options = WatchOptions::new(a.dt);
    options.idle_timeout = timeout;
    let Some(mut spec) = first_frame_spec(&a.frame_dir, options.poll, timeout)? else {
        return Err(Error::NotEnoughSnapshots {
            accepted: 0,
            needed: a.rank.max(2),
        }
        .into());
    };
    if let Some(c) = crop {
        spec = spec.with_crop(c).or_else(|e| usage(e.to_string()))?;
    }
    report.param("frame", json!({ "width": spec.width, "height": spec.height, "crop": spec.crop }));

    // watcher thread → bounded queue → DMD update on this thread
    let (tx, rx) = mpsc::sync_channel(a.queue);
    let dir = a.frame_dir.clone();
    let watcher = thread::spawn(move || {
        for item in imageio::watch_stream(&dir, spec, options) {
            let failed = item.is_err();
            if tx.send(item).is_err() || failed {
                break;
            }
        }
    });
    let mut state = stream_init(a.rank, a.epsilon_svd)?;
    let (w, h) = spec.vector_dims();
    let mut ingested = DenseMatrix::zeros(w * h, 0);
    let mut failure = None;
    for item in rx {
        match item.map_err(CliError::from).and_then(|(v, t)| {
            state.push(&v, t)?;
            ingested.push_column(&v)?;
            Ok(())
        }) {
            Ok(()) => {}
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    watcher.join().expect("watcher thread panicked");
    if let Some(e) = failure {
        return Err(e);
    }
    clock.lap("ingest");
    let (seen, accepted) = (state.seen_count(), state.accepted_count());
    if accepted < seen {
        eprintln!("dmd-stream: {} of {seen} frames were redundant and not retained", seen - accepted);
    }

    let model: DmdModel = state.finalize()?;
    clock.lap("finalize");
    let truth = SnapshotMatrix::new(ingested, a.dt, 0.0)?;
    let recon = reconstruct_series(&model, &truth.times())?;
    clock.lap("reconstruct");
    let window = metrics::SsimParams::default().window;
    let frame = (w >= window && h >= window).then_some((w, h));
    let rows = metrics::metric_rows(&truth, &recon, frame, None)?;
    let eta_f = frobenius_relative_error(&truth, &recon)?;
    clock.lap("metrics");

    let frames_dir = a.out.join("frames");
    create_dir(&frames_dir)?;
    let out_spec = FrameSpec::gray(w, h)?;
    for (k, col) in recon.data().columns().enumerate() {
        imageio::write_frame(&frames_dir, k, &imageio::vector_to_frame(col, &out_spec)?)?;
    }
    metrics::write_csv(a.out.join("metrics.csv"), &rows)?;
    write_json(&a.out.join("model.json"), &model)?;
    clock.lap("write");

    let ssims: Vec<f64> = rows.iter().filter_map(|r| r.ssim).collect();
    report.metric("frames_seen", seen);
    report.metric("accepted_count", accepted);
    report.metric("rank", model.rank);
    report.metric("eta_F", eta_f);
    if !ssims.is_empty() {
        report.metric("mean_ssim", ssims.iter().sum::<f64>() / ssims.len() as f64);
        report.metric("min_ssim", ssims.iter().copied().fold(f64::INFINITY, f64::min));
    }
    clock.finish(&mut report, "report");
    Ok(report)
}

fn cmd_synth(a: SynthArgs, mut clock: Stopwatch) -> CliResult<RunReport> {
    let mut report = RunReport::new("synth");
    let mut kind = GeneratorKind::from_name(&a.kind)?;
    if let Some(values) = a.eigenvalues {
        match &mut kind {
            GeneratorKind::LinearLattice { eigenvalues, .. } => *eigenvalues = values,
            _ => return usage("--eigenvalues only applies to linear_lattice"),
        }
    }
    let mut spec = GeneratorSpec::defaults(kind);
    if let Some(s) = a.steps.or(a.frames) {
        spec.steps = s;
    }
    if let Some(nx) = a.nx {
        spec.nx = nx;
    }
    if let Some(ny) = a.ny {
        spec.ny = ny;
    }
    if let Some(dt) = a.dt {
        spec.dt = dt;
    }
    spec.seed = match a.seed {
        Some(s) => s,
        None => default_seed()?,
    };
    spec.validate()?;
    report.param("kind", spec.kind.name());
    report.param("steps", spec.steps);
    report.param("grid", [spec.nx, spec.ny]);
    report.param("dt", spec.dt);
    report.param("seed", spec.seed);
    report.param("out", a.out.display().to_string());
    clock.lap("setup");

    if a.frames.is_some() {
        let count = synth::render_frames(&spec, &a.out)?;
        clock.lap("render");
        report.metric("frames", count);
    } else {
        report.param("mode", a.mode.to_string());
        let generated = synth::generate(&spec)?;
        clock.lap("generate");
        let summary = write_container_named(&a.out, &generated.snapshots, a.mode, spec.kind.name())?;
        clock.lap("write");
        report.metric("snapshots", generated.snapshots.len());
        report.metric("bytes_written", summary.bytes_written);
        report.metric("ratio_vs_raw", summary.ratio);
        if let Some(eigs) = generated.eigenvalues {
            report.metric("eigenvalues", eigs.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>());
        }
    }
    clock.finish(&mut report, "report");
    Ok(report)
}

//! `brakesense` command-line tool.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 missing input file,
//! 3 invalid configuration or scenario spec, 4 malformed detection stream or
//! truth file, 5 scenario id mismatch or empty scenario directory.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brakesense_core::config::{env_overrides, ConfigError, PipelineConfig};
use brakesense_core::detection::write_stream;
use brakesense_core::eval::{
    benign_suite, day_collision_suite, evaluate_dir, format_truth, generate_scenario, night_collision_suite,
    parse_truth, synthetic_load, throughput_bench, EvalError, GroundTruth, HarnessError, LoadSpec, ScenarioError,
    ScenarioSpec,
};
use brakesense_core::pipeline::{read_stream_file, Pipeline, PipelineError};
use clap::{Parser, Subcommand, ValueEnum};
use tracing::info;

#[derive(Debug, Parser)]
#[command(name = "brakesense", version, about = "Multi-camera collision warning and braking pipeline")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true, env = "BRAKESENSE_CONFIG")]
    config: Option<PathBuf>,
    /// Run detection on every N-th composite frame (overrides the config).
    #[arg(long, global = true)]
    stride: Option<u32>,
    /// Log filter, e.g. `warn`, `info`, `brakesense_core=debug`.
    #[arg(long, global = true, env = "BRAKESENSE_LOG_LEVEL", default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay recorded detection streams (one JSON-lines file per camera).
    Replay {
        #[arg(required = true)]
        streams: Vec<PathBuf>,
        /// Actuation log destination; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-frame score trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Generate synthetic camera streams and ground truth.
    Simulate {
        /// Scenario spec (TOML). Mutually exclusive with --suite.
        #[arg(required_unless_present = "suite", conflicts_with = "suite")]
        spec: Option<PathBuf>,
        /// Generate a whole built-in suite instead of one spec.
        #[arg(long, value_enum)]
        suite: Option<Suite>,
        /// Number of scenarios for --suite.
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; receives `<id>/cam<k>.jsonl` and `truth.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate recorded scenarios against ground truth.
    Evaluate {
        /// Ground-truth file, one `id,collision,contact_frame,tag` line per scenario.
        #[arg(long)]
        truth: PathBuf,
        /// Directory holding one `<id>/cam<k>.jsonl` set per scenario.
        #[arg(long)]
        scenarios: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure pipeline throughput on synthetic load.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        frames: u64,
        #[arg(long, default_value_t = 20)]
        detections: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON results here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Suite {
    Day,
    Benign,
    Night,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    let code = if e.kind() == io::ErrorKind::NotFound { 2 } else { 1 };
    Failure::new(code, format!("{}: {e}", path.display()))
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { path, source } => io_failure(&path, source),
            other => Failure::new(3, other),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            PipelineError::Open { path, source } => io_failure(&path, source),
            e @ (PipelineError::Stream { .. } | PipelineError::Fusion { .. }) => Failure::new(4, e),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::new(3, e)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Scenario(s) => s.into(),
            HarnessError::Pipeline { id, source } => {
                let inner: Failure = source.into();
                Failure::new(inner.code, format!("scenario `{id}`: {}", inner.message))
            }
            HarnessError::Eval(e @ (EvalError::IdMismatch { .. } | EvalError::DuplicateId(_))) => Failure::new(5, e),
            HarnessError::Eval(e @ EvalError::TruthFormat { .. }) => Failure::new(4, e),
            HarnessError::Io { path, source } => io_failure(&path, source),
            e @ HarnessError::EmptyScenarioDir(_) => Failure::new(5, e),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::from_toml_with("", env_overrides(std::env::vars()))?,
    };
    if let Some(stride) = cli.stride {
        config.frame_stride = stride;
        config.validate()?;
    }
    Ok(config)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn replay(config: PipelineConfig, streams: &[PathBuf], out: Option<&Path>, trace: Option<&Path>) -> Result<(), Failure> {
    let pipeline = Pipeline::new(&config)?;
    let data = streams
        .iter()
        .map(|p| read_stream_file(p, pipeline.labels()))
        .collect::<Result<Vec<_>, _>>()?;
    let run = pipeline.run(data)?;
    match out {
        Some(path) => write_file(path, &run.log_text())?,
        None => print!("{}", run.log_text()),
    }
    if let Some(path) = trace {
        let mut csv = String::from("frame,ts_ms,tracks,max_score,alert,emergency,duty\n");
        for r in &run.trace {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.frame_index,
                r.timestamp_ms,
                r.tracks,
                r.max_score().map_or(String::new(), |s| format!("{s:.4}")),
                u8::from(r.alert),
                u8::from(r.emergency),
                r.duty.map_or(String::new(), |d| format!("{d:.4}")),
            ));
        }
        write_file(path, &csv)?;
    }
    let s = run.stats;
    eprintln!(
        "replayed {} packets: {} ticks, {} processed, {} misaligned, {} commands ({} emergency), {} actuation failures",
        s.packets, s.ticks, s.processed, s.skipped_alignment, s.commands, s.emergencies, s.actuation_failures
    );
    Ok(())
}

fn read_spec(path: &Path) -> Result<ScenarioSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    ScenarioSpec::from_toml(&text).map_err(|e| Failure::new(3, format!("{}: {e}", path.display())))
}

/// Writes streams under `out/<id>/` and merges the truth line into `out/truth.csv`.
fn write_generated(config: &PipelineConfig, out: &Path, specs: &[ScenarioSpec], seed: u64) -> Result<Vec<GroundTruth>, Failure> {
    let labels = config.labels().map_err(|e| Failure::new(3, e))?;
    let mut truths = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let generated = generate_scenario(spec, seed.wrapping_add(i as u64), &labels)?;
        let dir = out.join(&spec.id);
        fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
        for (k, stream) in generated.streams.iter().enumerate() {
            let path = dir.join(format!("cam{k}.jsonl"));
            let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
            write_stream(io::BufWriter::new(file), stream, &labels).map_err(|e| io_failure(&path, e))?;
        }
        truths.push(generated.truth);
    }
    let truth_path = out.join("truth.csv");
    let mut merged = match fs::read_to_string(&truth_path) {
        Ok(text) => parse_truth(&text).map_err(|e| Failure::new(4, format!("{}: {e}", truth_path.display())))?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_failure(&truth_path, e)),
    };
    merged.retain(|t| !truths.iter().any(|n| n.scenario_id == t.scenario_id));
    merged.extend(truths.iter().cloned());
    merged.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    let text: String = merged.iter().map(|t| format_truth(t) + "\n").collect();
    write_file(&truth_path, &text)?;
    Ok(truths)
}

fn simulate(config: PipelineConfig, spec: Option<&Path>, suite: Option<Suite>, count: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let specs = match (spec, suite) {
        (Some(path), _) => vec![read_spec(path)?],
        (None, Some(Suite::Day)) => day_collision_suite(count, seed),
        (None, Some(Suite::Benign)) => benign_suite(count, seed),
        (None, Some(Suite::Night)) => night_collision_suite(count, seed),
        (None, None) => return Err(Failure::new(3, "either a spec file or --suite is required")),
    };
    let truths = write_generated(&config, out, &specs, seed)?;
    let mut stdout = io::stdout().lock();
    for t in &truths {
        let _ = match t.contact_frame {
            Some(frame) => writeln!(stdout, "{}: contact_frame {frame}", t.scenario_id),
            None => writeln!(stdout, "{}: no collision", t.scenario_id),
        };
    }
    Ok(())
}

fn evaluate(config: PipelineConfig, truth: &Path, scenarios: &Path, out: Option<&Path>) -> Result<(), Failure> {
    if !scenarios.is_dir() {
        return Err(Failure::new(2, format!("{}: not a directory", scenarios.display())));
    }
    let (report, _) = evaluate_dir(truth, scenarios, &config)?;
    print!("{}", report.table());
    match out {
        Some(path) => write_file(path, &report.to_json())?,
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn bench(config: PipelineConfig, frames: u64, detections: usize, seed: u64, out: Option<&Path>) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for (name, dropout) in [("day", 0.05), ("night", 0.3)] {
        let spec = LoadSpec {
            frames,
            detections_per_camera: detections,
            dropout,
            fps: config.fps,
            ..LoadSpec::default()
        };
        let streams = synthetic_load(&spec, seed);
        info!(name, frames, "running throughput load");
        let first = throughput_bench(streams.clone(), &config)?;
        let second = throughput_bench(streams, &config)?;
        let deterministic = first.log_text == second.log_text;
        println!(
            "{name:<6} {} frames, {} detections: {:.0} fps ({:.3} s), {} commands, deterministic: {deterministic}",
            first.frames,
            first.detections,
            first.fps,
            first.elapsed.as_secs_f64(),
            first.commands
        );
        rows.push(serde_json::json!({
            "load": name,
            "dropout": dropout,
            "report": first,
            "deterministic": deterministic,
        }));
    }
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&rows).map_err(|e| Failure::new(1, e))?;
        write_file(path, &json)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Replay { streams, out, trace } => replay(config, streams, out.as_deref(), trace.as_deref()),
        Command::Simulate {
            spec,
            suite,
            count,
            seed,
            out,
        } => simulate(config, spec.as_deref(), *suite, *count, *seed, out),
        Command::Evaluate { truth, scenarios, out } => evaluate(config, truth, scenarios, out.as_deref()),
        Command::Bench {
            frames,
            detections,
            seed,
            out,
        } => bench(config, *frames, *detections, *seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log_level)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(io::stderr).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

//! `qsiam`: tracking, benchmarking, latency profiling and accelerator
//! design-space exploration from the command line.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qsiam_core::metrics::{run_benchmark, BenchmarkReport, OracleTracker, SequenceTracker, SiamSequenceTracker};
use qsiam_core::perfmodel::{
    estimate, explore, fit_energy, reference_configs, CalibrationTable, CandidateSpace, FoldingConfig, PerfError,
    DEFAULT_CLOCK_HZ,
};
use qsiam_core::profile::{aggregate_timings, TimingReport};
use qsiam_core::siamnet::{
    canonical_network, gen_random_weights, load_weights, param_count, save_weights, NetError, QuantizedNetwork,
};
use qsiam_core::tracker::sequence::format_results;
use qsiam_core::tracker::{
    track_sequence, BBox, FeatureExtractor, Frame, FrameSource, PooledGrayStub, SequenceDir, TrackError,
    TrackerConfig,
};
use qsiam_core::metrics::MetricsError;

use crate::config::FileConfig;

/// Seconds per stage of the reference hardware/software split, used by
/// `profile --reference`.
const REFERENCE_STAGES: [f64; 7] = [0.0102, 0.001, 0.0205, 0.008, 0.0081, 0.0011, 0.0057];
const REFERENCE_MEASURED_TOTAL: f64 = 0.0587;

#[derive(Parser, Debug)]
#[command(name = "qsiam", version, about = "Quantized Siamese tracker toolkit")]
struct Cli {
    /// TOML file with `[tracker]` and `[folding]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for all written artifacts.
    #[arg(long, global = true, default_value = "out")]
    output: PathBuf,
    /// Seed for generated weights.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Number of search scales, overriding the config file.
    #[arg(long, global = true, value_parser = ["1", "3"])]
    scales: Option<String>,
    /// Accelerator clock, overriding the config file.
    #[arg(long, global = true)]
    clock_hz: Option<f64>,
    /// Skip timing outputs so every written file is byte-stable.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track one sequence directory and write per-frame boxes.
    Track {
        sequence: PathBuf,
        #[command(flatten)]
        net: NetArgs,
        /// Also write frames with the predicted box drawn in.
        #[arg(long)]
        dump_frames: bool,
    },
    /// One-pass evaluation of every sequence under a dataset directory.
    Bench {
        dataset: PathBuf,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, value_enum, default_value_t = TrackerKind::Siam)]
        tracker: TrackerKind,
    },
    /// Cost-model estimates and Pareto exploration of layer foldings.
    Dse {
        /// Estimate a fixed set instead of exploring.
        #[arg(long, value_enum)]
        configs: Option<ConfigSet>,
        /// Resource-unit budget for exploration.
        #[arg(long)]
        budget: Option<u64>,
        /// Candidate PE values, comma separated.
        #[arg(long, value_delimiter = ',')]
        pe: Vec<usize>,
        /// Candidate SIMD values, comma separated.
        #[arg(long, value_delimiter = ',')]
        simd: Vec<usize>,
    },
    /// Per-stage latency breakdown of a tracking run.
    Profile {
        /// Sequence to track; omit with `--reference`.
        sequence: Option<PathBuf>,
        #[command(flatten)]
        net: NetArgs,
        /// Aggregate the bundled reference stage latencies instead.
        #[arg(long, conflicts_with = "sequence")]
        reference: bool,
    },
    /// Write a seeded random weight container.
    GenWeights {
        /// Destination file; defaults to `<output>/weights.qsiam`.
        path: Option<PathBuf>,
    },
}

#[derive(clap::Args, Debug)]
struct NetArgs {
    /// Weight container for the quantized network.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Feature extractor to run.
    #[arg(long, value_enum, default_value_t = ExtractorKind::Net)]
    extractor: ExtractorKind,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ExtractorKind {
    Net,
    Stub,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TrackerKind {
    Siam,
    Stub,
    Oracle,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ConfigSet {
    /// The six bundled reference foldings V1..V6.
    #[value(name = "table3", alias = "reference")]
    Reference,
    /// The `[folding]` table of `--config`.
    Config,
}

#[derive(Debug)]
enum CliError {
    Args(String),
    Ingestion(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Args(_) => 2,
            CliError::Ingestion(_) => 3,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Args(m) => write!(f, "argument error: {m}"),
            CliError::Ingestion(m) => write!(f, "input error: {m}"),
            CliError::Internal(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Spec(_) | NetError::Kernel(_) => CliError::Internal(e.to_string()),
            _ => CliError::Ingestion(e.to_string()),
        }
    }
}

impl From<TrackError> for CliError {
    fn from(e: TrackError) -> Self {
        match e {
            TrackError::Parameter(_) => CliError::Args(e.to_string()),
            TrackError::Ingestion { .. } | TrackError::GroundTruth { .. } | TrackError::Io(_) => {
                CliError::Ingestion(e.to_string())
            }
            TrackError::Network(n) => n.into(),
            TrackError::Tensor(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Parameter(m) => CliError::Args(m),
            MetricsError::Sequence { sequence, source } => match CliError::from(source) {
                CliError::Args(m) => CliError::Args(format!("sequence `{sequence}`: {m}")),
                CliError::Ingestion(m) => CliError::Ingestion(format!("sequence `{sequence}`: {m}")),
                CliError::Internal(m) => CliError::Internal(format!("sequence `{sequence}`: {m}")),
            },
            MetricsError::Track(t) => t.into(),
        }
    }
}

impl From<PerfError> for CliError {
    fn from(e: PerfError) -> Self {
        match e {
            PerfError::Folding { .. } | PerfError::Parameter(_) => CliError::Args(e.to_string()),
            PerfError::Fit(_) | PerfError::Fixture { .. } => CliError::Internal(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Internal(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

struct Settings {
    tracker: TrackerConfig,
    folding: Option<FoldingConfig>,
    clock_hz: f64,
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(CliError::Args)?,
        None => FileConfig::default(),
    };
    let mut tracker = file.tracker;
    if let Some(s) = &cli.scales {
        tracker.num_scales = s.parse().map_err(|_| CliError::Args(format!("bad scale count `{s}`")))?;
    }
    tracker.validate()?;
    let clock_hz = cli.clock_hz.or(file.folding.as_ref().and_then(|f| f.clock_hz)).unwrap_or(DEFAULT_CLOCK_HZ);
    if clock_hz.is_nan() || clock_hz <= 0.0 {
        return Err(CliError::Args(format!("clock must be positive, got {clock_hz}")));
    }
    let folding = file.folding.map(|f| FoldingConfig::new(f.name, f.folds, clock_hz));
    Ok(Settings { tracker, folding, clock_hz })
}

enum Extractor {
    Net(Box<QuantizedNetwork>),
    Stub(PooledGrayStub),
}

impl Extractor {
    fn load(args: &NetArgs) -> Result<Self, CliError> {
        match (args.extractor, &args.weights) {
            (ExtractorKind::Stub, _) => Ok(Extractor::Stub(PooledGrayStub::default())),
            (ExtractorKind::Net, None) => {
                Err(CliError::Args("`--weights` is required unless `--extractor stub` is given".into()))
            }
            (ExtractorKind::Net, Some(path)) => {
                if !path.is_file() {
                    return Err(CliError::Ingestion(format!("weights file {} not found", path.display())));
                }
                let spec = canonical_network();
                let weights = load_weights(path, &spec)?;
                Ok(Extractor::Net(Box::new(QuantizedNetwork::new(&spec, &weights)?)))
            }
        }
    }

    fn as_dyn(&self) -> &dyn FeatureExtractor {
        match self {
            Extractor::Net(n) => n.as_ref(),
            Extractor::Stub(s) => s,
        }
    }
}

fn timing_report(output: &qsiam_core::tracker::TrackOutput) -> Result<Option<TimingReport>, CliError> {
    if output.timing.frames == 0 {
        return Ok(None);
    }
    aggregate_timings(std::slice::from_ref(&output.timing), &[output.measured_total])
        .map(Some)
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn draw_box(frame: &mut Frame, b: &BBox, rgb: [u8; 3]) {
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let (x0, y0, bw, bh) = b.to_top_left();
    let x0 = x0.round() as i64;
    let y0 = y0.round() as i64;
    let x1 = x0 + bw.round() as i64 - 1;
    let y1 = y0 + bh.round() as i64 - 1;
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            frame.set_pixel(x as usize, y as usize, rgb);
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

fn cmd_track(cli: &Cli, sequence: &Path, net: &NetArgs, dump_frames: bool) -> Result<(), CliError> {
    let s = settings(cli)?;
    // Everything that can fail on input is resolved before any file is written.
    let extractor = Extractor::load(net)?;
    let seq = SequenceDir::open(sequence)?;
    let out = track_sequence(&seq, seq.init_box(), extractor.as_dyn(), &s.tracker)?;

    let results = cli.output.join("results.txt");
    write_file(&results, format_results(&out.boxes))?;
    println!("{}: {} frames -> {}", seq.name, out.boxes.len(), results.display());
    if dump_frames {
        let dir = cli.output.join("frames");
        for (i, b) in out.boxes.iter().enumerate() {
            let mut frame = seq.frame(i)?;
            draw_box(&mut frame, b, [255, 0, 0]);
            let path = dir.join(format!("{:08}.png", i + 1));
            write_file(&path, [])?;
            frame.to_rgb_image().save(&path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        }
    }
    if !cli.no_timing {
        if let Some(report) = timing_report(&out)? {
            write_file(&cli.output.join("timing.csv"), report.to_csv())?;
            println!("{report}");
        }
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, dataset: &Path, net: &NetArgs, kind: TrackerKind) -> Result<(), CliError> {
    let s = settings(cli)?;
    let report: BenchmarkReport = match kind {
        TrackerKind::Oracle => run_benchmark(dataset, &OracleTracker)?,
        TrackerKind::Stub | TrackerKind::Siam => {
            let extractor = if kind == TrackerKind::Stub {
                Extractor::Stub(PooledGrayStub::default())
            } else {
                Extractor::load(net)?
            };
            let tracker = SiamSequenceTracker { extractor: extractor.as_dyn(), config: s.tracker.clone() };
            run_benchmark(dataset, &tracker as &dyn SequenceTracker)?
        }
    };
    write_file(&cli.output.join("bench.csv"), report.to_csv(!cli.no_timing))?;
    println!("{report}");
    Ok(())
}

const DSE_HEADER: &str = "name,fps,units,watts\n";

fn cmd_dse(
    cli: &Cli,
    configs: Option<ConfigSet>,
    budget: Option<u64>,
    pe: &[usize],
    simd: &[usize],
) -> Result<(), CliError> {
    let s = settings(cli)?;
    let spec = canonical_network();
    let mut csv = String::from(DSE_HEADER);
    match configs {
        Some(ConfigSet::Reference) => {
            let cfgs = reference_configs(s.clock_hz);
            let mut ests = cfgs.iter().map(|c| estimate(&spec, c)).collect::<Result<Vec<_>, _>>()?;
            let calib = CalibrationTable::reference();
            let fit = fit_energy(&calib, &ests)?;
            println!("power model: {:.4} W + {:.4e} W/unit", fit.p_base, fit.alpha);
            println!("{:<6} {:>10} {:>8} {:>9} {:>9} {:>12}", "name", "fps", "units", "watts", "measured", "J/frame");
            for ((c, e), row) in cfgs.iter().zip(ests.iter_mut()).zip(&calib.rows) {
                fit.annotate(e);
                let w = e.energy_watts.unwrap_or_default();
                csv += &format!("{},{:.4},{},{:.4}\n", c.name, e.latency_fps, e.resource_units, w);
                println!(
                    "{:<6} {:>10.3} {:>8} {:>9.3} {:>9.2} {:>12.5}",
                    c.name,
                    e.latency_fps,
                    e.resource_units,
                    w,
                    row.watts,
                    w / e.latency_fps
                );
            }
        }
        Some(ConfigSet::Config) => {
            let cfg = s
                .folding
                .ok_or_else(|| CliError::Args("`--configs config` needs a `[folding]` table in `--config`".into()))?;
            let e = estimate(&spec, &cfg)?;
            csv += &format!("{},{:.4},{},\n", cfg.name, e.latency_fps, e.resource_units);
            println!(
                "{} ({}): {:.3} fps latency, {:.3} fps pipelined, {} units, bottleneck `{}`",
                cfg.name,
                cfg.label(),
                e.latency_fps,
                e.throughput_fps,
                e.resource_units,
                spec.layers[e.bottleneck_layer].name
            );
        }
        None => {
            let space = match (pe.is_empty(), simd.is_empty()) {
                (true, true) => CandidateSpace::from_configs(&spec, &reference_configs(s.clock_hz))?,
                (false, false) => CandidateSpace::from_sets(&spec, pe, simd)?,
                _ => return Err(CliError::Args("`--pe` and `--simd` must be given together".into())),
            };
            let front = explore(&spec, budget.unwrap_or(u64::MAX), &space, s.clock_hz)?;
            println!("{} Pareto-optimal foldings", front.len());
            for (i, p) in front.iter().enumerate() {
                let name = format!("P{}", i + 1);
                csv += &format!("{},{:.4},{},\n", name, p.estimate.latency_fps, p.estimate.resource_units);
                println!(
                    "{:<5} {:>10.3} fps {:>8} units  {}",
                    name,
                    p.estimate.latency_fps,
                    p.estimate.resource_units,
                    p.config.label()
                );
            }
        }
    }
    write_file(&cli.output.join("dse.csv"), csv)?;
    Ok(())
}

fn cmd_profile(cli: &Cli, sequence: Option<&Path>, net: &NetArgs, reference: bool) -> Result<(), CliError> {
    let report = if reference {
        let sample = qsiam_core::profile::StageTiming::from_seconds(REFERENCE_STAGES);
        aggregate_timings(&[sample], &[REFERENCE_MEASURED_TOTAL]).map_err(|e| CliError::Internal(e.to_string()))?
    } else {
        let sequence = sequence.ok_or_else(|| CliError::Args("give a sequence or `--reference`".into()))?;
        let s = settings(cli)?;
        let extractor = Extractor::load(net)?;
        let seq = SequenceDir::open(sequence)?;
        let out = track_sequence(&seq, seq.init_box(), extractor.as_dyn(), &s.tracker)?;
        timing_report(&out)?.ok_or_else(|| CliError::Args("sequence has no frames after the first".into()))?
    };
    write_file(&cli.output.join("profile.csv"), report.to_csv())?;
    println!("{report}");
    Ok(())
}

fn cmd_gen_weights(cli: &Cli, path: Option<&Path>) -> Result<(), CliError> {
    let spec = canonical_network();
    let weights = gen_random_weights(&spec, cli.seed);
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| cli.output.join("weights.qsiam"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    save_weights(&weights, &path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
    println!("parameters: {}", param_count(&spec));
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Track { sequence, net, dump_frames } => cmd_track(cli, sequence, net, *dump_frames),
        Command::Bench { dataset, net, tracker } => cmd_bench(cli, dataset, net, *tracker),
        Command::Dse { configs, budget, pe, simd } => cmd_dse(cli, *configs, *budget, pe, simd),
        Command::Profile { sequence, net, reference } => cmd_profile(cli, sequence.as_deref(), net, *reference),
        Command::GenWeights { path } => cmd_gen_weights(cli, path.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qsiam: {e}");
            ExitCode::from(e.code())
        }
    }
}

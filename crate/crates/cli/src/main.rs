use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use emoface::cascade::serialize_cascade;
use emoface::detect::ScanParams;
use emoface::image::{decode_image, GrayImage};
use emoface::pipeline::{self, InputSource, PipelineConfig};
use emoface::select::{self, IntervalMethod, FER2013_TEST_SIZE, Z95, Z98};
use emoface::synth;
use emoface::tracking::TrackState;
use emoface::train::{self, StageGoal, TrainerConfig};

const BUNDLED_TABLE: &str = include_str!("../../core/fixtures/models.csv");

#[derive(Parser)]
#[command(name = "emoface", version, about = "Face detection, expression classification and head tracking")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect, classify and emit one NDJSON event per frame.
    Run(RunArgs),
    /// Train a detection cascade.
    Train(TrainArgs),
    /// Confidence intervals and budget-constrained model choice.
    SelectModel(SelectArgs),
    /// Per-stage timing report.
    Bench(BenchArgs),
}

#[derive(Args, Default)]
struct ModelArgs {
    #[arg(long)]
    cascade: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    scale_factor: Option<f64>,
    #[arg(long)]
    min_neighbors: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    models: ModelArgs,
    /// Frame file, directory of frames, or `-` for concatenated frames on stdin.
    #[arg(long)]
    input: Option<String>,
    /// Output directory; events go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_annotated: bool,
    /// Include per-stage timings in events.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Train on the bundled synthetic blob distribution.
    #[arg(long, conflicts_with_all = ["positives", "negatives"])]
    synthetic: bool,
    /// Directory of base-window-sized positive PGM samples.
    #[arg(long)]
    positives: Option<PathBuf>,
    /// Directory of base-window-sized negative PGM samples.
    #[arg(long)]
    negatives: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of candidate features to sample; all when absent.
    #[arg(long)]
    features: Option<usize>,
    /// Cascade output path.
    #[arg(long)]
    out: PathBuf,
    /// Per-round NDJSON log path.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// `name,accuracy_percent,size_mb` table; the bundled model zoo when absent.
    #[arg(long)]
    table: Option<PathBuf>,
    /// 95, 98, or a raw z quantile.
    #[arg(long)]
    z_level: Option<String>,
    #[arg(long)]
    budget_mb: Option<f64>,
    #[arg(long)]
    n_tests: Option<u64>,
    #[arg(long)]
    wilson: bool,
    /// NDJSON instead of a table.
    #[arg(long)]
    ndjson: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long)]
    input: Option<String>,
    /// Passes over the input.
    #[arg(long, default_value_t = 3)]
    repeat: usize,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct Config {
    cascade: Option<PathBuf>,
    weights: Option<PathBuf>,
    input: Option<String>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    emit_annotated: Option<bool>,
    timing: Option<bool>,
    scan: ScanParams,
    track: TrackState,
    select: SelectSection,
    train: TrainSection,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct SelectSection {
    table: Option<PathBuf>,
    z_level: Option<String>,
    budget_mb: Option<f64>,
    n_tests: Option<u64>,
    method: Option<IntervalMethod>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainSection {
    positives: Option<PathBuf>,
    negatives: Option<PathBuf>,
    seed: Option<u64>,
    features: Option<usize>,
    memory_budget_mb: Option<usize>,
    base_width: Option<usize>,
    base_height: Option<usize>,
    stages: Vec<StageGoal>,
}

impl Config {
    /// Reads `path` and resolves relative paths against its directory.
    fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        };
        resolve(&mut cfg.cascade);
        resolve(&mut cfg.weights);
        resolve(&mut cfg.out);
        resolve(&mut cfg.select.table);
        resolve(&mut cfg.train.positives);
        resolve(&mut cfg.train.negatives);
        if let Some(input) = cfg.input.as_mut() {
            if input != "-" && Path::new(input).is_relative() {
                *input = dir.join(&*input).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }
}

fn pipeline_config(cfg: &Config, models: &ModelArgs, input: Option<&String>) -> PipelineConfig {
    let mut scan = cfg.scan;
    if let Some(sf) = models.scale_factor {
        scan.scale_factor = sf;
    }
    if let Some(n) = models.min_neighbors {
        scan.min_neighbors = n;
    }
    PipelineConfig {
        cascade: models.cascade.clone().or_else(|| cfg.cascade.clone()),
        weights: models.weights.clone().or_else(|| cfg.weights.clone()),
        input: input.or(cfg.input.as_ref()).map(|s| InputSource::from_arg(s)),
        out: cfg.out.clone(),
        workers: models.workers.or(cfg.workers).unwrap_or(1),
        emit_annotated: cfg.emit_annotated.unwrap_or(false),
        timing: cfg.timing.unwrap_or(false),
        scan,
        track: cfg.track,
    }
}

fn run(cfg: &Config, args: &RunArgs) -> Result<()> {
    let mut config = pipeline_config(cfg, &args.models, args.input.as_ref());
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    config.emit_annotated |= args.emit_annotated;
    config.timing |= args.timing;
    let stdout = io::stdout();
    let mut lock = io::BufWriter::new(stdout.lock());
    let summary = pipeline::run_pipeline(&config, &mut lock)?;
    lock.flush()?;
    eprintln!(
        "{} frames, {} detections, {} unreadable",
        summary.frames, summary.detections, summary.failed_frames
    );
    Ok(())
}

fn read_samples(dir: &Path) -> Result<Vec<GrayImage>> {
    let paths = pipeline::list_frames(dir).with_context(|| format!("listing {}", dir.display()))?;
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            decode_image(&bytes).with_context(|| format!("decoding {}", p.display()))
        })
        .collect()
}

fn train_cmd(cfg: &Config, args: &TrainArgs) -> Result<()> {
    let t = &cfg.train;
    let seed = args.seed.or(t.seed).unwrap_or(synth::FIXTURE_SEED);
    let (positives, pool, base) = if args.synthetic {
        let fx = synth::blob_fixture(seed);
        (fx.train_positives, fx.negative_pool, (synth::BASE, synth::BASE))
    } else {
        let pos = args.positives.as_ref().or(t.positives.as_ref()).context("no --positives directory")?;
        let neg = args.negatives.as_ref().or(t.negatives.as_ref()).context("no --negatives directory")?;
        let base = (t.base_width.unwrap_or(24), t.base_height.unwrap_or(24));
        (read_samples(pos)?, read_samples(neg)?, base)
    };
    let goals = if t.stages.is_empty() { synth::fixture_goals() } else { t.stages.clone() };
    let all = train::enumerate_features(base.0, base.1);
    let features = match args.features.or(t.features).or(args.synthetic.then_some(synth::FIXTURE_FEATURES)) {
        Some(n) if n < all.len() => train::sample_features(&all, n, seed),
        _ => all,
    };
    let mut config = TrainerConfig {
        base_width: base.0,
        base_height: base.1,
        ..TrainerConfig::default()
    };
    if let Some(mb) = t.memory_budget_mb {
        config.memory_budget = mb << 20;
    }
    eprintln!(
        "training on {} positives, {} pool negatives, {} features",
        positives.len(),
        pool.len(),
        features.len()
    );
    let result = train::train_cascade(&positives, &pool, &goals, &features, &config)?;
    std::fs::write(&args.out, serialize_cascade(&result.model)).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(log) = &args.log {
        let mut w = io::BufWriter::new(std::fs::File::create(log)?);
        for round in result.rounds() {
            writeln!(w, "{}", serde_json::to_string(round)?)?;
        }
        w.flush()?;
    }
    for s in &result.stages {
        eprintln!(
            "stage: {} weak classifiers, detection {:.4}, false positives {:.4}{}",
            s.stage.weak_classifiers.len(),
            s.detection_rate,
            s.false_positive_rate,
            if s.goal_met { "" } else { " (goal not met)" }
        );
    }
    if result.stopped_early {
        eprintln!("stopped early: negative pool exhausted");
    }
    Ok(())
}

fn parse_z(level: &str) -> Result<f64> {
    match level.trim_start_matches('z') {
        "95" => Ok(Z95),
        "98" => Ok(Z98),
        other => match other.parse::<f64>() {
            Ok(z) if z > 0.0 && z < 10.0 => Ok(z),
            _ => bail!("--z-level must be 95, 98 or a z quantile below 10, got {level}"),
        },
    }
}

fn select_cmd(cfg: &Config, args: &SelectArgs) -> Result<()> {
    let s = &cfg.select;
    let n_tests = args.n_tests.or(s.n_tests).unwrap_or(FER2013_TEST_SIZE);
    let records = match args.table.as_ref().or(s.table.as_ref()) {
        Some(path) => {
            let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            select::read_records(file, n_tests)?
        }
        None => select::read_records(BUNDLED_TABLE.as_bytes(), n_tests)?,
    };
    let z = parse_z(args.z_level.as_deref().or(s.z_level.as_deref()).unwrap_or("98"))?;
    let budget = args.budget_mb.or(s.budget_mb).unwrap_or(150.0);
    let method = if args.wilson { IntervalMethod::Wilson } else { s.method.unwrap_or_default() };

    let matrix = select::overlap_groups(&records, z, method)?;
    let choice = select::select_model(&records, z, budget, method)?;
    let top = &matrix.records[matrix.top];
    let rationale = if choice.budget_exceeded {
        format!(
            "no model overlapping {} fits {budget} MB; {} is the smallest overlapping model",
            top.name, choice.model.name
        )
    } else {
        format!(
            "{} is the smallest model within {budget} MB whose interval overlaps {}",
            choice.model.name, top.name
        )
    };

    let mut out = io::BufWriter::new(io::stdout().lock());
    if args.ndjson {
        for (i, r) in matrix.records.iter().enumerate() {
            let overlaps: Vec<&str> = (0..matrix.records.len())
                .filter(|&j| matrix.overlaps[i][j])
                .map(|j| matrix.records[j].name.as_str())
                .collect();
            let line = serde_json::json!({
                "type": "interval",
                "name": r.name,
                "accuracy": r.accuracy,
                "size_mb": r.size_mb,
                "lower": matrix.intervals[i].lower,
                "upper": matrix.intervals[i].upper,
                "z": z,
                "method": method,
                "overlaps_top": matrix.overlaps[matrix.top][i],
                "overlaps": overlaps,
            });
            writeln!(out, "{line}")?;
        }
        let line = serde_json::json!({
            "type": "selection",
            "model": choice.model.name,
            "accuracy": choice.model.accuracy,
            "size_mb": choice.model.size_mb,
            "budget_mb": budget,
            "budget_exceeded": choice.budget_exceeded,
            "top": choice.top,
            "candidates": choice.candidates,
            "rationale": rationale,
        });
        writeln!(out, "{line}")?;
    } else {
        writeln!(
            out,
            "{} intervals, N = {n_tests}, {:?}",
            select::level_label(z),
            method
        )?;
        writeln!(out, "{:<20} {:>8} {:>9} {:>8} {:>8}  overlaps top", "model", "acc %", "size MB", "lower", "upper")?;
        for (i, r) in matrix.records.iter().enumerate() {
            let ci = matrix.intervals[i];
            let mark = if matrix.overlaps[matrix.top][i] { "yes" } else { "" };
            writeln!(
                out,
                "{:<20} {:>8.2} {:>9.1} {:>8.4} {:>8.4}  {mark}",
                r.name,
                r.accuracy * 100.0,
                r.size_mb,
                ci.lower,
                ci.upper
            )?;
        }
        writeln!(out)?;
        let width = matrix.records.len();
        writeln!(out, "overlap matrix (row/column order as above):")?;
        for i in 0..width {
            let row: String = (0..width).map(|j| if matrix.overlaps[i][j] { 'x' } else { '.' }).collect();
            writeln!(out, "  {row}  {}", matrix.records[i].name)?;
        }
        writeln!(out)?;
        writeln!(
            out,
            "selected: {}{}",
            choice.model.name,
            if choice.budget_exceeded { " (budget exceeded)" } else { "" }
        )?;
        writeln!(out, "{rationale}")?;
    }
    out.flush()?;
    Ok(())
}

fn bench_cmd(cfg: &Config, args: &BenchArgs) -> Result<()> {
    let config = pipeline_config(cfg, &args.models, args.input.as_ref());
    let cascade_path = config.cascade.as_ref().context("no cascade configured")?;
    let weights_path = config.weights.as_ref().context("no weights configured")?;
    let cascade = emoface::cascade::parse_cascade(&std::fs::read(cascade_path)?)?;
    let net = emoface::emotion::load_weights(&std::fs::read(weights_path)?)?;
    let input = config.input.as_ref().context("no input configured")?;
    if *input == InputSource::Stdin {
        bail!("bench needs a file or directory input");
    }
    let frames: Vec<_> = pipeline::file_frames(input)?.collect();
    let pipeline = pipeline::Pipeline {
        cascade: &cascade,
        classifier: &net,
        scan: config.scan,
        track: config.track,
        annotate: Some(emoface::annotate::AnnotateStyle::FULL),
        timing: true,
    };
    let mut per_stage: [Vec<f64>; 4] = Default::default();
    let start = Instant::now();
    let mut processed = 0;
    for _ in 0..args.repeat.max(1) {
        pipeline.run(frames.iter().cloned(), config.workers, |out| {
            processed += 1;
            if let Some(t) = out.event.timing {
                for (v, ms) in per_stage.iter_mut().zip([t.decode_ms, t.detect_ms, t.classify_ms, t.annotate_ms]) {
                    v.push(ms);
                }
            }
            Ok::<_, io::Error>(())
        })?;
    }
    let wall = start.elapsed().as_secs_f64();
    let mut out = io::stdout().lock();
    writeln!(out, "{:<10} {:>10} {:>10} {:>10}", "stage", "mean ms", "median ms", "max ms")?;
    for (name, values) in ["decode", "detect", "classify", "annotate"].iter().zip(per_stage.iter_mut()) {
        if values.is_empty() {
            continue;
        }
        values.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        writeln!(
            out,
            "{name:<10} {mean:>10.3} {:>10.3} {:>10.3}",
            values[values.len() / 2],
            values[values.len() - 1]
        )?;
    }
    writeln!(
        out,
        "{processed} frames in {wall:.3} s ({:.1} frames/s, {} workers)",
        processed as f64 / wall,
        config.workers
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let cfg = match &cli.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        match &cli.command {
            Command::Run(args) => run(&cfg, args),
            Command::Train(args) => train_cmd(&cfg, args),
            Command::SelectModel(args) => select_cmd(&cfg, args),
            Command::Bench(args) => bench_cmd(&cfg, args),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

//! Command-line entry point.

mod config;

pub use config::{ConfigError, PathsConfig, RunConfig, OUTPUT_DIR_ENV};

use clap::{Parser, Subcommand};
use log::{info, warn};
use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::agent::{Checkpoint, EpisodeRecord, Trainer};
use crate::dataset::{
    generate_synthetic, load_annotations, prepare_canvas, save_dataset, split_dataset, AnnotatedImage, CANVAS_PX,
};
use crate::encoder::build_extractor;
use crate::env::BoxF;
use crate::inference::{
    detect_all, evaluate, save_annotated, step_statistics, Detection, ImageDetections, InferenceConfig,
};
use crate::raster::Raster;

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const STEP_STATS_FILE: &str = "step_stats.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";

#[derive(Debug, Parser)]
#[command(name = "active-detect", version, about = "Train and run a frame-moving Q-learning object detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize an annotated image set to the canvas and split it.
    Ingest {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Share of images kept for training.
        #[arg(long, default_value_t = 0.9)]
        train_ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic corpus and split it.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 0.9)]
        train_ratio: f64,
    },
    /// Train a Q-network; checkpoints after every image.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Training annotations; overrides `paths.dataset`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Detect every target in one image.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_targets: Option<usize>,
    },
    /// Score a model on an annotated test set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Annotation file, or a directory holding one.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Step-count statistics from a detections file written by `eval`.
    Stats {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure categories mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn rt<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Ingest { annotations, out, train_ratio, seed } => ingest(&annotations, out, train_ratio, seed),
        Command::Synth { config, out, seed, count, train_ratio } => synth(config, out, seed, count, train_ratio),
        Command::Train { config, seed, data, out, resume } => train(config, seed, data, out, resume),
        Command::Detect { model, image, config, out, max_targets } => detect(&model, &image, config, out, max_targets),
        Command::Eval { model, data, config, out } => eval(&model, data, config, out),
        Command::Stats { detections, iou_threshold, out } => stats(&detections, iou_threshold, out),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

/// Flag, then environment, then config, then `./out`.
fn output_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = flag
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.paths.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| rt(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn check_ratio(r: f64) -> Result<(), CliError> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--train-ratio must lie in (0, 1), got {r}")))
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(rt)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| rt(format!("cannot write {}: {e}", path.display())))
}

fn write_split(out: &Path, images: Vec<AnnotatedImage>, ratio: f64, seed: u64) -> Result<(), CliError> {
    let split = split_dataset(images, ratio, seed).map_err(rt)?;
    let train = save_dataset(&out.join("train"), ANNOTATIONS_FILE, &split.train).map_err(rt)?;
    let test = save_dataset(&out.join("test"), ANNOTATIONS_FILE, &split.test).map_err(rt)?;
    info!("{} training images -> {}", split.train.len(), train.display());
    info!("{} test images -> {}", split.test.len(), test.display());
    Ok(())
}

fn ingest(annotations: &Path, out: Option<PathBuf>, ratio: f64, seed: u64) -> Result<(), CliError> {
    check_ratio(ratio)?;
    if !annotations.is_file() {
        return Err(CliError::Usage(format!("{} does not exist", annotations.display())));
    }
    let out = output_dir(out, &RunConfig::default())?;
    let images = load_annotations(annotations).map_err(rt)?;
    let prepared = images.iter().map(prepare_canvas).collect::<Result<Vec<_>, _>>().map_err(rt)?;
    write_split(&out, prepared, ratio, seed)
}

fn synth(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    count: Option<usize>,
    ratio: f64,
) -> Result<(), CliError> {
    check_ratio(ratio)?;
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg.synthetic.rng_seed = s;
    }
    if let Some(c) = count {
        cfg.synthetic.count = c;
    }
    cfg.validate()?;
    let out = output_dir(out, &cfg)?;
    fs::write(out.join(EFFECTIVE_CONFIG_FILE), cfg.to_toml()).map_err(rt)?;
    let images = generate_synthetic(&cfg.synthetic).map_err(rt)?;
    write_split(&out, images, ratio, cfg.synthetic.rng_seed)
}

fn load_prepared(path: &Path) -> Result<Vec<AnnotatedImage>, CliError> {
    let path = if path.is_dir() { path.join(ANNOTATIONS_FILE) } else { path.to_path_buf() };
    if !path.is_file() {
        return Err(CliError::Usage(format!("{} does not exist", path.display())));
    }
    let images = load_annotations(&path).map_err(rt)?;
    images.iter().map(prepare_canvas).collect::<Result<_, _>>().map_err(rt)
}

fn train(
    config: Option<PathBuf>,
    seed: Option<u64>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg.train.rng_seed = s;
    }
    if let Some(d) = data {
        cfg.paths.dataset = Some(if d.is_dir() { d.join(ANNOTATIONS_FILE) } else { d });
    }
    let ck = match &resume {
        Some(p) => {
            let ck = Checkpoint::load(p).map_err(rt)?;
            cfg.train = ck.train.clone();
            cfg.reward = ck.reward;
            cfg.extractor = ck.extractor.clone();
            Some(ck)
        }
        None => None,
    };
    cfg.validate()?;
    let out = output_dir(out, &cfg)?;
    fs::write(out.join(EFFECTIVE_CONFIG_FILE), cfg.to_toml()).map_err(rt)?;

    let dataset = match &cfg.paths.dataset {
        Some(p) => load_prepared(p)?,
        None => {
            info!("no dataset configured; generating {} synthetic images", cfg.synthetic.count);
            generate_synthetic(&cfg.synthetic).map_err(rt)?
        }
    };
    if dataset.is_empty() {
        return Err(rt("training set is empty"));
    }
    let fe = build_extractor(&cfg.extractor).map_err(rt)?;
    let mut trainer = match &ck {
        Some(ck) => Trainer::from_checkpoint(ck, fe.as_ref()).map_err(rt)?,
        None => Trainer::new(cfg.train.clone(), cfg.reward, fe.as_ref()).map_err(rt)?,
    };
    let start = trainer.images_completed();
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = open_log(&log_path, start)?;
    let ck_path = out.join(CHECKPOINT_FILE);
    info!(
        "training {} on {} images from image {start} ({} parameters)",
        trainer.policy().architecture_id(),
        dataset.len(),
        trainer.policy().num_params()
    );
    for (i, img) in dataset.iter().enumerate().skip(start) {
        let recs = trainer.train_image(i, img).map_err(rt)?;
        for r in &recs {
            serde_json::to_writer(&mut log, r).map_err(rt)?;
            log.write_all(b"\n").map_err(rt)?;
        }
        log.flush().map_err(rt)?;
        trainer.checkpoint(&cfg.extractor).save(&ck_path).map_err(rt)?;
        let last = recs.last().expect("at least one round");
        info!(
            "image {}/{} `{}`: last round {:?} after {} steps, IoU {:.3}",
            i + 1,
            dataset.len(),
            img.name,
            last.end,
            last.steps,
            last.final_iou
        );
    }
    if start >= dataset.len() {
        warn!("checkpoint already covers all {} images", dataset.len());
        trainer.checkpoint(&cfg.extractor).save(&ck_path).map_err(rt)?;
    }
    info!("checkpoint written to {}", ck_path.display());
    Ok(())
}

/// Opens the training log, keeping only records of images before `start`.
fn open_log(path: &Path, start: usize) -> Result<BufWriter<fs::File>, CliError> {
    let mut kept = Vec::new();
    if start > 0 && path.is_file() {
        let f = fs::File::open(path).map_err(rt)?;
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(rt)?;
            let rec: EpisodeRecord = serde_json::from_str(&line).map_err(rt)?;
            if rec.image_index < start {
                kept.push(line);
            }
        }
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(rt)?);
    for line in kept {
        writeln!(w, "{line}").map_err(rt)?;
    }
    Ok(w)
}

fn inference_config(config: Option<&Path>, ck: &Checkpoint) -> Result<InferenceConfig, CliError> {
    let cfg = load_config(config)?;
    cfg.inference.validate().map_err(|e| CliError::Config(ConfigError::Invalid(e)))?;
    let mut inf = cfg.inference;
    if config.is_none() {
        inf.max_steps = ck.train.max_steps;
    }
    Ok(inf)
}

/// Detection result for one image, with boxes in canvas and source pixels.
#[derive(Debug, serde::Serialize)]
struct DetectRecord<'a> {
    image: &'a Path,
    width: usize,
    height: usize,
    detections: &'a [Detection],
    source_boxes: Vec<BoxF>,
}

fn detect(
    model: &Path,
    image: &Path,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    max_targets: Option<usize>,
) -> Result<(), CliError> {
    let ck = Checkpoint::load(model).map_err(rt)?;
    let mut inf = inference_config(config.as_deref(), &ck)?;
    if let Some(m) = max_targets {
        if m == 0 {
            return Err(CliError::Usage("--max-targets must be positive".into()));
        }
        inf.max_targets = m;
    }
    let src = image::open(image).map_err(|e| rt(format!("cannot read {}: {e}", image.display())))?.to_rgb8();
    let pixels = Raster::from_rgb8(&src);
    let (w, h) = (pixels.width(), pixels.height());
    let name = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let canvas = prepare_canvas(&AnnotatedImage { name: name.clone(), pixels: pixels.clone(), targets: vec![] })
        .map_err(rt)?;
    let q = ck.policy().map_err(rt)?;
    let fe = build_extractor(&ck.extractor).map_err(rt)?;
    let dets = detect_all(&q, fe.as_ref(), &canvas, &inf, &ck.reward).map_err(rt)?;
    let scale = (w as f64 / CANVAS_PX as f64, h as f64 / CANVAS_PX as f64);
    let source_boxes: Vec<BoxF> =
        dets.iter().filter(|d| d.selected()).map(|d| d.bbox.scaled(scale.0, scale.1)).collect();
    let out = output_dir(out, &load_config(config.as_deref())?)?;
    let png = out.join(format!("{name}_detected.png"));
    save_annotated(&pixels, &source_boxes, &png).map_err(rt)?;
    let rec = DetectRecord { image, width: w, height: h, detections: &dets, source_boxes };
    write_json(&out.join(format!("{name}_detections.json")), &rec)?;
    info!("{} target(s) selected; wrote {}", rec.source_boxes.len(), png.display());
    Ok(())
}

fn eval(model: &Path, data: Option<PathBuf>, config: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let ck = Checkpoint::load(model).map_err(rt)?;
    let cfg = load_config(config.as_deref())?;
    let inf = inference_config(config.as_deref(), &ck)?;
    let data = data
        .or(cfg.paths.test_dataset.clone())
        .ok_or_else(|| CliError::Usage("no test data: pass --data or set paths.test_dataset".into()))?;
    let testset = load_prepared(&data)?;
    let q = ck.policy().map_err(rt)?;
    let fe = build_extractor(&ck.extractor).map_err(rt)?;
    let ev = evaluate(&q, fe.as_ref(), &testset, &inf, &ck.reward).map_err(rt)?;
    let out = output_dir(out, &cfg)?;
    write_json(&out.join(EVAL_REPORT_FILE), &ev.report)?;
    write_json(&out.join(STEP_STATS_FILE), &ev.step_stats)?;
    write_detections(&out.join(DETECTIONS_FILE), &ev.images)?;
    info!(
        "tp {} fp {} fn {}; precision {:?} recall {:?}; trigger rate {:.3}",
        ev.report.tp, ev.report.fp, ev.report.fn_, ev.report.precision, ev.report.recall, ev.step_stats.trigger_rate
    );
    Ok(())
}

fn write_detections(path: &Path, images: &[ImageDetections]) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(rt)?);
    for d in images {
        serde_json::to_writer(&mut w, d).map_err(rt)?;
        w.write_all(b"\n").map_err(rt)?;
    }
    w.flush().map_err(rt)
}

/// Step statistics over the first rollout of each image in a detections
/// file, matching what `eval` reports.
fn stats(detections: &Path, threshold: f64, out: Option<PathBuf>) -> Result<(), CliError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CliError::Usage(format!("--iou-threshold must lie in (0, 1], got {threshold}")));
    }
    let text = fs::read_to_string(detections)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", detections.display())))?;
    let mut first = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: ImageDetections =
            serde_json::from_str(line).map_err(|e| rt(format!("{} line {}: {e}", detections.display(), i + 1)))?;
        if let Some(d) = rec.detections.into_iter().next() {
            first.push(d);
        }
    }
    let s = step_statistics(&first, threshold);
    let out = output_dir(out, &RunConfig::default())?;
    write_json(&out.join(STEP_STATS_FILE), &s)?;
    println!("{}", serde_json::to_string_pretty(&s).map_err(rt)?);
    Ok(())
}

//! The `patchpipe` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::config::{load_config, AssayConfig};
use crate::crop::CropRegion;
use crate::embedding::{fit_pca_model, fit_triplet_model, ModelBundle, ModelKind};
use crate::error::{Error, Result};
use crate::evaluation::{build_report, evaluate_split, EvalReport, EvalRow};
use crate::flowers::{detect_flowers, flowers_from_config, parse_flowers, write_flowers};
use crate::formats::*;
use crate::model::{Flower, ImageBuffer};
use crate::pipeline::{bench, open_sink, parse_stats_csv, run_pipeline, PipelineOptions, QueueMode, END_TO_END};
use crate::splits::{closed_split, filter_dataset, load_split, open_split, split_files, SplitMode};
use crate::synth::{generate_world, WorldConfig};
use crate::tracking::run_tracker;
use crate::visits::{detect_visits, evaluate_events};

#[derive(Parser, Debug)]
#[command(name = "patchpipe", version, about = "Flower-patch visit detection and paint-mark re-identification")]
pub struct Cli {
    /// JSON config of dotted keys (for `synth`, a world config).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More logging (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic flower-patch world.
    Synth(SynthArgs),
    /// Find flowers in a reference frame.
    DetectFlowers(DetectFlowersArgs),
    /// Link per-frame poses into tracks.
    Track(TrackArgs),
    /// Extract drinking visits from tracks.
    DetectVisits(DetectVisitsArgs),
    /// Score predicted visits against annotations.
    EvalVisits(EvalVisitsArgs),
    /// Export aligned crops of a synthetic world.
    Crops(CropsArgs),
    /// Split a dataset index into closed- or open-set subsets.
    Split(SplitArgs),
    /// Fit a PCA or triplet embedding model.
    Train(TrainArgs),
    /// Embed crops with a fitted model.
    Embed(EmbedArgs),
    /// CMC and kNN evaluation of embeddings.
    Eval(EvalArgs),
    /// Streaming tracking, visit detection and export.
    Run(RunArgs),
    /// Check pipeline statistics against a frame-rate budget.
    BenchReport(BenchReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write every Nth frame as PPM; 0 writes none.
    #[arg(long, default_value_t = 50)]
    pub frame_stride: u64,
}

#[derive(Args, Debug)]
pub struct DetectFlowersArgs {
    /// Reference frame (PPM).
    #[arg(long)]
    pub image: PathBuf,
    /// Flower JSON output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    /// Pose stream (NDJSON).
    #[arg(long)]
    pub poses: PathBuf,
    /// Track NDJSON output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DetectVisitsArgs {
    /// Track stream (NDJSON).
    #[arg(long)]
    pub tracks: PathBuf,
    /// Flower JSON file, `config` (flower.manual) or `auto` (needs --reference).
    #[arg(long)]
    pub flowers: String,
    /// Reference frame for `--flowers auto`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Event NDJSON output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalVisitsArgs {
    /// Predicted events (NDJSON).
    #[arg(long)]
    pub predicted: PathBuf,
    /// Annotated events (NDJSON).
    #[arg(long)]
    pub annotated: PathBuf,
    /// Metrics JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Variant {
    Full,
    Abdomen,
    Thorax,
    Unaligned,
}

impl From<Variant> for CropRegion {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Full => CropRegion::Full,
            Variant::Abdomen => CropRegion::Abdomen,
            Variant::Thorax => CropRegion::Thorax,
            Variant::Unaligned => CropRegion::Unaligned,
        }
    }
}

#[derive(Args, Debug)]
pub struct CropsArgs {
    /// World config written by `synth`.
    #[arg(long)]
    pub world: PathBuf,
    /// Crop variants to export.
    #[arg(long, value_delimiter = ',', default_values = ["full", "abdomen", "thorax", "unaligned"])]
    pub variants: Vec<Variant>,
    /// Output directory: `index.csv` plus one folder of PPMs per variant.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum Setting {
    Closed,
    Open,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Dataset index CSV.
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Setting,
    /// Closed mode: fraction of each id's tracks used for training.
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Open mode: fraction of ids used for training.
    #[arg(long)]
    pub id_frac: Option<f64>,
    /// Open mode: fraction of each test id's tracks used as reference.
    #[arg(long)]
    pub ref_frac: Option<f64>,
    /// Keep tracks and ids that fail the size filter.
    #[arg(long)]
    pub no_filter: bool,
    /// Output directory for the subset CSVs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum ModelFeatures {
    Pca,
    Triplet,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Crop directory written by `crops`.
    #[arg(long)]
    pub crops: PathBuf,
    /// Split directory written by `split`.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub input_variant: Variant,
    #[arg(long, value_enum, default_value = "triplet")]
    pub features: ModelFeatures,
    /// Model JSON output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    /// Model JSON written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Crop directory written by `crops`.
    #[arg(long)]
    pub crops: PathBuf,
    /// Index of images to embed; defaults to the crop directory's index.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Embeddings CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum EvalFeatures {
    Pca,
    Triplet,
    External,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub setting: Setting,
    #[arg(long, value_enum)]
    pub features: EvalFeatures,
    #[arg(long, value_enum, default_value = "full")]
    pub variant: Variant,
    /// Galleries to sample; defaults to eval.galleries.
    #[arg(long)]
    pub galleries: Option<usize>,
    /// Split directory written by `split`.
    #[arg(long)]
    pub split: PathBuf,
    /// Embeddings CSV.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Model JSON, embedded on the fly from --crops when no embeddings are given.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub crops: Option<PathBuf>,
    /// Report CSV; an existing report is updated in place.
    #[arg(long, default_value = "report.csv")]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Pose stream (NDJSON); `-` reads stdin.
    #[arg(long)]
    pub poses: PathBuf,
    /// Flower JSON file, `config` (flower.manual) or `auto` (needs --reference).
    #[arg(long)]
    pub flowers: String,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// `stdout`, `file:PATH` or `tcp:HOST:PORT`.
    #[arg(long, default_value = "stdout")]
    pub sink: String,
    /// Replay rate in frames per second; as fast as possible when absent.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Capacity of each inter-stage queue.
    #[arg(long, default_value_t = 64)]
    pub queue: usize,
    /// Drop frames when the first queue is full instead of waiting.
    #[arg(long)]
    pub drop: bool,
    /// Print a pass/fail summary against --budget-fps.
    #[arg(long)]
    pub bench: bool,
    #[arg(long, default_value_t = 20.0)]
    pub budget_fps: f64,
    /// Stage statistics CSV output.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchReportArgs {
    /// Statistics CSV written by `run --stats`.
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    pub budget_fps: f64,
    /// Summary CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 success, 1 usage error, 2 data error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn assay_config(cli: &Cli) -> Result<AssayConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => AssayConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.fit.train.seed = cfg.seed;
    Ok(cfg)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn resolve_flowers(spec: &str, reference: Option<&Path>, cfg: &AssayConfig) -> CliResult<Vec<Flower>> {
    match spec {
        "config" => match &cfg.manual_flowers {
            Some(m) => Ok(flowers_from_config(m)?),
            None => usage("--flowers config needs flower.manual in the config file"),
        },
        "auto" => match reference {
            Some(r) => Ok(detect_flowers(&read_ppm(r)?, &cfg.flower)?),
            None => usage("--flowers auto needs --reference"),
        },
        path => Ok(parse_flowers(&read_text(Path::new(path))?)?),
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::DetectFlowers(a) => {
            let cfg = assay_config(cli)?;
            let flowers = detect_flowers(&read_ppm(&a.image)?, &cfg.flower)?;
            log::info!("{} flowers", flowers.len());
            Ok(write_out(a.out.as_deref(), &write_flowers(&flowers))?)
        }
        Command::Track(a) => {
            let cfg = assay_config(cli)?;
            let file = fs::File::open(&a.poses).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", a.poses.display()))))?;
            let frames = PoseStreamReader::new(BufReader::new(file)).collect::<Result<Vec<_>>>()?;
            let tracks = run_tracker(frames.iter(), cfg.track)?;
            log::info!("{} tracks from {} frames", tracks.len(), frames.len());
            Ok(write_out(a.out.as_deref(), &write_tracks(&tracks))?)
        }
        Command::DetectVisits(a) => {
            let cfg = assay_config(cli)?;
            let flowers = resolve_flowers(&a.flowers, a.reference.as_deref(), &cfg)?;
            let tracks = parse_tracks(&read_text(&a.tracks)?)?;
            let mut events = detect_visits(&tracks, &flowers, &cfg.visit);
            sort_events(&mut events);
            log::info!("{} visits", events.len());
            Ok(write_out(a.out.as_deref(), &write_event_stream(&events))?)
        }
        Command::EvalVisits(a) => {
            let cfg = assay_config(cli)?;
            let predicted = parse_event_stream(&read_text(&a.predicted)?)?;
            let annotated = parse_event_stream(&read_text(&a.annotated)?)?;
            let m = evaluate_events(&predicted, &annotated, cfg.visit.overlap_min);
            println!(
                "annotated {} predicted {} recall {:.3} duplication {:.3}",
                m.n_annotated, m.n_predicted, m.recall, m.duplication_rate
            );
            if let Some(out) = &a.out {
                let v = serde_json::json!({
                    "n_annotated": m.n_annotated,
                    "n_predicted": m.n_predicted,
                    "recall": m.recall,
                    "duplication_rate": m.duplication_rate,
                });
                write_out(Some(out), &(serde_json::to_string_pretty(&v).map_err(Error::from)? + "\n"))?;
            }
            Ok(())
        }
        Command::Crops(a) => crops(cli, a),
        Command::Split(a) => split(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Embed(a) => {
            let model = ModelBundle::load(&a.model)?;
            let index = a.index.clone().unwrap_or_else(|| a.crops.join("index.csv"));
            let records = parse_dataset_index(&read_text(&index)?)?;
            let images = load_images(&a.crops, model.variant, &records)?;
            let table = model.embed_all(&images)?;
            Ok(write_out(Some(&a.out), &write_embeddings(&table)?)?)
        }
        Command::Eval(a) => eval(cli, a),
        Command::Run(a) => run(cli, a),
        Command::BenchReport(a) => {
            if !(a.budget_fps > 0.0) {
                return usage("--budget-fps must be positive");
            }
            let rows = parse_stats_csv(&read_text(&a.stats)?)?;
            let e2e = rows
                .iter()
                .find(|r| r.stage == END_TO_END)
                .ok_or_else(|| Error::invalid(format!("{}: no {END_TO_END} row", a.stats.display())))?;
            let summary = bench(e2e, a.budget_fps);
            println!("{}", summary.text());
            if let Some(out) = &a.out {
                write_out(Some(out), &summary.csv())?;
            }
            Ok(())
        }
    }
}

fn synth(cli: &Cli, a: &SynthArgs) -> CliResult<()> {
    let mut world_cfg = match &cli.config {
        Some(p) => serde_json::from_str::<WorldConfig>(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => WorldConfig::default(),
    };
    if let Some(s) = cli.seed {
        world_cfg.seed = s;
    }
    let world = generate_world(&world_cfg)?;
    let out = &a.out;
    fs::create_dir_all(out)?;
    fs::write(out.join("world.json"), serde_json::to_string_pretty(&world_cfg).map_err(Error::from)? + "\n")?;
    fs::write(out.join("poses.ndjson"), write_pose_stream(&world.pose_stream()))?;
    fs::write(out.join("tracks_gt.ndjson"), write_tracks(&world.ground_truth_tracks()))?;
    let mut visits = world.ground_truth_visits();
    sort_events(&mut visits);
    fs::write(out.join("visits_gt.ndjson"), write_event_stream(&visits))?;
    fs::write(out.join("index.csv"), write_dataset_index(&world.dataset_index())?)?;
    fs::write(out.join("flowers_gt.json"), write_flowers(&world.flowers))?;
    write_ppm_file(out.join("reference.ppm"), &world.reference_frame())?;
    if a.frame_stride > 0 {
        let dir = out.join("frames");
        fs::create_dir_all(&dir)?;
        let frames: Vec<u64> = (0..world.n_frames).step_by(a.frame_stride as usize).collect();
        frames.par_iter().try_for_each(|&f| write_ppm_file(dir.join(format!("f{f:06}.ppm")), &world.render_frame(f)))?;
    }
    log::info!("{} frames, {} passes, {} bees", world.n_frames, world.passes.len(), world.bees.len());
    Ok(())
}

fn crops(cli: &Cli, a: &CropsArgs) -> CliResult<()> {
    let cfg = assay_config(cli)?;
    let world_cfg: WorldConfig =
        serde_json::from_str(&read_text(&a.world)?).map_err(|e| Error::Config(format!("{}: {e}", a.world.display())))?;
    let world = generate_world(&world_cfg)?;
    let mut variants: Vec<CropRegion> = a.variants.iter().map(|&v| v.into()).collect();
    variants.dedup();
    let ex = world.export_crops(&variants, &cfg.crop)?;
    for (v, imgs) in variants.iter().zip(&ex.images) {
        let dir = a.out.join(v.name());
        fs::create_dir_all(&dir)?;
        ex.records.par_iter().zip(imgs).try_for_each(|(r, img)| write_ppm_file(dir.join(&r.image_ref), img))?;
    }
    fs::write(a.out.join("index.csv"), write_dataset_index(&ex.records)?)?;
    if ex.failures > 0 {
        eprintln!("{} crops failed alignment and were skipped", ex.failures);
    }
    log::info!("{} crops per variant", ex.records.len());
    Ok(())
}

fn split(cli: &Cli, a: &SplitArgs) -> CliResult<()> {
    let cfg = assay_config(cli)?;
    let mut records = parse_dataset_index(&read_text(&a.index)?)?;
    if !a.no_filter {
        records = filter_dataset(&records);
    }
    let frac = |v: Option<f64>, d: f64, name: &str| -> CliResult<f64> {
        let x = v.unwrap_or(d);
        if x > 0.0 && x < 1.0 {
            Ok(x)
        } else {
            usage(format!("--{name} must lie in (0, 1), got {x}"))
        }
    };
    let spec = match a.mode {
        Setting::Closed => closed_split(&records, frac(a.train_frac, cfg.split.train_frac, "train-frac")?, cfg.seed)?,
        Setting::Open => open_split(
            &records,
            frac(a.id_frac, cfg.split.id_frac, "id-frac")?,
            frac(a.ref_frac, cfg.split.ref_frac, "ref-frac")?,
            cfg.seed,
        )?,
    };
    fs::create_dir_all(&a.out)?;
    for (name, text) in split_files(&spec, &records)? {
        fs::write(a.out.join(format!("{name}.csv")), text)?;
    }
    log::info!("train {} test {}", spec.train.len(), spec.test.len());
    Ok(())
}

fn load_images(crops: &Path, variant: CropRegion, records: &[DatasetRecord]) -> Result<Vec<(String, ImageBuffer)>> {
    let dir = crops.join(variant.name());
    records.par_iter().map(|r| Ok((r.image_ref.clone(), read_ppm(dir.join(&r.image_ref))?))).collect()
}

fn train(cli: &Cli, a: &TrainArgs) -> CliResult<()> {
    let cfg = assay_config(cli)?;
    let (spec, records) = load_split(&a.split, cfg.seed)?;
    let train: Vec<DatasetRecord> = records.into_iter().filter(|r| spec.train.contains(&r.image_ref)).collect();
    let variant: CropRegion = a.input_variant.into();
    let images = load_images(&a.crops, variant, &train)?;
    let pairs: Vec<(&DatasetRecord, &ImageBuffer)> = train.iter().zip(images.iter().map(|(_, i)| i)).collect();
    let model = match a.features {
        ModelFeatures::Pca => fit_pca_model(&pairs, variant, &cfg.fit)?,
        ModelFeatures::Triplet => fit_triplet_model(&pairs, variant, &cfg.fit)?,
    };
    if let Some(log) = &model.train_log {
        log::info!("best epoch {} loss {:.4}", log.best_epoch, log.best_loss);
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    model.save(&a.out)?;
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> CliResult<()> {
    let cfg = assay_config(cli)?;
    let (spec, records) = load_split(&a.split, cfg.seed)?;
    let want = match a.setting {
        Setting::Closed => SplitMode::Closed,
        Setting::Open => SplitMode::Open,
    };
    if spec.mode != want {
        return Err(Error::invalid(format!("{} holds a {:?} split, not {:?}", a.split.display(), spec.mode, want)).into());
    }
    let variant: CropRegion = a.variant.into();
    let table = match (&a.embeddings, &a.model, &a.crops) {
        (Some(e), _, _) => read_embeddings(&read_text(e)?)?,
        (None, Some(m), Some(c)) => {
            let model = ModelBundle::load(m)?;
            let expected = match a.features {
                EvalFeatures::Pca => Some(ModelKind::Pca),
                EvalFeatures::Triplet => Some(ModelKind::Triplet),
                EvalFeatures::External => None,
            };
            if expected != Some(model.kind) || model.variant != variant {
                return usage(format!("model is {:?} on {} crops", model.kind, model.variant.name()));
            }
            let images = load_images(c, variant, &records)?;
            model.embed_all(&images)?
        }
        _ => return usage("give --embeddings, or --model with --crops"),
    };
    let galleries = a.galleries.unwrap_or(cfg.eval.galleries);
    if galleries == 0 {
        return usage("--galleries must be positive");
    }
    let (scores, repeated) = evaluate_split(&spec, &records, &table, galleries, cfg.eval.negatives, cfg.seed)?;
    if repeated {
        eprintln!("warning: fewer than {} negative ids; negatives were repeated", cfg.eval.negatives);
    }
    let features = match a.features {
        EvalFeatures::Pca => "pca",
        EvalFeatures::Triplet => "triplet",
        EvalFeatures::External => "external",
    };
    let mut report = if a.report.exists() { EvalReport::parse_csv(&read_text(&a.report)?)? } else { build_report(Vec::new()) };
    let mut rows: BTreeMap<(String, String), EvalRow> =
        report.rows.drain(..).map(|r| ((r.features.clone(), r.input.clone()), r)).collect();
    let row = rows.entry((features.to_string(), variant.name().to_string())).or_insert_with(|| EvalRow {
        features: features.to_string(),
        input: variant.name().to_string(),
        ..Default::default()
    });
    match a.setting {
        Setting::Closed => row.closed = Some(scores),
        Setting::Open => row.open = Some(scores),
    }
    let report = build_report(rows.into_values().collect());
    print!("{}", report.render_table());
    write_out(Some(&a.report), &report.to_csv()?)?;
    Ok(())
}

fn run(cli: &Cli, a: &RunArgs) -> CliResult<()> {
    let cfg = assay_config(cli)?;
    if a.queue == 0 {
        return usage("--queue must be at least 1");
    }
    if let Some(f) = a.fps {
        if !(f > 0.0 && f.is_finite()) {
            return usage("--fps must be positive");
        }
    }
    if !(a.budget_fps > 0.0) {
        return usage("--budget-fps must be positive");
    }
    let flowers = resolve_flowers(&a.flowers, a.reference.as_deref(), &cfg)?;
    let mut sink = match open_sink(&a.sink) {
        Ok(s) => s,
        Err(Error::Config(m)) => return usage(m),
        Err(e) => return Err(e.into()),
    };
    let opts = PipelineOptions {
        queue_capacity: a.queue,
        fps: a.fps,
        mode: if a.drop { QueueMode::Drop } else { QueueMode::Block },
        threads: None,
        tracker: cfg.track,
        visit: cfg.visit,
    };
    let result = if a.poses.as_os_str() == "-" {
        run_pipeline(PoseStreamReader::new(BufReader::new(std::io::stdin())), &flowers, sink.as_mut(), &opts)
    } else {
        let file = fs::File::open(&a.poses).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", a.poses.display()))))?;
        run_pipeline(PoseStreamReader::new(BufReader::new(file)), &flowers, sink.as_mut(), &opts)
    };
    let (report, error) = match result {
        Ok(r) => (r, None),
        Err(e) => (e.partial, Some(e.error)),
    };
    if let Some(path) = &a.stats {
        write_out(Some(path), &report.to_csv())?;
    }
    if a.bench {
        eprint!("{}", report.to_csv());
        eprintln!("{}", bench(&report.end_to_end, a.budget_fps).text());
    }
    log::info!("{} frames, {} events, {} dropped", report.frames, report.events, report.dropped);
    match error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

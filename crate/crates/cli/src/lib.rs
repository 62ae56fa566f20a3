//! The `mesocyclone` command line.
//!
//! Exit codes: 0 on success, 1 when arguments fail validation (nothing is
//! written), 2 when the work itself fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::json;

use mesocyclone_core::cyclone::{detect_candidates, slp_depression, DetectParams, SlpField};
use mesocyclone_core::grid::{block_average, read_pgrid, write_pgrid};
use mesocyclone_core::interpret::{
    emit_overlay, gradcam, integrated_gradients, ModelScorer, OverlayStyle, DEFAULT_IG_STEPS, POSITIVE_CLASS,
};
use mesocyclone_core::nn::{Activation, Checkpoint, GlobalPool, ModelConfig, Resolution, Tensor4};
use mesocyclone_core::sampler::{
    group_sets, read_manifest, split_by_sets, validate_samples, ImbalanceStrategy, Partition, Sample, Split,
    DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC,
};
use mesocyclone_core::sar::{compose_from_db, PolChannels};
use mesocyclone_core::synth::{build_synth_dataset, SynthDatasetConfig};
use mesocyclone_core::trainer::{
    evaluate, format_study_table, history_csv, hyperparameter_sweep, prepare_eval, resolution_study, study_csv,
    train, DiskStore, Downsampled, ImageStore, SearchSpace, StudyArm, TrainConfig, DEFAULT_BATCH_SIZE, FINAL_EPOCHS,
    SWEEP_EPOCHS,
};
use mesocyclone_core::{set_worker_threads, Error, RasterGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mesocyclone", version, about = "Mesocyclone recognition in SAR imagery")]
pub struct Cli {
    /// Worker threads for augmentation and evaluation [default: available cores].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find candidate low-pressure areas in a sea-level-pressure grid.
    Detect(DetectArgs),
    /// Percentile-scale dB channels and compose an RGB raster.
    Compose(ComposeArgs),
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the classifier.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print its confusion matrix.
    Eval(EvalArgs),
    /// Compare F1 across downsampling factors and seeds.
    ResolutionStudy(StudyArgs),
    /// Random hyperparameter search.
    Sweep(SweepArgs),
    /// Attribution map for one sample, rendered as a PNG overlay.
    Explain(ExplainArgs),
    /// SLP depression of a raster: image mean minus the centre 100x100 mean.
    Depression(DepressionArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Assign whole repeat-pass sets to train, validation and test.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// SLP field as a .pgrid with geodetic metadata (Pa).
    #[arg(long)]
    pub slp: PathBuf,
    /// Minimum depression below the low-pass field.
    #[arg(long, default_value_t = 230.0)]
    pub threshold_pa: f64,
    /// Largest accepted equivalent radius.
    #[arg(long, default_value_t = 200.0)]
    pub max_radius_km: f64,
    /// Side of the box low-pass window in grid cells.
    #[arg(long, default_value_t = 9)]
    pub window: usize,
    /// Also write `aois.jsonl` into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Co-polarised channel in dB.
    #[arg(long)]
    pub co: PathBuf,
    /// Cross-polarised channel in dB (dual-polarisation data).
    #[arg(long)]
    pub cross: Option<PathBuf>,
    /// Output .pgrid; a PNG preview is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Block-average factor applied before scaling.
    #[arg(long, default_value_t = 1)]
    pub multilook: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of repeat-pass sets.
    #[arg(long, default_value_t = 50)]
    pub sets: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 128)]
    pub side: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for `partitions.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TEST_FRAC)]
    pub test_frac: f64,
    #[arg(long, default_value_t = DEFAULT_VAL_FRAC)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Architecture preset: 500m (7 blocks), 1km (5 blocks) or 2km (4 blocks).
    #[arg(long, default_value = "500m", value_parser = parse_resolution)]
    pub resolution: Resolution,
    /// Input side [default: preset input, capped at the image side].
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// relu or selu.
    #[arg(long, value_parser = parse_serde::<Activation>)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub entry_filters: Option<usize>,
    /// Entry convolution kernel size.
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Filters of the first separable convolution (doubling per block).
    #[arg(long)]
    pub sep_filters: Option<usize>,
    /// avg, max or flat.
    #[arg(long, value_parser = parse_serde::<GlobalPool>)]
    pub pool: Option<GlobalPool>,
    #[arg(long)]
    pub dense_layers: Option<usize>,
    #[arg(long)]
    pub dense_units: Option<usize>,
    #[arg(long)]
    pub no_batchnorm: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Partition file written by `dataset split`.
    #[arg(long)]
    pub split: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    /// class-weighting, oversampling or rejection.
    #[arg(long, default_value = "oversampling", value_parser = parse_serde::<ImbalanceStrategy>)]
    pub strategy: ImbalanceStrategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub aug_seed: u64,
    /// Train on centre crops without augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = FINAL_EPOCHS)]
    pub epochs: usize,
    /// Bilinear downsampling factor (1, 2 or 4) applied to every image.
    #[arg(long, default_value_t = 1)]
    pub downsample: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PartitionArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Partition file; without it every manifest sample is evaluated.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub partition: PartitionArg,
    #[arg(long, default_value_t = 1)]
    pub downsample: usize,
    /// Also write `eval.json` into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = FINAL_EPOCHS)]
    pub epochs: usize,
    /// Downsampling factors, one table row each.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub factors: Vec<usize>,
    /// Runs per factor; run i uses seed `--seed + i`.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = SWEEP_EPOCHS)]
    pub epochs: usize,
    /// Number of sampled configurations.
    #[arg(long, default_value_t = 20)]
    pub budget: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ig,
    Gradcam,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Sample id from the manifest.
    #[arg(long)]
    pub sample: String,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output PNG; the attribution raster goes next to it as .pgrid.
    #[arg(long)]
    pub out: PathBuf,
    /// Integration steps for integrated gradients.
    #[arg(long, default_value_t = DEFAULT_IG_STEPS)]
    pub steps: usize,
    /// Grad-CAM layer (`block0`, `block1`, ... or `last`).
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, default_value_t = POSITIVE_CLASS)]
    pub target: usize,
    #[arg(long, default_value_t = 1)]
    pub downsample: usize,
}

#[derive(Debug, Args)]
pub struct DepressionArgs {
    /// SLP raster (Pa), at least 100x100.
    #[arg(long)]
    pub raster: PathBuf,
}

fn parse_resolution(s: &str) -> std::result::Result<Resolution, String> {
    Resolution::parse(s).ok_or_else(|| format!("expected 500m, 1km or 2km, got {s:?}"))
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown value {s:?}"))
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn ensure(cond: bool, msg: &str) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg))
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.into()))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Failure::Runtime(e.into()))
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return EXIT_VALIDATION;
        }
        set_worker_threads(n);
    }
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            EXIT_VALIDATION
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Detect(a) => detect(a),
        Command::Compose(a) => compose(a),
        Command::Synth(a) => synth(a),
        Command::Dataset(DatasetCommand::Split(a)) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::ResolutionStudy(a) => study(a),
        Command::Sweep(a) => sweep(a),
        Command::Explain(a) => explain(a),
        Command::Depression(a) => depression(a),
    }
}

fn detect(a: DetectArgs) -> CliResult<()> {
    ensure(a.threshold_pa.is_finite() && a.threshold_pa > 0.0, "--threshold-pa must be positive")?;
    ensure(a.max_radius_km.is_finite() && a.max_radius_km > 0.0, "--max-radius-km must be positive")?;
    ensure(a.window % 2 == 1, "--window must be odd")?;
    let field = SlpField::from_grid(&read_pgrid(&a.slp)?)?;
    let params = DetectParams {
        threshold_pa: a.threshold_pa,
        max_radius_km: a.max_radius_km,
        window: a.window,
    };
    let mut lines = String::new();
    for aoi in detect_candidates(&field, &params)? {
        lines.push_str(&serde_json::to_string(&aoi.record()).map_err(Error::from)?);
        lines.push('\n');
    }
    print!("{lines}");
    if let Some(dir) = a.out {
        create_dir(&dir)?;
        write_file(&dir.join("aois.jsonl"), &lines)?;
    }
    Ok(())
}

fn compose(a: ComposeArgs) -> CliResult<()> {
    ensure(a.multilook >= 1, "--multilook must be at least 1")?;
    ensure(
        a.out.extension().is_none_or(|e| e != "png"),
        "--out names the .pgrid output; the preview gets a .png extension",
    )?;
    let load = |p: &Path| -> CliResult<RasterGrid> {
        let g = read_pgrid(p)?;
        Ok(if a.multilook > 1 { block_average(&g, a.multilook)? } else { g })
    };
    let co = load(&a.co)?;
    let channels = match &a.cross {
        Some(p) => PolChannels::dual(co, load(p)?),
        None => PolChannels::single(co),
    };
    let composite = compose_from_db(&channels)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_pgrid(&composite.rgb, &a.out)?;
    composite.write_png(a.out.with_extension("png"))?;
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult<()> {
    ensure(a.sets >= 1, "--sets must be positive")?;
    let config = SynthDatasetConfig {
        n_sets: a.sets,
        side: a.side,
        ..SynthDatasetConfig::default()
    };
    config.vortex.validate(a.side).map_err(|e| invalid(e.to_string()))?;
    let samples = build_synth_dataset(&config, &a.out, a.seed)?;
    let positives = samples.iter().filter(|s| s.label.index() == 1).count();
    println!(
        "{} samples ({} positive) written to {}",
        samples.len(),
        positives,
        a.out.join("manifest.jsonl").display()
    );
    Ok(())
}

fn split(a: SplitArgs) -> CliResult<()> {
    let frac_ok = |f: f64| (0.0..1.0).contains(&f);
    ensure(frac_ok(a.test_frac) && frac_ok(a.val_frac), "fractions must lie in [0, 1)")?;
    let samples = read_manifest(&a.manifest)?;
    validate_samples(&samples)?;
    let split = split_by_sets(&group_sets(&samples)?, a.test_frac, a.val_frac, a.seed)?;
    create_dir(&a.out)?;
    split.write(a.out.join("partitions.jsonl"))?;
    for part in [Partition::Train, Partition::Val, Partition::Test] {
        println!("{part:?}: {} samples", split.select(&samples, part).len());
    }
    Ok(())
}

fn check_factor(f: usize) -> CliResult<()> {
    ensure(matches!(f, 1 | 2 | 4), "downsampling factors must be 1, 2 or 4")
}

/// Manifest samples with their partitions.
struct Data {
    root: PathBuf,
    samples: Vec<Sample>,
    split: Split,
}

impl Data {
    fn load(args: &DataArgs) -> CliResult<Self> {
        let samples = read_manifest(&args.manifest)?;
        validate_samples(&samples)?;
        Ok(Self {
            root: manifest_root(&args.manifest),
            samples,
            split: Split::read(&args.split)?,
        })
    }

    fn part(&self, p: Partition) -> CliResult<Vec<&Sample>> {
        let v = self.split.select(&self.samples, p);
        if v.is_empty() {
            return Err(Failure::Runtime(Error::InvalidArgument(format!("partition {p:?} is empty"))));
        }
        Ok(v)
    }
}

fn manifest_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn model_config(m: &ModelArgs, image_side: usize) -> CliResult<ModelConfig> {
    let mut c = ModelConfig::for_resolution(m.resolution);
    c.input_size = m.input_size.unwrap_or(c.input_size.min(image_side));
    if let Some(v) = m.blocks {
        c.n_blocks = v;
    }
    if let Some(v) = m.lr {
        c.lr = v;
    }
    if let Some(v) = m.dropout {
        c.dropout_rate = v;
    }
    if let Some(v) = m.activation {
        c.activation = v;
    }
    if let Some(v) = m.entry_filters {
        c.entry_filters = v;
    }
    if let Some(v) = m.kernel {
        c.kernel = v;
    }
    if let Some(v) = m.sep_filters {
        c.sep_filters_0 = v;
    }
    if let Some(v) = m.pool {
        c.global_pool = v;
    }
    if let Some(v) = m.dense_layers {
        c.n_dense = v;
    }
    if let Some(v) = m.dense_units {
        c.dense_units = v;
    }
    if m.no_batchnorm {
        c.batchnorm = false;
    }
    c.validate().map_err(|e| invalid(e.to_string()))?;
    ensure(c.input_size <= image_side, "--input-size exceeds the image side")?;
    Ok(c)
}

fn train_config(t: &TrainingArgs, model: ModelConfig, epochs: usize) -> CliResult<TrainConfig> {
    let mut c = TrainConfig::new(model);
    c.epochs = epochs;
    c.batch_size = t.batch_size;
    c.strategy = t.strategy;
    c.seed = t.seed;
    c.aug_seed = t.aug_seed;
    if t.no_augment {
        c.augment = None;
    }
    c.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(c)
}

/// Side of the first image after downsampling.
fn image_side(store: &dyn ImageStore, sample: &Sample) -> CliResult<usize> {
    let g = store.load(sample)?;
    Ok(g.rows().min(g.cols()))
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    check_factor(a.downsample)?;
    let data = Data::load(&a.data)?;
    let disk = DiskStore::new(&data.root);
    let store = Downsampled {
        inner: &disk,
        factor: a.downsample,
    };
    let (tr, va) = (data.part(Partition::Train)?, data.part(Partition::Val)?);
    let model = model_config(&a.model, image_side(&store, tr[0])?)?;
    let config = train_config(&a.training, model, a.epochs)?;
    create_dir(&a.out)?;
    let outcome = train(&config, &tr, &va, &store, |m| {
        eprintln!("epoch {:>4}  loss {:.5}  val F1 {:.4}", m.epoch, m.train_loss, m.val_f1);
    })?;
    outcome.best_checkpoint(&config.model).save(a.out.join("best.ckpt"))?;
    Checkpoint {
        config: config.model.clone(),
        epoch: config.epochs,
        metrics: json!({ "val_f1": outcome.history.last().map(|m| m.val_f1) }),
        params: outcome.final_params.clone(),
    }
    .save(a.out.join("final.ckpt"))?;
    write_file(&a.out.join("history.csv"), &history_csv(&outcome.history))?;
    write_file(
        &a.out.join("train_config.json"),
        &serde_json::to_string_pretty(&config).map_err(Error::from)?,
    )?;
    println!("best epoch {} with validation F1 {:.4}", outcome.best_epoch, outcome.best_val_f1);
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    check_factor(a.downsample)?;
    ensure(
        a.split.is_some() || a.partition == PartitionArg::All || a.partition == PartitionArg::Test,
        "--partition needs --split",
    )?;
    let samples = read_manifest(&a.manifest)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let selected: Vec<&Sample> = match (&a.split, a.partition) {
        (Some(path), part) if part != PartitionArg::All => {
            let split = Split::read(path)?;
            let p = match part {
                PartitionArg::Train => Partition::Train,
                PartitionArg::Val => Partition::Val,
                _ => Partition::Test,
            };
            split.select(&samples, p)
        }
        _ => samples.iter().collect(),
    };
    let disk = DiskStore::new(manifest_root(&a.manifest));
    let store = Downsampled {
        inner: &disk,
        factor: a.downsample,
    };
    let cm = evaluate(&ckpt.params, &ckpt.config, &selected, &store)?;
    let report = json!({
        "tn": cm.tn, "fn": cm.fn_, "fp": cm.fp, "tp": cm.tp, "f1": cm.f1(), "n": cm.total(),
    });
    println!("{report}");
    if let Some(dir) = a.out {
        create_dir(&dir)?;
        write_file(&dir.join("eval.json"), &format!("{report}\n"))?;
    }
    Ok(())
}

fn spacing_label(m: f64) -> String {
    if m >= 1000.0 && (m / 1000.0).fract() == 0.0 {
        format!("{}km", m / 1000.0)
    } else {
        format!("{m}m")
    }
}

fn study(a: StudyArgs) -> CliResult<()> {
    ensure(!a.factors.is_empty(), "--factors must not be empty")?;
    for &f in &a.factors {
        check_factor(f)?;
    }
    ensure(a.seeds >= 1, "--seeds must be positive")?;
    let data = Data::load(&a.data)?;
    let store = DiskStore::new(&data.root);
    let (tr, va, te) = (
        data.part(Partition::Train)?,
        data.part(Partition::Val)?,
        data.part(Partition::Test)?,
    );
    let first = store.load(tr[0])?;
    let native_side = first.rows().min(first.cols());
    let native_input = model_config(&a.model, native_side)?.input_size;
    let mut arms = Vec::new();
    for &f in &a.factors {
        let mut model = model_config(&a.model, native_side)?;
        model.input_size = native_input / f;
        let config = train_config(&a.training, model, a.epochs)?;
        arms.push(StudyArm {
            label: spacing_label(first.pixel_spacing_m() * f as f64),
            factor: f,
            config,
        });
    }
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| a.training.seed + i).collect();
    create_dir(&a.out)?;
    let rows = resolution_study(&arms, &seeds, &tr, &va, &te, &store, |label, seed, cm| {
        eprintln!("{label} seed {seed}: F1 {:.4}", cm.f1());
    })?;
    let table = format_study_table(&rows);
    print!("{table}");
    write_file(&a.out.join("study.txt"), &table)?;
    write_file(&a.out.join("study.csv"), &study_csv(&rows))?;
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    ensure(a.budget >= 1, "--budget must be positive")?;
    let data = Data::load(&a.data)?;
    let store = DiskStore::new(&data.root);
    let (tr, va) = (data.part(Partition::Train)?, data.part(Partition::Val)?);
    let model = model_config(&a.model, image_side(&store, tr[0])?)?;
    let base = train_config(&a.training, model, a.epochs)?;
    create_dir(&a.out)?;
    let result = hyperparameter_sweep(&SearchSpace::default(), &base, a.budget, &tr, &va, &store)?;
    let mut lines = String::new();
    for (config, score) in &result.trials {
        lines.push_str(&json!({ "val_f1": score, "config": config }).to_string());
        lines.push('\n');
    }
    write_file(&a.out.join("sweep.jsonl"), &lines)?;
    write_file(
        &a.out.join("best_config.json"),
        &serde_json::to_string_pretty(&result.best).map_err(Error::from)?,
    )?;
    println!("best validation F1 {:.4}", result.best_score);
    Ok(())
}

fn explain(a: ExplainArgs) -> CliResult<()> {
    check_factor(a.downsample)?;
    ensure(a.steps >= 1, "--steps must be positive")?;
    ensure(a.target <= 1, "--target must be 0 or 1")?;
    ensure(
        a.method == MethodArg::Gradcam || a.target == POSITIVE_CLASS,
        "integrated gradients with a black baseline are only defined for the positive class",
    )?;
    ensure(
        a.out.extension().is_some_and(|e| e == "png"),
        "--out must name a .png file",
    )?;
    let samples = read_manifest(&a.manifest)?;
    let sample = samples
        .iter()
        .find(|s| s.id == a.sample)
        .ok_or_else(|| invalid(format!("sample {} is not in the manifest", a.sample)))?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let disk = DiskStore::new(manifest_root(&a.manifest));
    let store = Downsampled {
        inner: &disk,
        factor: a.downsample,
    };
    let image = prepare_eval(&store.load(sample)?, ckpt.config.input_size)?;
    let x = Tensor4::from_grids(&[&image])?;
    let mut map = match a.method {
        MethodArg::Ig => {
            let scorer = ModelScorer {
                params: &ckpt.params,
                config: &ckpt.config,
            };
            integrated_gradients(&scorer, &x, &x.zeros_like(), a.steps, a.target)?
        }
        MethodArg::Gradcam => gradcam(&ckpt.params, &ckpt.config, &x, a.layer.as_deref(), a.target)?,
    };
    map.sample_id = Some(sample.id.clone());
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    emit_overlay(&image, &map, OverlayStyle::for_method(map.method), &a.out)?;
    write_pgrid(&map.to_grid()?, a.out.with_extension("pgrid"))?;
    Ok(())
}

fn depression(a: DepressionArgs) -> CliResult<()> {
    println!("{}", slp_depression(&read_pgrid(&a.raster)?)?);
    Ok(())
}

//! Training loop, evaluation, the resolution study and random
//! hyperparameter search.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentParams};
use crate::error::{Error, Result};
use crate::grid::{bilinear_downsample, center_crop, read_pgrid, RasterGrid};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::layers::{map_items, Activation, GlobalPool};
use crate::nn::model::{self, LossWeights, Mode, ModelConfig, NetworkParams};
use crate::nn::{adam_update, AdamState, Tensor4};
use crate::sampler::{class_weights, BatchPlanner, ImbalanceStrategy, Label, Sample};

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const FINAL_EPOCHS: usize = 200;
pub const SWEEP_EPOCHS: usize = 50;

// ---------------------------------------------------------------------------
// Image access

pub trait ImageStore: Sync {
    fn load(&self, sample: &Sample) -> Result<RasterGrid>;
}

/// Rasters held in memory, keyed by sample id.
#[derive(Clone, Debug, Default)]
pub struct MemoryStore {
    images: HashMap<String, RasterGrid>,
}

impl MemoryStore {
    pub fn new(items: impl IntoIterator<Item = (String, RasterGrid)>) -> Self {
        Self {
            images: items.into_iter().collect(),
        }
    }

    pub fn from_samples(data: &[(Sample, RasterGrid)]) -> Self {
        Self::new(data.iter().map(|(s, g)| (s.id.clone(), g.clone())))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

impl ImageStore for MemoryStore {
    fn load(&self, sample: &Sample) -> Result<RasterGrid> {
        self.images
            .get(&sample.id)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no image for sample {}", sample.id)))
    }
}

/// `.pgrid` rasters resolved against a manifest directory.
#[derive(Clone, Debug)]
pub struct DiskStore {
    pub root: PathBuf,
}

impl DiskStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_of(&self, sample: &Sample) -> PathBuf {
        if sample.raster_path.is_absolute() {
            sample.raster_path.clone()
        } else {
            self.root.join(&sample.raster_path)
        }
    }
}

impl ImageStore for DiskStore {
    fn load(&self, sample: &Sample) -> Result<RasterGrid> {
        read_pgrid(self.path_of(sample))
    }
}

/// Bilinearly downsamples every image of an inner store.
pub struct Downsampled<'a> {
    pub inner: &'a dyn ImageStore,
    pub factor: usize,
}

impl ImageStore for Downsampled<'_> {
    fn load(&self, sample: &Sample) -> Result<RasterGrid> {
        let g = self.inner.load(sample)?;
        if self.factor == 1 {
            Ok(g)
        } else {
            bilinear_downsample(&g, self.factor)
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tp: usize,
}

impl ConfusionMatrix {
    pub fn new(tn: usize, fn_: usize, fp: usize, tp: usize) -> Self {
        Self { tn, fn_, fp, tp }
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Self {
        let mut m = Self::default();
        for (&y, &p) in labels.iter().zip(predictions) {
            match (y, p) {
                (0, 0) => m.tn += 1,
                (1, 0) => m.fn_ += 1,
                (0, _) => m.fp += 1,
                _ => m.tp += 1,
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tn + self.fn_ + self.fp + self.tp
    }

    /// `2·tp / (2·tp + fp + fn)`, and 0 when there are no positives in
    /// either labels or predictions.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: ConfusionMatrix,
    pub val_f1: f64,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,train_loss,val_tn,val_fn,val_fp,val_tp,val_f1";

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(HISTORY_CSV_HEADER);
    out.push('\n');
    for m in history {
        let _ = writeln!(
            out,
            "{},{:?},{},{},{},{},{:?}",
            m.epoch, m.train_loss, m.val.tn, m.val.fn_, m.val.fp, m.val.tp, m.val_f1
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub strategy: ImbalanceStrategy,
    /// Seeds weight initialisation, batch planning and dropout.
    pub seed: u64,
    pub aug_seed: u64,
    /// Augmentation ranges; the crop size always follows the model input.
    pub augment: Option<AugmentParams>,
    /// Batches prepared ahead of the optimiser.
    pub queue_depth: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            epochs: FINAL_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            strategy: ImbalanceStrategy::Oversampling,
            seed: 0,
            aug_seed: 1,
            augment: Some(AugmentParams::default()),
            queue_depth: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("at least one epoch is required"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.model.lr >= 0.0 && self.model.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub best_params: NetworkParams,
    pub final_params: NetworkParams,
}

impl TrainOutcome {
    pub fn best_checkpoint(&self, config: &ModelConfig) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            epoch: self.best_epoch,
            metrics: serde_json::json!({
                "val_f1": self.best_val_f1,
                "history": self.history,
            }),
            params: self.best_params.clone(),
        }
    }
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        z ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(z << 6).wrapping_add(z >> 2);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Centre crop to the model input side (no augmentation).
pub fn prepare_eval(grid: &RasterGrid, side: usize) -> Result<RasterGrid> {
    if grid.rows() == side && grid.cols() == side {
        Ok(grid.clone())
    } else {
        center_crop(grid, side)
    }
}

fn check_channels(grid: &RasterGrid, config: &ModelConfig) -> Result<()> {
    if grid.channels() != config.input_channels {
        return Err(Error::shape(format!(
            "image has {} channels, model expects {}",
            grid.channels(),
            config.input_channels
        )));
    }
    Ok(())
}

fn build_batch(
    samples: &[&Sample],
    batch: &[usize],
    store: &dyn ImageStore,
    config: &TrainConfig,
    epoch: usize,
    batch_idx: usize,
) -> Result<(Tensor4, Vec<usize>)> {
    let side = config.model.input_size;
    let images = map_items(batch.len(), |pos| -> Result<RasterGrid> {
        let sample = samples[batch[pos]];
        let grid = store.load(sample)?;
        check_channels(&grid, &config.model)?;
        match &config.augment {
            Some(a) => {
                let params = AugmentParams {
                    crop_size: side,
                    ..a.clone()
                };
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.aug_seed, a.seed]));
                rng.set_stream(((epoch as u64) << 40) | ((batch_idx as u64) << 16) | pos as u64);
                augment(&grid, &params, &mut rng)
            }
            None => prepare_eval(&grid, side),
        }
    });
    let images: Vec<RasterGrid> = images.into_iter().collect::<Result<_>>()?;
    let refs: Vec<&RasterGrid> = images.iter().collect();
    let labels = batch.iter().map(|&i| samples[i].label.index()).collect();
    Ok((Tensor4::from_grids(&refs)?, labels))
}

/// Positive-class probability per sample, from centre crops.
pub fn predict(
    params: &NetworkParams,
    config: &ModelConfig,
    samples: &[&Sample],
    store: &dyn ImageStore,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(DEFAULT_BATCH_SIZE) {
        let grids = chunk
            .iter()
            .map(|s| {
                let g = store.load(s)?;
                check_channels(&g, config)?;
                prepare_eval(&g, config.input_size)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&RasterGrid> = grids.iter().collect();
        let x = Tensor4::from_grids(&refs)?;
        let cache = model::model_forward(&x, params, config, Mode::Infer)?;
        out.extend(cache.probs.data.chunks_exact(2).map(|p| p[1]));
    }
    Ok(out)
}

/// Argmax classification; ties go to the negative class.
pub fn evaluate(
    params: &NetworkParams,
    config: &ModelConfig,
    samples: &[&Sample],
    store: &dyn ImageStore,
) -> Result<ConfusionMatrix> {
    let probs = predict(params, config, samples, store)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let preds: Vec<usize> = probs.iter().map(|&p| usize::from(p > 0.5)).collect();
    Ok(ConfusionMatrix::from_predictions(&labels, &preds))
}

/// Trains with the configured imbalance strategy, evaluating on `val`
/// after every epoch and keeping the parameters of the best epoch (the
/// earliest one on ties). `progress` sees every epoch as it completes.
pub fn train(
    config: &TrainConfig,
    train_set: &[&Sample],
    val_set: &[&Sample],
    store: &dyn ImageStore,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let labels: Vec<Label> = train_set.iter().map(|s| s.label).collect();
    let weights = match config.strategy {
        ImbalanceStrategy::ClassWeighting => {
            let n1 = labels.iter().filter(|&&l| l == Label::Positive).count();
            let (w0, w1) = class_weights(labels.len() - n1, n1)?;
            LossWeights(w0, w1)
        }
        _ => LossWeights::default(),
    };
    let mut planner = BatchPlanner::new(config.strategy, &labels, config.batch_size, mix_seed(&[config.seed, 1]))?;
    let mut params = NetworkParams::init(&config.model, &mut ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0])))?;
    let mut adam = AdamState::new(&params);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, NetworkParams)> = None;

    for epoch in 1..=config.epochs {
        let batches = planner.next_epoch();
        let (tx, rx) = sync_channel(config.queue_depth.max(1));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        std::thread::scope(|scope| -> Result<()> {
            let batches = &batches;
            scope.spawn(move || {
                for (b, idx) in batches.iter().enumerate() {
                    let item = build_batch(train_set, idx, store, config, epoch, b);
                    if tx.send(item).is_err() {
                        break;
                    }
                }
            });
            // Owning the receiver here unblocks the producer on early return.
            let rx = rx;
            for b in 0..batches.len() {
                let (x, y) = rx.recv().map_err(|_| Error::invalid("batch producer stopped"))??;
                let mode = Mode::Train {
                    dropout_seed: mix_seed(&[config.seed, 2, epoch as u64, b as u64]),
                };
                let (loss, cache, grads) = model::loss_and_gradients(&x, &y, weights, &params, &config.model, mode)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, batch: b, loss });
                }
                if !grads.params.is_finite() {
                    return Err(Error::NonFiniteGradient);
                }
                model::update_running_stats(&mut params, &cache);
                adam_update(&mut params, &grads.params, &mut adam, config.model.lr)?;
                loss_sum += loss * y.len() as f64;
                seen += y.len();
            }
            Ok(())
        })?;
        let val = evaluate(&params, &config.model, val_set, store)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { 0.0 },
            val,
            val_f1: val.f1(),
        };
        progress(&metrics);
        if best.as_ref().map_or(true, |(_, f, _)| metrics.val_f1 > *f) {
            best = Some((epoch, metrics.val_f1, params.clone()));
        }
        history.push(metrics);
    }
    let (best_epoch, best_val_f1, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_f1,
        best_params,
        final_params: params,
    })
}

// ---------------------------------------------------------------------------
// Resolution study

#[derive(Clone, Debug)]
pub struct StudyArm {
    pub label: String,
    /// Bilinear downsampling factor applied to the stored images.
    pub factor: usize,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub label: String,
    /// Test confusion matrix of each run, in seed order.
    pub runs: Vec<ConfusionMatrix>,
    /// Training history of each run, in seed order.
    pub histories: Vec<Vec<EpochMetrics>>,
}

/// Mean and sample standard deviation (n − 1); the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl StudyRow {
    fn column(&self, f: impl Fn(&ConfusionMatrix) -> f64) -> (f64, f64) {
        mean_std(&self.runs.iter().map(f).collect::<Vec<_>>())
    }

    /// (mean, std) of tn, fn, fp, tp and F1.
    pub fn summary(&self) -> [(f64, f64); 5] {
        [
            self.column(|m| m.tn as f64),
            self.column(|m| m.fn_ as f64),
            self.column(|m| m.fp as f64),
            self.column(|m| m.tp as f64),
            self.column(|m| m.f1()),
        ]
    }

    pub fn mean_f1(&self) -> f64 {
        self.summary()[4].0
    }
}

/// Trains every arm once per seed and evaluates the best checkpoint of each
/// run on `test`. Run `seed` trains with `seed` and augments with
/// `mix_seed(&[seed, 7])`.
pub fn resolution_study(
    arms: &[StudyArm],
    seeds: &[u64],
    train_set: &[&Sample],
    val_set: &[&Sample],
    test_set: &[&Sample],
    store: &dyn ImageStore,
    mut progress: impl FnMut(&str, u64, &ConfusionMatrix),
) -> Result<Vec<StudyRow>> {
    if arms.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("the study needs at least one arm and one seed"));
    }
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let view = Downsampled {
            inner: store,
            factor: arm.factor,
        };
        let mut runs = Vec::with_capacity(seeds.len());
        let mut histories = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let config = TrainConfig {
                seed,
                aug_seed: mix_seed(&[seed, 7]),
                ..arm.config.clone()
            };
            let outcome = train(&config, train_set, val_set, &view, |_| {})?;
            let cm = evaluate(&outcome.best_params, &config.model, test_set, &view)?;
            progress(&arm.label, seed, &cm);
            runs.push(cm);
            histories.push(outcome.history);
        }
        rows.push(StudyRow {
            label: arm.label.clone(),
            runs,
            histories,
        });
    }
    Ok(rows)
}

/// Text table with one `mean ± std` cell per column.
pub fn format_study_table(rows: &[StudyRow]) -> String {
    let mut out = format!(
        "{:<12} {:>15} {:>13} {:>13} {:>13} {:>13}\n",
        "Resolution", "TN", "FN", "FP", "TP", "F1 score"
    );
    for row in rows {
        let s = row.summary();
        let _ = write!(out, "{:<12}", row.label);
        for (k, (m, sd)) in s.iter().enumerate() {
            if k == 4 {
                let _ = write!(out, " {:>13}", format!("{m:.2}±{sd:.2}"));
            } else {
                let w = if k == 0 { 15 } else { 13 };
                let _ = write!(out, " {:>w$}", format!("{m:.1}±{sd:.1}"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("resolution,tn_mean,tn_std,fn_mean,fn_std,fp_mean,fp_std,tp_mean,tp_std,f1_mean,f1_std,runs\n");
    for row in rows {
        let _ = write!(out, "{}", row.label);
        for (m, s) in row.summary() {
            let _ = write!(out, ",{m:?},{s:?}");
        }
        let _ = writeln!(out, ",{}", row.runs.len());
    }
    out
}

// ---------------------------------------------------------------------------
// Random hyperparameter search

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub activations: Vec<Activation>,
    pub entry_filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub sep_filters: Vec<usize>,
    /// Inclusive range of residual blocks.
    pub blocks: (usize, usize),
    pub pools: Vec<GlobalPool>,
    pub dense_layers: (usize, usize),
    pub dense_units: Vec<usize>,
    pub dropout: (f64, f64),
    pub batchnorm: Vec<bool>,
    pub lrs: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            activations: vec![Activation::Relu, Activation::Selu],
            entry_filters: vec![8, 16],
            kernels: vec![3, 5],
            sep_filters: vec![8, 16, 24, 32],
            blocks: (2, 8),
            pools: vec![GlobalPool::Avg, GlobalPool::Flat, GlobalPool::Max],
            dense_layers: (1, 3),
            dense_units: vec![8, 16, 24, 32],
            dropout: (0.1, 0.6),
            batchnorm: vec![true, false],
            lrs: vec![1e-2, 1e-3, 1e-4],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let empty = self.activations.is_empty()
            || self.entry_filters.is_empty()
            || self.kernels.is_empty()
            || self.sep_filters.is_empty()
            || self.pools.is_empty()
            || self.dense_units.is_empty()
            || self.batchnorm.is_empty()
            || self.lrs.is_empty()
            || self.blocks.0 > self.blocks.1
            || self.dense_layers.0 > self.dense_layers.1
            || self.dropout.0 > self.dropout.1;
        if empty {
            return Err(Error::invalid("search space has an empty dimension"));
        }
        if self.blocks.0 == 0 || self.dropout.0 < 0.0 || self.dropout.1 >= 1.0 {
            return Err(Error::invalid("search space values out of range"));
        }
        Ok(())
    }

    /// Draws a configuration; input shape is taken from `base`.
    pub fn sample<R: Rng + ?Sized>(&self, base: &ModelConfig, rng: &mut R) -> ModelConfig {
        let pick = |rng: &mut R, v: &[usize]| *v.choose(rng).expect("validated");
        let dropout = if self.dropout.0 == self.dropout.1 {
            self.dropout.0
        } else {
            rng.gen_range(self.dropout.0..=self.dropout.1)
        };
        ModelConfig {
            activation: *self.activations.choose(rng).expect("validated"),
            entry_filters: pick(rng, &self.entry_filters),
            kernel: pick(rng, &self.kernels),
            sep_filters_0: pick(rng, &self.sep_filters),
            n_blocks: rng.gen_range(self.blocks.0..=self.blocks.1),
            global_pool: *self.pools.choose(rng).expect("validated"),
            n_dense: rng.gen_range(self.dense_layers.0..=self.dense_layers.1),
            dense_units: pick(rng, &self.dense_units),
            dropout_rate: dropout,
            batchnorm: *self.batchnorm.choose(rng).expect("validated"),
            lr: *self.lrs.choose(rng).expect("validated"),
            input_channels: base.input_channels,
            input_size: base.input_size,
        }
    }

    pub fn contains(&self, c: &ModelConfig) -> bool {
        self.activations.contains(&c.activation)
            && self.entry_filters.contains(&c.entry_filters)
            && self.kernels.contains(&c.kernel)
            && self.sep_filters.contains(&c.sep_filters_0)
            && (self.blocks.0..=self.blocks.1).contains(&c.n_blocks)
            && self.pools.contains(&c.global_pool)
            && (self.dense_layers.0..=self.dense_layers.1).contains(&c.n_dense)
            && self.dense_units.contains(&c.dense_units)
            && (self.dropout.0..=self.dropout.1).contains(&c.dropout_rate)
            && self.batchnorm.contains(&c.batchnorm)
            && self.lrs.contains(&c.lr)
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub best: ModelConfig,
    pub best_score: f64,
    pub trials: Vec<(ModelConfig, f64)>,
}

/// Evaluates `budget` random configurations and returns the best-scoring
/// one (the earliest on ties).
pub fn random_search(
    space: &SearchSpace,
    base: &ModelConfig,
    budget: usize,
    seed: u64,
    mut score: impl FnMut(&ModelConfig) -> Result<f64>,
) -> Result<SweepResult> {
    space.validate()?;
    if budget == 0 {
        return Err(Error::invalid("search budget must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(budget);
    let mut best: Option<(ModelConfig, f64)> = None;
    for _ in 0..budget {
        let c = space.sample(base, &mut rng);
        let s = score(&c)?;
        if best.as_ref().map_or(true, |(_, b)| s > *b) {
            best = Some((c.clone(), s));
        }
        trials.push((c, s));
    }
    let (best, best_score) = best.expect("budget is positive");
    Ok(SweepResult {
        best,
        best_score,
        trials,
    })
}

/// Random search scored by the best validation F1 of a training run.
pub fn hyperparameter_sweep(
    space: &SearchSpace,
    base: &TrainConfig,
    budget: usize,
    train_set: &[&Sample],
    val_set: &[&Sample],
    store: &dyn ImageStore,
) -> Result<SweepResult> {
    random_search(space, &base.model, budget, base.seed, |model| {
        let config = TrainConfig {
            model: model.clone(),
            ..base.clone()
        };
        Ok(train(&config, train_set, val_set, store, |_| {})?.best_val_f1)
    })
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_reproduces_table_value() {
        let m = ConfusionMatrix::new(366, 2, 5, 62);
        assert!((m.f1() - 124.0 / 131.0).abs() < 1e-15);
        assert_eq!(format!("{:.2}", m.f1()), "0.95");
    }

    #[test]
    fn f1_degenerate_and_perfect() {
        assert_eq!(ConfusionMatrix::new(10, 0, 0, 0).f1(), 0.0);
        assert_eq!(ConfusionMatrix::new(3, 0, 0, 4).f1(), 1.0);
    }

    #[test]
    fn confusion_from_predictions() {
        let m = ConfusionMatrix::from_predictions(&[0, 0, 1, 1, 1], &[0, 1, 0, 1, 1]);
        assert_eq!(m, ConfusionMatrix::new(1, 1, 1, 2));
        assert_eq!(m.total(), 5);
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn search_space_samples_stay_inside() {
        let space = SearchSpace::default();
        let base = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            assert!(space.contains(&space.sample(&base, &mut rng)));
        }
    }

    #[test]
    fn collapsed_space_returns_its_point() {
        let base = ModelConfig::default();
        let space = SearchSpace {
            activations: vec![Activation::Selu],
            entry_filters: vec![16],
            kernels: vec![5],
            sep_filters: vec![24],
            blocks: (3, 3),
            pools: vec![GlobalPool::Max],
            dense_layers: (2, 2),
            dense_units: vec![32],
            dropout: (0.3, 0.3),
            batchnorm: vec![false],
            lrs: vec![1e-4],
        };
        let r = random_search(&space, &base, 3, 0, |_| Ok(0.5)).unwrap();
        assert_eq!(r.best.n_blocks, 3);
        assert_eq!(r.best.dropout_rate, 0.3);
        assert!(r.trials.iter().all(|(c, _)| *c == r.best));
        let one = random_search(&SearchSpace::default(), &base, 1, 5, |_| Ok(0.1)).unwrap();
        assert_eq!(one.trials.len(), 1);
        assert_eq!(one.trials[0].0, one.best);
    }

    #[test]
    fn empty_space_rejected() {
        let space = SearchSpace {
            lrs: vec![],
            ..SearchSpace::default()
        };
        assert!(random_search(&space, &ModelConfig::default(), 1, 0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn study_table_shape() {
        let rows = vec![StudyRow {
            label: "500m".into(),
            runs: vec![ConfusionMatrix::new(366, 2, 5, 62)],
            histories: vec![vec![]],
        }];
        let t = format_study_table(&rows);
        assert!(t.contains("0.95±0.00"));
        assert!(t.lines().count() == 2);
        assert!(study_csv(&rows).lines().nth(1).unwrap().starts_with("500m,366.0,0.0"));
    }
}

//! Dataset manifests, set-level partitioning and the batch planners for the
//! three class-imbalance strategies.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sar::PolMode;

pub const DEFAULT_TEST_FRAC: f64 = 0.21;
pub const DEFAULT_VAL_FRAC: f64 = 0.10;
pub const MAX_NEGATIVES_PER_SET: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    /// Class index used by the classifier: negative 0, positive 1.
    pub fn index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImagingMode {
    EW,
    IW,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub set_id: String,
    pub label: Label,
    pub pol_mode: PolMode,
    pub imaging_mode: ImagingMode,
    /// Raster location, relative to the manifest directory unless absolute.
    pub raster_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slp_depression_pa: Option<f64>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    validate_samples(&out)?;
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let mut buf = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut buf, s)?;
        buf.push(b'\n');
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Unique ids and exactly one positive per set.
pub fn validate_samples(samples: &[Sample]) -> Result<()> {
    let mut ids = HashSet::new();
    for s in samples {
        if !ids.insert(s.id.as_str()) {
            return Err(Error::invalid(format!("duplicate sample id {}", s.id)));
        }
    }
    group_sets(samples).map(|_| ())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepeatPassSet {
    pub set_id: String,
    pub positive: Sample,
    pub negatives: Vec<Sample>,
}

impl RepeatPassSet {
    pub fn len(&self) -> usize {
        1 + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        std::iter::once(&self.positive).chain(&self.negatives)
    }
}

/// Groups samples by set, ordered by set id.
pub fn group_sets(samples: &[Sample]) -> Result<Vec<RepeatPassSet>> {
    let mut by_set: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        by_set.entry(&s.set_id).or_default().push(s);
    }
    by_set
        .into_iter()
        .map(|(set_id, members)| {
            let mut positives = members.iter().filter(|s| s.label == Label::Positive);
            let positive = match (positives.next(), positives.next()) {
                (Some(p), None) => (*p).clone(),
                _ => {
                    return Err(Error::invalid(format!(
                        "set {set_id} must contain exactly one positive sample"
                    )))
                }
            };
            let negatives: Vec<Sample> = members
                .iter()
                .filter(|s| s.label == Label::Negative)
                .map(|s| (*s).clone())
                .collect();
            if negatives.len() > MAX_NEGATIVES_PER_SET {
                return Err(Error::invalid(format!(
                    "set {set_id} has {} negatives, more than {MAX_NEGATIVES_PER_SET}",
                    negatives.len()
                )));
            }
            Ok(RepeatPassSet {
                set_id: set_id.to_string(),
                positive,
                negatives,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PartitionLine {
    set_id: String,
    partition: Partition,
}

impl Split {
    pub fn partition_of(&self, set_id: &str) -> Option<Partition> {
        let has = |v: &Vec<String>| v.iter().any(|s| s == set_id);
        if has(&self.train) {
            Some(Partition::Train)
        } else if has(&self.val) {
            Some(Partition::Val)
        } else if has(&self.test) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    /// Samples whose set belongs to `part`, in manifest order.
    pub fn select<'a>(&self, samples: &'a [Sample], part: Partition) -> Vec<&'a Sample> {
        let ids: HashSet<&str> = match part {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
        .iter()
        .map(String::as_str)
        .collect();
        samples.iter().filter(|s| ids.contains(s.set_id.as_str())).collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        for (ids, partition) in [
            (&self.train, Partition::Train),
            (&self.val, Partition::Val),
            (&self.test, Partition::Test),
        ] {
            for set_id in ids {
                serde_json::to_writer(
                    &mut buf,
                    &PartitionLine {
                        set_id: set_id.clone(),
                        partition,
                    },
                )?;
                buf.push(b'\n');
            }
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut split = Split::default();
        let mut seen = HashSet::new();
        for line in BufReader::new(fs::File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let p: PartitionLine = serde_json::from_str(&line)?;
            if !seen.insert(p.set_id.clone()) {
                return Err(Error::invalid(format!("set {} listed twice", p.set_id)));
            }
            match p.partition {
                Partition::Train => split.train.push(p.set_id),
                Partition::Val => split.val.push(p.set_id),
                Partition::Test => split.test.push(p.set_id),
            }
        }
        Ok(split)
    }
}

/// Assigns whole sets to partitions. Sets are shuffled, then taken in turn
/// into the test partition until its share of samples first reaches
/// `test_frac`; validation is carved from the remainder the same way at
/// `val_frac`, and the rest is training.
pub fn split_by_sets(sets: &[RepeatPassSet], test_frac: f64, val_frac: f64, seed: u64) -> Result<Split> {
    if sets.is_empty() {
        return Err(Error::invalid("no sets to split"));
    }
    if !(0.0..1.0).contains(&test_frac) || !(0.0..1.0).contains(&val_frac) {
        return Err(Error::invalid("split fractions must lie in [0, 1)"));
    }
    let mut order: Vec<&RepeatPassSet> = sets.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    fn take<'a>(order: &mut Vec<&'a RepeatPassSet>, frac: f64) -> Vec<&'a RepeatPassSet> {
        let total: usize = order.iter().map(|s| s.len()).sum();
        let mut taken = Vec::new();
        let mut count = 0usize;
        if frac <= 0.0 {
            return taken;
        }
        while !order.is_empty() && (count as f64 / total as f64) < frac {
            let s = order.remove(0);
            count += s.len();
            taken.push(s);
        }
        taken
    }

    let test = take(&mut order, test_frac);
    let val = take(&mut order, val_frac);
    if order.is_empty() {
        return Err(Error::invalid(format!(
            "{} sets are too few for test fraction {test_frac} and validation fraction {val_frac}",
            sets.len()
        )));
    }
    let ids = |v: Vec<&RepeatPassSet>| v.into_iter().map(|s| s.set_id.clone()).collect();
    Ok(Split {
        test: ids(test),
        val: ids(val),
        train: ids(order),
    })
}

/// `w_c = (1/n_c)·(n0 + n1)/2`, so that `n0·w0 + n1·w1 = n0 + n1`.
pub fn class_weights(n0: usize, n1: usize) -> Result<(f64, f64)> {
    if n0 == 0 || n1 == 0 {
        return Err(Error::invalid("class weights need at least one sample per class"));
    }
    let half = (n0 + n1) as f64 / 2.0;
    Ok((half / n0 as f64, half / n1 as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImbalanceStrategy {
    ClassWeighting,
    Oversampling,
    Rejection,
}

impl ImbalanceStrategy {
    pub const ALL: [ImbalanceStrategy; 3] = [
        ImbalanceStrategy::ClassWeighting,
        ImbalanceStrategy::Oversampling,
        ImbalanceStrategy::Rejection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ImbalanceStrategy::ClassWeighting => "class-weighting",
            ImbalanceStrategy::Oversampling => "oversampling",
            ImbalanceStrategy::Rejection => "rejection",
        }
    }
}

/// A batch lists positions into the training sample slice.
pub type Batch = Vec<usize>;

fn split_classes(labels: &[Label]) -> (Vec<usize>, Vec<usize>) {
    let mut neg = Vec::new();
    let mut pos = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Label::Negative => neg.push(i),
            Label::Positive => pos.push(i),
        }
    }
    (neg, pos)
}

/// Half-negative, half-positive batches. Every negative is used once per
/// epoch; positives come from a pool that is reshuffled when exhausted and
/// carries over between epochs, so repeat counts stay level.
#[derive(Clone, Debug)]
pub struct Oversampler {
    negatives: Vec<usize>,
    positives: Vec<usize>,
    pool: Vec<usize>,
    half: usize,
    rng: ChaCha8Rng,
}

impl Oversampler {
    pub fn new(labels: &[Label], batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 || batch_size % 2 != 0 {
            return Err(Error::invalid("oversampling needs an even batch size of at least 2"));
        }
        let half = batch_size / 2;
        let (negatives, positives) = split_classes(labels);
        if negatives.len() < half || positives.len() < half {
            return Err(Error::invalid(format!(
                "oversampling needs at least {half} samples per class, got {} negative and {} positive",
                negatives.len(),
                positives.len()
            )));
        }
        Ok(Self {
            negatives,
            positives,
            pool: Vec::new(),
            half,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn refill(&mut self) {
        let mut fresh = self.positives.clone();
        fresh.shuffle(&mut self.rng);
        // The pool is consumed from the back.
        fresh.reverse();
        self.pool = fresh;
    }

    pub fn next_epoch(&mut self) -> Vec<Batch> {
        let mut negs = self.negatives.clone();
        negs.shuffle(&mut self.rng);
        let n_batches = negs.len() / self.half;
        let mut batches = Vec::with_capacity(n_batches);
        for chunk in negs.chunks_exact(self.half) {
            let mut batch: Batch = chunk.to_vec();
            let mut chosen = Vec::with_capacity(self.half);
            let mut deferred = Vec::new();
            while chosen.len() < self.half {
                if self.pool.is_empty() {
                    self.refill();
                }
                let p = self.pool.pop().expect("pool refilled");
                if chosen.contains(&p) {
                    deferred.push(p);
                } else {
                    chosen.push(p);
                }
            }
            // Deferred positives are first in line for the next batch.
            while let Some(p) = deferred.pop() {
                self.pool.push(p);
            }
            batch.extend(chosen);
            batches.push(batch);
        }
        batches
    }
}

/// Keeps every minority sample and an equally large random subset of the
/// majority, shuffled and cut into batches (the last may be short).
pub fn rejection_sample_epoch<R: rand::Rng + ?Sized>(labels: &[Label], batch_size: usize, rng: &mut R) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let (mut neg, mut pos) = split_classes(labels);
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::invalid("rejection sampling needs both classes"));
    }
    let keep = neg.len().min(pos.len());
    neg.shuffle(rng);
    pos.shuffle(rng);
    let mut all: Vec<usize> = neg[..keep].iter().chain(&pos[..keep]).copied().collect();
    all.shuffle(rng);
    Ok(all.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// All samples once, shuffled, for use with a class-weighted loss.
pub fn weighted_epoch<R: rand::Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Batch>> {
    if batch_size == 0 || n == 0 {
        return Err(Error::invalid("batch size and sample count must be positive"));
    }
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    Ok(all.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Produces the batches of successive epochs for a chosen strategy.
#[derive(Clone, Debug)]
pub enum BatchPlanner {
    ClassWeighting { n: usize, batch_size: usize, rng: ChaCha8Rng },
    Oversampling(Oversampler),
    Rejection { labels: Vec<Label>, batch_size: usize, rng: ChaCha8Rng },
}

impl BatchPlanner {
    pub fn new(strategy: ImbalanceStrategy, labels: &[Label], batch_size: usize, seed: u64) -> Result<Self> {
        let rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match strategy {
            ImbalanceStrategy::ClassWeighting => {
                if labels.is_empty() || batch_size == 0 {
                    return Err(Error::invalid("batch size and sample count must be positive"));
                }
                BatchPlanner::ClassWeighting {
                    n: labels.len(),
                    batch_size,
                    rng,
                }
            }
            ImbalanceStrategy::Oversampling => BatchPlanner::Oversampling(Oversampler::new(labels, batch_size, seed)?),
            ImbalanceStrategy::Rejection => {
                let (neg, pos) = split_classes(labels);
                if neg.is_empty() || pos.is_empty() || batch_size == 0 {
                    return Err(Error::invalid("rejection sampling needs both classes and a positive batch size"));
                }
                BatchPlanner::Rejection {
                    labels: labels.to_vec(),
                    batch_size,
                    rng,
                }
            }
        })
    }

    pub fn next_epoch(&mut self) -> Vec<Batch> {
        match self {
            BatchPlanner::ClassWeighting { n, batch_size, rng } => {
                weighted_epoch(*n, *batch_size, rng).expect("validated at construction")
            }
            BatchPlanner::Oversampling(o) => o.next_epoch(),
            BatchPlanner::Rejection { labels, batch_size, rng } => {
                rejection_sample_epoch(labels, *batch_size, rng).expect("validated at construction")
            }
        }
    }
}

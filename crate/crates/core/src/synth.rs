//! Synthetic SAR-like composites for training and testing without real
//! imagery.
//!
//! Negatives are a band-limited streak field (wind streaks) with large-scale
//! variation and speckle. Positives add a logarithmic-spiral brightness
//! pattern and a dark eye around a jittered centre, shifted so that the
//! image mean stays that of the background. Random numbers are drawn in a
//! fixed order (background, swath, vortex) so a positive with zero contrast
//! and no eye equals the negative drawn from the same generator state.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{write_pgrid, RasterGrid};
use crate::nn::layers::map_items;
use crate::sampler::{write_manifest, ImagingMode, Label, Sample};
use crate::sar::{rgb_compose, PolChannels, PolMode, RgbComposite};

/// Synthetic pixel spacing, matching the 500 m composites.
pub const SYNTH_SPACING_M: f64 = 500.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundParams {
    pub mean: f64,
    pub streak_amplitude: f64,
    /// Range of streak wavelengths in pixels.
    pub streak_wavelength_px: (f64, f64),
    pub streak_components: usize,
    /// Spread of streak directions around the dominant one.
    pub orientation_spread_deg: f64,
    pub large_scale_amplitude: f64,
    pub speckle: f64,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self {
            mean: 0.45,
            streak_amplitude: 0.10,
            streak_wavelength_px: (5.0, 16.0),
            streak_components: 10,
            orientation_spread_deg: 15.0,
            large_scale_amplitude: 0.08,
            speckle: 0.08,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VortexParams {
    pub eye_radius_px: f64,
    /// Darkening at the eye centre; 0 removes the eye.
    pub eye_depth: f64,
    pub spiral_arms: usize,
    pub arm_contrast: f64,
    /// Spiral winding in radians per unit of log-radius.
    pub swirl_rate: f64,
    pub centre_jitter_px: f64,
    pub background: BackgroundParams,
    /// Width of a vertical nodata strip at one image edge, as a fraction of
    /// the image width.
    pub nodata_swath: Option<f64>,
}

impl Default for VortexParams {
    fn default() -> Self {
        Self {
            eye_radius_px: 6.0,
            eye_depth: 0.30,
            spiral_arms: 2,
            arm_contrast: 0.22,
            swirl_rate: 2.5,
            centre_jitter_px: 4.0,
            background: BackgroundParams::default(),
            nodata_swath: None,
        }
    }
}

impl VortexParams {
    pub fn validate(&self, side: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.arm_contrast) {
            return Err(Error::invalid("arm contrast must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.eye_depth) {
            return Err(Error::invalid("eye depth must lie in [0, 1]"));
        }
        if !(self.eye_radius_px > 0.0 && self.eye_radius_px < side as f64 / 4.0) {
            return Err(Error::invalid("eye radius must be positive and below a quarter of the image side"));
        }
        if self.centre_jitter_px < 0.0 {
            return Err(Error::invalid("centre jitter must be non-negative"));
        }
        if let Some(f) = self.nodata_swath {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::invalid("nodata swath fraction must lie in [0, 1)"));
            }
        }
        let (lo, hi) = self.background.streak_wavelength_px;
        if !(lo > 0.0 && hi >= lo) || self.background.streak_components == 0 {
            return Err(Error::invalid("invalid streak spectrum"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthImage {
    pub composite: RgbComposite,
    /// Vortex centre (row, col) for positives.
    pub centre: Option<(f64, f64)>,
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

fn draw_waves<R: Rng + ?Sized>(rng: &mut R, n: usize, theta0: f64, spread: f64, wl: (f64, f64), amp: f64) -> Vec<Wave> {
    (0..n)
        .map(|_| {
            let theta = theta0 + rng.gen_range(-spread..=spread);
            let lambda = rng.gen_range(wl.0..=wl.1);
            let k = 2.0 * PI / lambda;
            Wave {
                // Streaks run along theta, so the wave vector is normal to it.
                kx: -k * theta.sin(),
                ky: k * theta.cos(),
                phase: rng.gen_range(0.0..2.0 * PI),
                amp: amp * rng.gen_range(0.5..1.0) / (n as f64).sqrt(),
            }
        })
        .collect()
}

fn eval_waves(waves: &[Wave], y: f64, x: f64) -> f64 {
    waves.iter().map(|w| w.amp * (w.kx * x + w.ky * y + w.phase).cos()).sum()
}

/// Co- and cross-polarised background fields.
fn background<R: Rng + ?Sized>(p: &BackgroundParams, side: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let theta0 = rng.gen_range(0.0..PI);
    let spread = p.orientation_spread_deg.to_radians();
    let streaks = draw_waves(rng, p.streak_components, theta0, spread, p.streak_wavelength_px, p.streak_amplitude);
    let s = side as f64;
    let large_theta = rng.gen_range(0.0..PI);
    let large = draw_waves(rng, 3, large_theta, PI, (0.7 * s, 1.6 * s), p.large_scale_amplitude);
    let n = side * side;
    let mut co = Vec::with_capacity(n);
    let mut cross = Vec::with_capacity(n);
    for r in 0..side {
        for c in 0..side {
            let (y, x) = (r as f64, c as f64);
            let structure = eval_waves(&streaks, y, x) + eval_waves(&large, y, x);
            co.push(p.mean + structure + p.speckle * rng.gen_range(-1.0..1.0));
            cross.push(0.8 * p.mean + 0.8 * structure + p.speckle * rng.gen_range(-1.0..1.0));
        }
    }
    (co, cross)
}

/// Generates one composite. Negatives carry the background only.
pub fn gen_image<R: Rng + ?Sized>(params: &VortexParams, side: usize, positive: bool, rng: &mut R) -> Result<SynthImage> {
    params.validate(side)?;
    let (mut co, mut cross) = background(&params.background, side, rng);

    let swath = params.nodata_swath.map(|f| {
        let width = (f * side as f64).round() as usize;
        let on_left = rng.gen_bool(0.5);
        if on_left {
            0..width
        } else {
            side - width..side
        }
    });

    let mut centre = None;
    if positive {
        let j = params.centre_jitter_px;
        let half = (side as f64 - 1.0) / 2.0;
        let cy = half + if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
        let cx = half + if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
        let phase = rng.gen_range(0.0..2.0 * PI);
        let sense = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let eye = params.eye_radius_px;
        let reach = 0.45 * side as f64;
        let arms = params.spiral_arms as f64;
        let mut pattern = vec![0.0; side * side];
        for r in 0..side {
            for c in 0..side {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                let rho = dy.hypot(dx);
                let phi = dy.atan2(dx);
                let spiral = (arms * (phi - sense * params.swirl_rate * (1.0 + rho / eye).ln()) + phase).cos();
                let envelope = rho / (rho + eye) * (-rho / reach).exp();
                let dark = -params.eye_depth * (-(rho / eye).powi(2)).exp();
                pattern[r * side + c] = params.arm_contrast * spiral * envelope + dark;
            }
        }
        let mean = pattern.iter().sum::<f64>() / pattern.len() as f64;
        for (k, v) in pattern.iter().enumerate() {
            co[k] += v - mean;
            cross[k] += 0.8 * (v - mean);
        }
        centre = Some((cy, cx));
    }

    let to_grid = |v: Vec<f64>| -> Result<RasterGrid> {
        let mut vals: Vec<f32> = v.into_iter().map(|x| x.clamp(0.0, 1.0) as f32).collect();
        if let Some(cols) = &swath {
            for r in 0..side {
                for c in cols.clone() {
                    vals[r * side + c] = f32::NAN;
                }
            }
        }
        RasterGrid::new(side, side, 1, vals, SYNTH_SPACING_M)
    };
    let composite = rgb_compose(&PolChannels::dual(to_grid(co)?, to_grid(cross)?))?;
    Ok(SynthImage { composite, centre })
}

pub fn gen_positive<R: Rng + ?Sized>(params: &VortexParams, side: usize, rng: &mut R) -> Result<SynthImage> {
    gen_image(params, side, true, rng)
}

pub fn gen_negative<R: Rng + ?Sized>(params: &VortexParams, side: usize, rng: &mut R) -> Result<SynthImage> {
    gen_image(params, side, false, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthDatasetConfig {
    pub n_sets: usize,
    pub side: usize,
    pub vortex: VortexParams,
    /// Negatives per set are Binomial(trials, p); the defaults give a mean
    /// of 1686/318 negatives per positive.
    pub negatives_trials: usize,
    pub negatives_p: f64,
    /// Chance that an image carries a nodata swath, and its width range.
    pub swath_probability: f64,
    pub swath_fraction: (f64, f64),
}

impl Default for SynthDatasetConfig {
    fn default() -> Self {
        Self {
            n_sets: 50,
            side: 128,
            vortex: VortexParams::default(),
            negatives_trials: 10,
            negatives_p: 1686.0 / 3180.0,
            swath_probability: 0.15,
            swath_fraction: (0.1, 0.3),
        }
    }
}

impl SynthDatasetConfig {
    fn validate(&self) -> Result<()> {
        if self.n_sets == 0 {
            return Err(Error::invalid("at least one set is required"));
        }
        if self.negatives_trials > crate::sampler::MAX_NEGATIVES_PER_SET {
            return Err(Error::invalid("at most 10 negatives per set"));
        }
        if !(0.0..=1.0).contains(&self.negatives_p) || !(0.0..=1.0).contains(&self.swath_probability) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let (lo, hi) = self.swath_fraction;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::invalid("invalid swath fraction range"));
        }
        self.vortex.validate(self.side)
    }
}

/// Negatives per set, drawn from stream 0 of the seed.
pub fn draw_set_sizes(config: &SynthDatasetConfig, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..config.n_sets)
        .map(|_| {
            (0..config.negatives_trials)
                .filter(|_| rng.gen_bool(config.negatives_p))
                .count()
        })
        .collect()
}

struct Job {
    sample: Sample,
    stream: u64,
}

fn plan(config: &SynthDatasetConfig, seed: u64) -> Vec<Job> {
    let sizes = draw_set_sizes(config, seed);
    let mut meta = ChaCha8Rng::seed_from_u64(seed);
    meta.set_stream(1);
    let mut jobs = Vec::new();
    let mut stream = 2u64;
    for (s, &n_neg) in sizes.iter().enumerate() {
        let set_id = format!("set{s:03}");
        let imaging_mode = if s % 2 == 0 { ImagingMode::EW } else { ImagingMode::IW };
        for k in 0..=n_neg {
            let (id, label, dep) = if k == 0 {
                (format!("{set_id}_pos"), Label::Positive, meta.gen_range(250.0..900.0))
            } else {
                (format!("{set_id}_neg{k:02}"), Label::Negative, meta.gen_range(-150.0..150.0))
            };
            jobs.push(Job {
                sample: Sample {
                    raster_path: PathBuf::from(format!("images/{id}.pgrid")),
                    id,
                    set_id: set_id.clone(),
                    label,
                    pol_mode: PolMode::Dual,
                    imaging_mode,
                    slp_depression_pa: Some((dep * 10.0f64).round() / 10.0),
                },
                stream,
            });
            stream += 1;
        }
    }
    jobs
}

fn render(config: &SynthDatasetConfig, seed: u64, job: &Job) -> Result<RasterGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(job.stream);
    let mut params = config.vortex.clone();
    let swath = rng.gen_bool(config.swath_probability);
    let width = rng.gen_range(config.swath_fraction.0..=config.swath_fraction.1);
    params.nodata_swath = swath.then_some(width);
    let img = gen_image(&params, config.side, job.sample.label == Label::Positive, &mut rng)?;
    let mut grid = img.composite.rgb;
    for (k, &missing) in img.composite.nodata_mask.iter().enumerate() {
        if missing {
            for ch in 0..3 {
                grid.values_mut()[k * 3 + ch] = f32::NAN;
            }
        }
    }
    grid.attrs.insert("sample_id".into(), job.sample.id.clone().into());
    Ok(grid)
}

/// Generates a dataset in memory: samples in manifest order with their
/// rasters (nodata as NaN).
pub fn generate_synth_dataset(config: &SynthDatasetConfig, seed: u64) -> Result<Vec<(Sample, RasterGrid)>> {
    config.validate()?;
    let jobs = plan(config, seed);
    let grids = map_items(jobs.len(), |i| render(config, seed, &jobs[i]));
    jobs.into_iter()
        .zip(grids)
        .map(|(j, g)| g.map(|g| (j.sample, g)))
        .collect()
}

/// Writes `images/<id>.pgrid` and `manifest.jsonl` under `out_dir`.
pub fn build_synth_dataset(config: &SynthDatasetConfig, out_dir: impl AsRef<Path>, seed: u64) -> Result<Vec<Sample>> {
    let out_dir = out_dir.as_ref();
    let data = generate_synth_dataset(config, seed)?;
    fs::create_dir_all(out_dir.join("images"))?;
    for (s, g) in &data {
        write_pgrid(g, out_dir.join(&s.raster_path))?;
    }
    let samples: Vec<Sample> = data.into_iter().map(|(s, _)| s).collect();
    write_manifest(out_dir.join("manifest.jsonl"), &samples)?;
    Ok(samples)
}

/// Mean intensity per integer radius around `centre`, from channel 2.
pub fn radial_profile(grid: &RasterGrid, centre: (f64, f64), max_radius: usize) -> Vec<f64> {
    let mut sum = vec![0.0; max_radius + 1];
    let mut count = vec![0usize; max_radius + 1];
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            let d = (r as f64 - centre.0).hypot(c as f64 - centre.1).round() as usize;
            let v = grid.get(r, c, 2);
            if d <= max_radius && !v.is_nan() {
                sum[d] += v as f64;
                count[d] += 1;
            }
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { f64::NAN })
        .collect()
}

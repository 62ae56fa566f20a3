//! Attribution maps: Integrated Gradients and Grad-CAM, plus PNG overlays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RasterGrid;
use crate::nn::model::{self, Mode, ModelConfig, NetworkParams, NUM_CLASSES};
use crate::nn::Tensor4;
use crate::sar::write_rgb_png;

pub const DEFAULT_IG_STEPS: usize = 256;
pub const POSITIVE_CLASS: usize = 1;
pub const OVERLAY_ALPHA: f64 = 0.5;
const IG_CHUNK: usize = 16;

/// Something with a differentiable scalar score per class.
pub trait Scorer {
    /// Score of `target` for every batch item, and its gradient with
    /// respect to the input.
    fn score_and_grad(&self, x: &Tensor4, target: usize) -> Result<(Vec<f64>, Tensor4)>;
}

/// Pre-softmax logits of a trained network in inference mode.
pub struct ModelScorer<'a> {
    pub params: &'a NetworkParams,
    pub config: &'a ModelConfig,
}

fn one_hot_dlogits(n: usize, target: usize) -> Tensor4 {
    let mut d = Tensor4::zeros(n, 1, 1, NUM_CLASSES);
    for b in 0..n {
        d.data[b * NUM_CLASSES + target] = 1.0;
    }
    d
}

impl Scorer for ModelScorer<'_> {
    fn score_and_grad(&self, x: &Tensor4, target: usize) -> Result<(Vec<f64>, Tensor4)> {
        if target >= NUM_CLASSES {
            return Err(Error::invalid(format!("class {target} does not exist")));
        }
        let cache = model::model_forward(x, self.params, self.config, Mode::Infer)?;
        let scores = cache.logits.data.chunks_exact(NUM_CLASSES).map(|l| l[target]).collect();
        let grads = model::model_backward(&cache, self.params, self.config, &one_hot_dlogits(x.n, target));
        Ok((scores, grads.input))
    }
}

/// `F(x) = w·x` over the flattened item, the same for every class.
#[derive(Clone, Debug)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
}

impl Scorer for LinearScorer {
    fn score_and_grad(&self, x: &Tensor4, _target: usize) -> Result<(Vec<f64>, Tensor4)> {
        if x.item_len() != self.weights.len() {
            return Err(Error::shape("input does not match the linear weights"));
        }
        let scores = (0..x.n)
            .map(|b| x.item(b).iter().zip(&self.weights).map(|(a, w)| a * w).sum())
            .collect();
        let mut g = x.zeros_like();
        for item in g.data.chunks_exact_mut(self.weights.len()) {
            item.copy_from_slice(&self.weights);
        }
        Ok((scores, g))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    IntegratedGradients,
    GradCam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub method: AttributionMethod,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// Row-major, channel-minor.
    pub values: Vec<f64>,
    pub target_class: usize,
    pub normalization: String,
    pub sample_id: Option<String>,
}

impl AttributionMap {
    /// Per-pixel attribution summed over channels.
    pub fn pixel_sum(&self) -> Vec<f64> {
        self.values.chunks_exact(self.channels).map(|c| c.iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Per-pixel weights in `[0, 1]` for rendering. IG keeps positive
    /// evidence only, scaled by its maximum; Grad-CAM is already
    /// normalised.
    pub fn display_values(&self) -> Vec<f64> {
        let px = self.pixel_sum();
        match self.method {
            AttributionMethod::GradCam => px.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            AttributionMethod::IntegratedGradients => {
                let max = px.iter().copied().fold(0.0, f64::max);
                if max > 0.0 {
                    px.iter().map(|&v| (v / max).max(0.0)).collect()
                } else {
                    vec![0.0; px.len()]
                }
            }
        }
    }

    /// Single-channel raster of [`pixel_sum`](Self::pixel_sum).
    pub fn to_grid(&self) -> Result<RasterGrid> {
        let values = self.pixel_sum().into_iter().map(|v| v as f32).collect();
        let mut g = RasterGrid::new(self.rows, self.cols, 1, values, 1.0)?;
        let attrs = g.attrs_mut();
        attrs.insert("method".into(), serde_json::to_value(self.method)?);
        attrs.insert("target_class".into(), self.target_class.into());
        attrs.insert("normalization".into(), self.normalization.clone().into());
        if let Some(id) = &self.sample_id {
            attrs.insert("sample_id".into(), id.clone().into());
        }
        Ok(g)
    }
}

fn single_item(x: &Tensor4) -> Result<()> {
    if x.n != 1 {
        return Err(Error::shape(format!("attribution expects one image, got {}", x.n)));
    }
    Ok(())
}

/// Integrated Gradients from `baseline` to `x` with the midpoint rule over
/// `steps` points. Only the positive class is supported: a black baseline
/// carries no meaning for the negative class.
pub fn integrated_gradients(
    scorer: &dyn Scorer,
    x: &Tensor4,
    baseline: &Tensor4,
    steps: usize,
    target_class: usize,
) -> Result<AttributionMap> {
    single_item(x)?;
    if x.shape() != baseline.shape() {
        return Err(Error::shape("input and baseline differ in shape"));
    }
    if steps == 0 {
        return Err(Error::invalid("at least one integration step is required"));
    }
    if target_class != POSITIVE_CLASS {
        return Err(Error::invalid(
            "integrated gradients are only defined for the positive class with a black baseline",
        ));
    }
    let len = x.item_len();
    let diff: Vec<f64> = x.data.iter().zip(&baseline.data).map(|(a, b)| a - b).collect();
    // Neumaier-compensated sum of the path gradients.
    let mut sum = vec![0.0; len];
    let mut comp = vec![0.0; len];
    let mut k = 0;
    while k < steps {
        let chunk = IG_CHUNK.min(steps - k);
        let mut path = Tensor4::zeros(chunk, x.h, x.w, x.c);
        for (j, item) in path.data.chunks_exact_mut(len).enumerate() {
            let alpha = ((k + j) as f64 + 0.5) / steps as f64;
            for ((p, &b), &d) in item.iter_mut().zip(&baseline.data).zip(&diff) {
                *p = b + alpha * d;
            }
        }
        let (_, g) = scorer.score_and_grad(&path, target_class)?;
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        for item in g.data.chunks_exact(len) {
            for ((s, c), &v) in sum.iter_mut().zip(comp.iter_mut()).zip(item) {
                let t = *s + v;
                *c += if s.abs() >= v.abs() { (*s - t) + v } else { (v - t) + *s };
                *s = t;
            }
        }
        k += chunk;
    }
    let values = diff
        .iter()
        .zip(sum.iter().zip(&comp))
        .map(|(&d, (&s, &c))| d * ((s + c) / steps as f64))
        .collect();
    Ok(AttributionMap {
        method: AttributionMethod::IntegratedGradients,
        rows: x.h,
        cols: x.w,
        channels: x.c,
        values,
        target_class,
        normalization: format!("raw logit attribution, midpoint rule, {steps} steps"),
        sample_id: None,
    })
}

/// `ReLU(Σ_k α_k A^k)` with `α_k` the spatial mean of the gradient of
/// channel `k`. Both tensors hold one item.
pub fn gradcam_raw(activations: &Tensor4, gradients: &Tensor4) -> Result<Vec<f64>> {
    single_item(activations)?;
    if activations.shape() != gradients.shape() {
        return Err(Error::shape("activations and gradients differ in shape"));
    }
    let k = activations.c;
    let cells = activations.h * activations.w;
    let mut alpha = vec![0.0; k];
    for px in gradients.data.chunks_exact(k) {
        for (a, &g) in alpha.iter_mut().zip(px) {
            *a += g;
        }
    }
    alpha.iter_mut().for_each(|a| *a /= cells as f64);
    Ok(activations
        .data
        .chunks_exact(k)
        .map(|px| px.iter().zip(&alpha).map(|(a, w)| a * w).sum::<f64>().max(0.0))
        .collect())
}

/// Bilinear resize of a single-channel map, sampling at pixel centres and
/// clamping at the border.
pub fn upsample_bilinear(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_h * out_w);
    let coord = |i: usize, n_in: usize, n_out: usize| {
        let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), s - i0 as f64)
    };
    for r in 0..out_h {
        let (r0, r1, fy) = coord(r, h, out_h);
        for c in 0..out_w {
            let (c0, c1, fx) = coord(c, w, out_w);
            let top = map[r0 * w + c0] * (1.0 - fx) + map[r0 * w + c1] * fx;
            let bottom = map[r1 * w + c0] * (1.0 - fx) + map[r1 * w + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Min-max scaling to `[0, 1]`; a constant map becomes all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    for v in values.iter_mut() {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
    }
}

/// Resolves a layer name (`block0` .. `block{n-1}`, or `last`) to a
/// residual block index.
pub fn resolve_layer(name: Option<&str>, n_blocks: usize) -> Result<usize> {
    match name {
        None | Some("last") => Ok(n_blocks - 1),
        Some(s) => s
            .strip_prefix("block")
            .and_then(|i| i.parse::<usize>().ok())
            .filter(|&i| i < n_blocks)
            .ok_or_else(|| Error::LayerNotFound(s.to_string())),
    }
}

/// Grad-CAM on a residual block output (the last block by default),
/// upsampled to the input size and min-max normalised.
pub fn gradcam(
    params: &NetworkParams,
    config: &ModelConfig,
    x: &Tensor4,
    layer: Option<&str>,
    target_class: usize,
) -> Result<AttributionMap> {
    single_item(x)?;
    if target_class >= NUM_CLASSES {
        return Err(Error::invalid(format!("class {target_class} does not exist")));
    }
    let block = resolve_layer(layer, config.n_blocks)?;
    let cache = model::model_forward(x, params, config, Mode::Infer)?;
    let grads = model::model_backward(&cache, params, config, &one_hot_dlogits(1, target_class));
    let acts = &cache.blocks[block].output;
    let dact = &grads.block_outputs[block];
    if dact.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let raw = gradcam_raw(acts, dact)?;
    let mut values = upsample_bilinear(&raw, acts.h, acts.w, x.h, x.w);
    min_max_normalize(&mut values);
    Ok(AttributionMap {
        method: AttributionMethod::GradCam,
        rows: x.h,
        cols: x.w,
        channels: 1,
        values,
        target_class,
        normalization: format!("block{block}, relu, bilinear upsampling, min-max to [0, 1]"),
        sample_id: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlayStyle {
    IgGreen,
    CamHeat,
}

impl OverlayStyle {
    pub fn for_method(method: AttributionMethod) -> Self {
        match method {
            AttributionMethod::IntegratedGradients => Self::IgGreen,
            AttributionMethod::GradCam => Self::CamHeat,
        }
    }
}

/// Jet colormap on `[0, 1]`.
pub fn jet(a: f64) -> [f64; 3] {
    let ch = |centre: f64| (1.5 - (4.0 * a - centre).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Blends `base` with the style colour weighted by `OVERLAY_ALPHA · a`.
pub fn overlay(base: &RasterGrid, weights: &[f64], style: OverlayStyle) -> Result<RasterGrid> {
    if base.channels() != 3 {
        return Err(Error::shape("overlay base must be RGB"));
    }
    if weights.len() != base.rows() * base.cols() {
        return Err(Error::shape("attribution and base image differ in size"));
    }
    let mut out = base.clone();
    for (px, &a) in out.values_mut().chunks_exact_mut(3).zip(weights) {
        let a = a.clamp(0.0, 1.0);
        let colour = match style {
            OverlayStyle::IgGreen => [0.0, 1.0, 0.0],
            OverlayStyle::CamHeat => jet(a),
        };
        for (v, c) in px.iter_mut().zip(colour) {
            let b = if v.is_nan() { 0.0 } else { *v as f64 };
            *v = (b * (1.0 - OVERLAY_ALPHA * a) + c * OVERLAY_ALPHA * a) as f32;
        }
    }
    Ok(out)
}

pub fn emit_overlay(base: &RasterGrid, map: &AttributionMap, style: OverlayStyle, path: impl AsRef<Path>) -> Result<()> {
    if (map.rows, map.cols) != (base.rows(), base.cols()) {
        return Err(Error::shape("attribution and base image differ in size"));
    }
    write_rgb_png(&overlay(base, &map.display_values(), style)?, path)
}

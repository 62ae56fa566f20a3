//! Browser bindings for three demo operations: a synthetic SAR composite,
//! an augmentation preview and candidate detection on a synthetic
//! sea-level-pressure field. Images are returned as RGBA bytes.

use mesocyclone_core::augment::{augment, AugmentParams};
use mesocyclone_core::cyclone::{detect_candidates, AoiRecord, DetectParams, SlpField};
use mesocyclone_core::synth::{gen_image, VortexParams};
use mesocyclone_core::RasterGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Grid of the SLP demo field (0.25° cells).
pub const SLP_ROWS: usize = 80;
pub const SLP_COLS: usize = 160;

fn js_err(e: mesocyclone_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// RGB values in `[0, 1]` to opaque RGBA bytes.
pub fn rgba(grid: &RasterGrid) -> Vec<u8> {
    grid.values()
        .chunks_exact(grid.channels())
        .flat_map(|px| {
            let c = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            match px {
                [g] => [c(*g), c(*g), c(*g), 255],
                [r, g, b, ..] => [c(*r), c(*g), c(*b), 255],
                _ => [0, 0, 0, 255],
            }
        })
        .collect()
}

pub fn synth_rgb(seed: u64, side: usize, positive: bool) -> mesocyclone_core::Result<RasterGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(gen_image(&VortexParams::default(), side, positive, &mut rng)?.composite.rgb)
}

/// Synthetic dual-polarisation composite, `side × side` RGBA.
#[wasm_bindgen]
pub fn synth_image(seed: u64, side: usize, positive: bool) -> Result<Vec<u8>, JsError> {
    synth_rgb(seed, side, positive).map(|g| rgba(&g)).map_err(js_err)
}

pub fn augmented_rgb(seed: u64, side: usize, draw: u64) -> mesocyclone_core::Result<RasterGrid> {
    let image = synth_rgb(seed, side, true)?;
    let params = AugmentParams {
        crop_size: side,
        ..AugmentParams::default()
    };
    augment(&image, &params, &mut ChaCha8Rng::seed_from_u64(draw))
}

/// One random augmentation (`draw`) of the positive composite for `seed`.
#[wasm_bindgen]
pub fn augment_preview(seed: u64, side: usize, draw: u64) -> Result<Vec<u8>, JsError> {
    augmented_rgb(seed, side, draw).map(|g| rgba(&g)).map_err(js_err)
}

/// Smooth pressure field with a few lows of random depth and width.
pub fn demo_slp(seed: u64) -> mesocyclone_core::Result<SlpField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slp: Vec<f64> = (0..SLP_ROWS * SLP_COLS)
        .map(|k| 101_000.0 + 8.0 * (k / SLP_COLS) as f64 + rng.gen_range(-40.0..40.0))
        .collect();
    for _ in 0..rng.gen_range(3..8) {
        let (ci, cj) = (rng.gen_range(0.0..SLP_ROWS as f64), rng.gen_range(0.0..SLP_COLS as f64));
        let (depth, sigma) = (rng.gen_range(200.0..1500.0), rng.gen_range(1.0..8.0));
        for (k, v) in slp.iter_mut().enumerate() {
            let d2 = ((k / SLP_COLS) as f64 - ci).powi(2) + ((k % SLP_COLS) as f64 - cj).powi(2);
            *v -= depth * (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let mut field = SlpField::regular(75.0, -20.0, 0.25, SLP_ROWS, SLP_COLS, slp)?;
    field.cyclic_lon = false;
    Ok(field)
}

/// Pressure map (blue low, white high) with detected cells in red.
pub fn detection_rgba(field: &SlpField, aois: &[mesocyclone_core::cyclone::CandidateAoi]) -> Vec<u8> {
    let (lo, hi) = field
        .slp
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1.0);
    let mut out: Vec<u8> = field
        .slp
        .iter()
        .flat_map(|&v| {
            let t = ((v - lo) / span * 255.0).round() as u8;
            [t, t, 255, 255]
        })
        .collect();
    for aoi in aois {
        for &(i, j) in &aoi.cells {
            let k = 4 * (i * field.nlon() + j);
            out[k..k + 4].copy_from_slice(&[220, 30, 30, 255]);
        }
    }
    out
}

pub fn detect_records(seed: u64, threshold_pa: f64, max_radius_km: f64) -> mesocyclone_core::Result<(SlpField, Vec<AoiRecord>, Vec<u8>)> {
    let field = demo_slp(seed)?;
    let params = DetectParams {
        threshold_pa,
        max_radius_km,
        ..DetectParams::default()
    };
    let aois = detect_candidates(&field, &params)?;
    let image = detection_rgba(&field, &aois);
    Ok((field, aois.iter().map(|a| a.record()).collect(), image))
}

/// Detection result: the rendered field and the AOI records as JSON lines.
#[wasm_bindgen]
pub struct Detection {
    image: Vec<u8>,
    records: String,
    count: usize,
}

#[wasm_bindgen]
impl Detection {
    #[wasm_bindgen(getter)]
    pub fn image(&self) -> Vec<u8> {
        self.image.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn records(&self) -> String {
        self.records.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn count(&self) -> usize {
        self.count
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        SLP_COLS
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        SLP_ROWS
    }
}

#[wasm_bindgen]
pub fn detect_demo(seed: u64, threshold_pa: f64, max_radius_km: f64) -> Result<Detection, JsError> {
    let (_, records, image) = detect_records(seed, threshold_pa, max_radius_km).map_err(js_err)?;
    let lines: Vec<String> = records
        .iter()
        .map(|r| serde_json::to_string(r).map_err(|e| JsError::new(&e.to_string())))
        .collect::<Result<_, _>>()?;
    Ok(Detection {
        image,
        count: records.len(),
        records: lines.join("\n"),
    })
}

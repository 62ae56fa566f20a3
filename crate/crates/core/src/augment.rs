//! Random geometric augmentation for training images.
//!
//! Translation, flips, rotation and zoom are drawn per image, composed into
//! a single affine map about the image centre and applied with one bilinear
//! resampling pass. Pixels whose source falls outside the input are zero.
//! The result is centre-cropped to `crop_size`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{center_offset, RasterGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Maximum shift per axis as a fraction of the image side.
    pub max_translate_frac: f64,
    pub max_rotate_deg: f64,
    pub zoom_range: (f64, f64),
    pub flip_h: bool,
    pub flip_v: bool,
    pub crop_size: usize,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            max_translate_frac: 0.10,
            max_rotate_deg: 40.0,
            zoom_range: (0.9, 1.1),
            flip_h: true,
            flip_v: true,
            crop_size: 512,
            seed: 0,
        }
    }
}

impl AugmentParams {
    /// No-op transform; only the centre crop remains.
    pub fn identity(crop_size: usize) -> Self {
        Self {
            max_translate_frac: 0.0,
            max_rotate_deg: 0.0,
            zoom_range: (1.0, 1.0),
            flip_h: false,
            flip_v: false,
            crop_size,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_translate_frac) {
            return Err(Error::invalid("translation fraction must lie in [0, 1]"));
        }
        if !(0.0..360.0).contains(&self.max_rotate_deg) {
            return Err(Error::invalid("rotation must lie in [0, 360)"));
        }
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0) {
            return Err(Error::invalid("zoom range must be positive and straddle 1"));
        }
        if self.crop_size == 0 {
            return Err(Error::invalid("crop size must be positive"));
        }
        Ok(())
    }
}

/// One concrete draw of the random transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineDraw {
    /// Shift in pixels along columns (x) and rows (y).
    pub tx: f64,
    pub ty: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub rotate_deg: f64,
    pub zoom: f64,
}

impl AffineDraw {
    pub const IDENTITY: AffineDraw = AffineDraw {
        tx: 0.0,
        ty: 0.0,
        flip_h: false,
        flip_v: false,
        rotate_deg: 0.0,
        zoom: 1.0,
    };

    pub fn sample<R: Rng + ?Sized>(params: &AugmentParams, side: usize, rng: &mut R) -> Self {
        let max_shift = params.max_translate_frac * side as f64;
        let tx = rng.gen_range(-1.0..=1.0) * max_shift;
        let ty = rng.gen_range(-1.0..=1.0) * max_shift;
        let flip_h = rng.gen_bool(0.5) && params.flip_h;
        let flip_v = rng.gen_bool(0.5) && params.flip_v;
        let magnitude = rng.gen_range(0.0..=1.0) * params.max_rotate_deg;
        let rotate_deg = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
        let (lo, hi) = params.zoom_range;
        let zoom = lo + rng.gen_range(0.0..=1.0) * (hi - lo);
        Self {
            tx,
            ty,
            flip_h,
            flip_v,
            rotate_deg,
            zoom,
        }
    }

    /// Maps an output position (row, col) back to its source position in a
    /// frame of the given side length.
    pub fn source_of(&self, side: usize, row: f64, col: f64) -> (f64, f64) {
        let c = (side as f64 - 1.0) / 2.0;
        let (y, x) = (row - c - self.ty, col - c - self.tx);
        let (s, co) = self.rotate_deg.to_radians().sin_cos();
        // inverse rotation
        let xr = co * x + s * y;
        let yr = -s * x + co * y;
        let (mut xs, mut ys) = (xr / self.zoom, yr / self.zoom);
        if self.flip_h {
            xs = -xs;
        }
        if self.flip_v {
            ys = -ys;
        }
        (ys + c, xs + c)
    }

    /// Maps a source position forward into the output frame.
    pub fn target_of(&self, side: usize, row: f64, col: f64) -> (f64, f64) {
        let c = (side as f64 - 1.0) / 2.0;
        let (mut y, mut x) = (row - c, col - c);
        if self.flip_h {
            x = -x;
        }
        if self.flip_v {
            y = -y;
        }
        let (x, y) = (x * self.zoom, y * self.zoom);
        let (s, co) = self.rotate_deg.to_radians().sin_cos();
        let xr = co * x - s * y;
        let yr = s * x + co * y;
        (yr + c + self.ty, xr + c + self.tx)
    }
}

fn check_input(image: &RasterGrid, crop_size: usize) -> Result<()> {
    if image.rows() != image.cols() {
        return Err(Error::shape(format!(
            "augmentation expects a square image, got {}x{}",
            image.rows(),
            image.cols()
        )));
    }
    if image.rows() < crop_size {
        return Err(Error::shape(format!(
            "image side {} is smaller than crop size {crop_size}",
            image.rows()
        )));
    }
    Ok(())
}

/// Applies a fixed transform and crops the centre `crop_size` window.
pub fn apply_transform(image: &RasterGrid, draw: &AffineDraw, crop_size: usize) -> Result<RasterGrid> {
    check_input(image, crop_size)?;
    let side = image.rows();
    let ch = image.channels();
    let off = center_offset(side, crop_size) as f64;
    let max = (side - 1) as f64;
    let mut values = vec![0.0f32; crop_size * crop_size * ch];
    for i in 0..crop_size {
        for j in 0..crop_size {
            let (y, x) = draw.source_of(side, off + i as f64, off + j as f64);
            if !(0.0..=max).contains(&y) || !(0.0..=max).contains(&x) {
                continue;
            }
            let r0 = y.floor() as usize;
            let c0 = x.floor() as usize;
            let r1 = (r0 + 1).min(side - 1);
            let c1 = (c0 + 1).min(side - 1);
            let (fy, fx) = (y - r0 as f64, x - c0 as f64);
            let w = [
                (r0, c0, (1.0 - fy) * (1.0 - fx)),
                (r0, c1, (1.0 - fy) * fx),
                (r1, c0, fy * (1.0 - fx)),
                (r1, c1, fy * fx),
            ];
            let base = (i * crop_size + j) * ch;
            for k in 0..ch {
                let mut acc = 0.0f64;
                for &(r, c, wt) in &w {
                    if wt == 0.0 {
                        continue;
                    }
                    let v = image.get(r, c, k);
                    if !v.is_nan() {
                        acc += wt * v as f64;
                    }
                }
                values[base + k] = acc as f32;
            }
        }
    }
    let mut out = RasterGrid::new(crop_size, crop_size, ch, values, image.pixel_spacing_m())?;
    out.attrs = image.attrs.clone();
    Ok(out)
}

/// Draws a random transform from `rng` and applies it.
pub fn augment<R: Rng + ?Sized>(image: &RasterGrid, params: &AugmentParams, rng: &mut R) -> Result<RasterGrid> {
    params.validate()?;
    check_input(image, params.crop_size)?;
    let draw = AffineDraw::sample(params, image.rows(), rng);
    apply_transform(image, &draw, params.crop_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::center_crop;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_image(side: usize) -> RasterGrid {
        RasterGrid::from_fn(side, side, 3, 500.0, |r, c, k| {
            ((r * 7 + c * 3 + k * 11) % 97) as f32 / 96.0
        })
        .unwrap()
    }

    #[test]
    fn identity_is_centre_crop() {
        let img = test_image(40);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&img, &AugmentParams::identity(32), &mut rng).unwrap();
        assert!(out.bit_eq(&center_crop(&img, 32).unwrap()));
    }

    #[test]
    fn horizontal_flip_mirrors_columns() {
        let img = test_image(40);
        let draw = AffineDraw {
            flip_h: true,
            ..AffineDraw::IDENTITY
        };
        let id = apply_transform(&img, &AffineDraw::IDENTITY, 32).unwrap();
        let flipped = apply_transform(&img, &draw, 32).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                for k in 0..3 {
                    assert_eq!(flipped.get(r, c, k), id.get(r, 31 - c, k));
                }
            }
        }
    }

    #[test]
    fn forward_and_inverse_maps_agree() {
        let draw = AffineDraw {
            tx: 3.5,
            ty: -2.0,
            flip_h: true,
            flip_v: false,
            rotate_deg: 27.0,
            zoom: 1.07,
        };
        let (y, x) = draw.target_of(64, 10.0, 50.0);
        let (ys, xs) = draw.source_of(64, y, x);
        assert!((ys - 10.0).abs() < 1e-9 && (xs - 50.0).abs() < 1e-9);
    }

    #[test]
    fn draws_stay_in_range() {
        let params = AugmentParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let d = AffineDraw::sample(&params, 800, &mut rng);
            assert!(d.tx.abs() <= 80.0 && d.ty.abs() <= 80.0);
            assert!(d.rotate_deg.abs() <= 40.0);
            assert!((0.9..=1.1).contains(&d.zoom));
        }
    }

    #[test]
    fn rejects_small_or_non_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = test_image(16);
        assert!(augment(&img, &AugmentParams::identity(32), &mut rng).is_err());
        let rect = RasterGrid::filled(16, 20, 3, 0.0, 1.0).unwrap();
        assert!(augment(&rect, &AugmentParams::identity(8), &mut rng).is_err());
    }
}

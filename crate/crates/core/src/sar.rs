//! Backscatter rescaling and RGB composition.
//!
//! Each polarisation channel (dB) is mapped to `[0, 1]` between its 2nd and
//! 98th percentiles, with both percentiles clipped to fixed dB ranges so the
//! scaling stays comparable between images. Scaled channels are combined as
//! R = G = (co + cross) / 2, B = co for dual polarisation and grey for
//! single polarisation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RasterGrid;

pub const LOW_PERCENTILE: f64 = 2.0;
pub const HIGH_PERCENTILE: f64 = 98.0;
pub const LOW_CLIP_DB: (f64, f64) = (-25.0, -15.0);
pub const HIGH_CLIP_DB: (f64, f64) = (-10.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolMode {
    Single,
    Dual,
}

#[derive(Clone, Debug)]
pub struct PolChannels {
    /// Co-polarised channel (HH or VV).
    pub co: RasterGrid,
    /// Cross-polarised channel (HV or VH).
    pub cross: Option<RasterGrid>,
    pub pol_labels: Vec<String>,
}

impl PolChannels {
    pub fn single(co: RasterGrid) -> Self {
        Self {
            co,
            cross: None,
            pol_labels: Vec::new(),
        }
    }

    pub fn dual(co: RasterGrid, cross: RasterGrid) -> Self {
        Self {
            co,
            cross: Some(cross),
            pol_labels: Vec::new(),
        }
    }

    pub fn pol_mode(&self) -> PolMode {
        if self.cross.is_some() {
            PolMode::Dual
        } else {
            PolMode::Single
        }
    }
}

#[derive(Clone, Debug)]
pub struct RgbComposite {
    /// Three channels, every value in `[0, 1]`; nodata pixels hold 0.
    pub rgb: RasterGrid,
    /// True where any source channel had no data. Row-major.
    pub nodata_mask: Vec<bool>,
}

impl RgbComposite {
    /// 8-bit RGB preview bytes (value·255, rounded).
    pub fn preview_bytes(&self) -> Vec<u8> {
        self.rgb.values().iter().map(|&v| to_u8(v as f64)).collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rgb_png(&self.rgb, path)
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn write_rgb_png(rgb: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    if rgb.channels() != 3 {
        return Err(Error::shape("PNG preview needs three channels"));
    }
    let bytes: Vec<u8> = rgb.values().iter().map(|&v| to_u8(v as f64)).collect();
    image::save_buffer(
        path,
        &bytes,
        rgb.cols() as u32,
        rgb.rows() as u32,
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(())
}

/// Percentile of already sorted values, interpolating linearly between
/// order statistics at rank `p/100 · (n − 1)`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// The clipped (p2, p98) pair used to rescale one dB channel.
pub fn scaling_bounds(channel: &RasterGrid) -> Result<(f64, f64)> {
    let mut valid: Vec<f64> = channel
        .values()
        .iter()
        .filter(|v| !v.is_nan())
        .map(|&v| v as f64)
        .collect();
    if valid.is_empty() {
        return Err(Error::AllNodata);
    }
    valid.sort_unstable_by(|a, b| a.total_cmp(b));
    let low = percentile_sorted(&valid, LOW_PERCENTILE).clamp(LOW_CLIP_DB.0, LOW_CLIP_DB.1);
    let high = percentile_sorted(&valid, HIGH_PERCENTILE).clamp(HIGH_CLIP_DB.0, HIGH_CLIP_DB.1);
    Ok((low, high))
}

fn scale_channel(channel: &RasterGrid, nodata: f32) -> Result<RasterGrid> {
    if channel.channels() != 1 {
        return Err(Error::shape("percentile scaling expects a single channel"));
    }
    let (low, high) = scaling_bounds(channel)?;
    let mut out = channel.clone();
    for v in out.values_mut() {
        *v = if v.is_nan() {
            nodata
        } else {
            ((*v as f64 - low) / (high - low)).clamp(0.0, 1.0) as f32
        };
    }
    Ok(out)
}

/// Rescales a dB channel to `[0, 1]`; nodata pixels become 0.
pub fn percentile_scale(channel: &RasterGrid) -> Result<RasterGrid> {
    scale_channel(channel, 0.0)
}

/// Composes already scaled channels. NaN in either input marks nodata and
/// yields 0 in all three output channels.
pub fn rgb_compose(channels: &PolChannels) -> Result<RgbComposite> {
    let co = &channels.co;
    if co.channels() != 1 {
        return Err(Error::shape("co-polarised channel must be single-channel"));
    }
    if let Some(cross) = &channels.cross {
        if (cross.rows(), cross.cols(), cross.channels()) != (co.rows(), co.cols(), 1) {
            return Err(Error::shape(format!(
                "cross channel {}x{}x{} does not match co channel {}x{}x1",
                cross.rows(),
                cross.cols(),
                cross.channels(),
                co.rows(),
                co.cols()
            )));
        }
    }
    let n = co.rows() * co.cols();
    let mut values = Vec::with_capacity(n * 3);
    let mut mask = Vec::with_capacity(n);
    for k in 0..n {
        let c = co.values()[k];
        let x = channels.cross.as_ref().map(|g| g.values()[k]);
        let missing = c.is_nan() || x.is_some_and(|x| x.is_nan());
        mask.push(missing);
        if missing {
            values.extend_from_slice(&[0.0; 3]);
            continue;
        }
        let (rg, b) = match x {
            Some(x) => ((c + x) / 2.0, c),
            None => (c, c),
        };
        values.extend_from_slice(&[rg, rg, b]);
    }
    let mut rgb = RasterGrid::new(co.rows(), co.cols(), 3, values, co.pixel_spacing_m())?;
    rgb.geo = co.geo.clone();
    if !channels.pol_labels.is_empty() {
        rgb.attrs.insert(
            "pol_labels".into(),
            serde_json::Value::from(channels.pol_labels.clone()),
        );
    }
    Ok(RgbComposite {
        rgb,
        nodata_mask: mask,
    })
}

/// Rescales dB channels and composes them, keeping track of nodata.
pub fn compose_from_db(channels: &PolChannels) -> Result<RgbComposite> {
    let scaled = PolChannels {
        co: scale_channel(&channels.co, f32::NAN)?,
        cross: channels
            .cross
            .as_ref()
            .map(|c| scale_channel(c, f32::NAN))
            .transpose()?,
        pol_labels: channels.pol_labels.clone(),
    };
    rgb_compose(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f32]) -> RasterGrid {
        RasterGrid::new(1, values.len(), 1, values.to_vec(), 500.0).unwrap()
    }

    /// 101 evenly spaced values from `lo` to `hi`: the p-th percentile is
    /// exactly `lo + p/100·(hi − lo)` under linear interpolation.
    fn ramp(lo: f32, hi: f32) -> Vec<f32> {
        (0..=100).map(|k| lo + (hi - lo) * k as f32 / 100.0).collect()
    }

    #[test]
    fn percentile_oracle() {
        let v: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        assert_eq!(percentile_sorted(&v, 2.0), 2.0);
        assert_eq!(percentile_sorted(&v, 98.0), 98.0);
        assert_eq!(percentile_sorted(&[1.0, 3.0], 50.0), 2.0);
    }

    #[test]
    fn scales_inside_clip_ranges() {
        // Ramp with step 0.15625 dB: p2 = -20 and p98 = -5 fall on samples
        // 2 and 98, and sample 50 is -12.5.
        let g = row(&ramp(-20.3125, -4.6875));
        let (lo, hi) = scaling_bounds(&g).unwrap();
        assert_eq!((lo, hi), (-20.0, -5.0));
        let out = percentile_scale(&g).unwrap();
        let v = out.values();
        assert_eq!(g.values()[2], -20.0);
        assert_eq!(g.values()[50], -12.5);
        assert_eq!(g.values()[98], -5.0);
        assert_eq!(v[2], 0.0);
        assert_eq!(v[50], 0.5);
        assert_eq!(v[98], 1.0);
        assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn low_percentile_clipped_to_minus_25() {
        let g = row(&ramp(-30.3125, -4.6875));
        let (lo, _) = scaling_bounds(&g).unwrap();
        assert_eq!(lo, -25.0);
    }

    #[test]
    fn single_valid_pixel() {
        let mut v = vec![f32::NAN; 9];
        v[4] = -12.0;
        // Both percentiles equal -12 and clamp to -15 and -10: (-12 + 15) / 5.
        let out = percentile_scale(&RasterGrid::new(3, 3, 1, v, 1.0).unwrap()).unwrap();
        assert!((out.values()[4] - 0.6).abs() < 1e-6);
        for (k, x) in out.values().iter().enumerate() {
            if k != 4 {
                assert_eq!(*x, 0.0);
            }
        }
    }

    #[test]
    fn all_nan_rejected() {
        let g = RasterGrid::filled(2, 2, 1, f32::NAN, 1.0).unwrap();
        assert!(matches!(percentile_scale(&g), Err(Error::AllNodata)));
    }

    #[test]
    fn compose_dual_and_single() {
        let co = row(&[0.8, 0.3, 0.0]);
        let cross = row(&[0.2, 0.3, 0.0]);
        let dual = rgb_compose(&PolChannels::dual(co.clone(), cross)).unwrap();
        let px = |c: &RgbComposite, k: usize| {
            let v = c.rgb.values();
            (v[3 * k], v[3 * k + 1], v[3 * k + 2])
        };
        let (r, g, b) = px(&dual, 0);
        assert!((r - 0.5).abs() < 1e-7 && (g - 0.5).abs() < 1e-7 && (b - 0.8).abs() < 1e-7);
        assert_eq!(px(&dual, 1), (0.3, 0.3, 0.3));
        assert_eq!(px(&dual, 2), (0.0, 0.0, 0.0));

        let single = rgb_compose(&PolChannels::single(co)).unwrap();
        assert_eq!(px(&single, 1), (0.3, 0.3, 0.3));
    }

    #[test]
    fn compose_shape_mismatch() {
        let co = row(&[0.1, 0.2]);
        let cross = row(&[0.1, 0.2, 0.3]);
        assert!(rgb_compose(&PolChannels::dual(co, cross)).is_err());
    }

    #[test]
    fn compose_from_db_tracks_nodata() {
        let co = row(&[-20.0, f32::NAN, -5.0, -12.0]);
        let cross = row(&[-24.0, -22.0, f32::NAN, -18.0]);
        let rgb = compose_from_db(&PolChannels::dual(co, cross)).unwrap();
        assert_eq!(rgb.nodata_mask, vec![false, true, true, false]);
        assert!(rgb.rgb.values()[3..9].iter().all(|&v| v == 0.0));
        assert!(rgb.rgb.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

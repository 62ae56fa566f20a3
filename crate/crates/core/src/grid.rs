//! Raster container shared by every stage of the pipeline, plus the `.pgrid`
//! binary format and the resampling primitives (multi-look averaging,
//! bilinear downsampling, centre cropping).
//!
//! Values are stored as `f32` in row-major, channel-minor order. Nodata is
//! encoded exclusively as NaN.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PGRID_MAGIC: [u8; 4] = *b"PGRD";
pub const PGRID_VERSION: u8 = 1;
pub const PGRID_HEADER_LEN: usize = 16;

/// Georeferencing of the top-left pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeoRef {
    Utm {
        easting0: f64,
        northing0: f64,
        utm_zone: i32,
    },
    Geodetic {
        lat0: f64,
        lon0: f64,
        cell_deg: f64,
        /// Rows run south to north when set. Reanalysis grids usually run
        /// north to south.
        #[serde(default)]
        lat_ascending: bool,
    },
}

#[derive(Clone, Debug)]
pub struct RasterGrid {
    rows: usize,
    cols: usize,
    channels: usize,
    values: Vec<f32>,
    pixel_spacing_m: f64,
    pub geo: Option<GeoRef>,
    /// Free-form metadata carried through the trailing JSON block
    /// (timestamps, polarisation labels, sample ids).
    pub attrs: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct PgridMeta {
    pixel_spacing_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geo: Option<GeoRef>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attrs: BTreeMap<String, serde_json::Value>,
}

impl RasterGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        channels: usize,
        values: Vec<f32>,
        pixel_spacing_m: f64,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "dimensions must be positive, got {rows}x{cols}x{channels}"
            )));
        }
        if values.len() != rows * cols * channels {
            return Err(Error::shape(format!(
                "expected {} values for {rows}x{cols}x{channels}, got {}",
                rows * cols * channels,
                values.len()
            )));
        }
        if !(pixel_spacing_m > 0.0 && pixel_spacing_m.is_finite()) {
            return Err(Error::invalid(format!(
                "pixel spacing must be positive, got {pixel_spacing_m}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            values,
            pixel_spacing_m,
            geo: None,
            attrs: BTreeMap::new(),
        })
    }

    pub fn filled(
        rows: usize,
        cols: usize,
        channels: usize,
        value: f32,
        pixel_spacing_m: f64,
    ) -> Result<Self> {
        Self::new(
            rows,
            cols,
            channels,
            vec![value; rows * cols * channels],
            pixel_spacing_m,
        )
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        channels: usize,
        pixel_spacing_m: f64,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols * channels);
        for r in 0..rows {
            for c in 0..cols {
                for ch in 0..channels {
                    values.push(f(r, c, ch));
                }
            }
        }
        Self::new(rows, cols, channels, values, pixel_spacing_m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_spacing_m(&self) -> f64 {
        self.pixel_spacing_m
    }

    pub fn attrs(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.attrs
    }

    pub fn attrs_mut(&mut self) -> &mut BTreeMap<String, serde_json::Value> {
        &mut self.attrs
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.cols + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.values[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f32) {
        let i = self.index(row, col, channel);
        self.values[i] = value;
    }

    /// Copies geo and attrs from `other`; used when deriving a grid.
    fn with_meta_of(mut self, other: &RasterGrid) -> Self {
        self.geo = other.geo.clone();
        self.attrs = other.attrs.clone();
        self
    }

    /// Extracts one channel as a single-channel grid.
    pub fn channel(&self, channel: usize) -> Result<RasterGrid> {
        if channel >= self.channels {
            return Err(Error::shape(format!(
                "channel {channel} out of range for {} channels",
                self.channels
            )));
        }
        let values = self
            .values
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect();
        Ok(RasterGrid::new(self.rows, self.cols, 1, values, self.pixel_spacing_m)?.with_meta_of(self))
    }

    /// Bitwise equality of values (NaN payloads included) and metadata.
    pub fn bit_eq(&self, other: &RasterGrid) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.channels == other.channels
            && self.pixel_spacing_m.to_bits() == other.pixel_spacing_m.to_bits()
            && self.geo == other.geo
            && self.attrs == other.attrs
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn to_pgrid_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&PgridMeta {
            pixel_spacing_m: self.pixel_spacing_m,
            geo: self.geo.clone(),
            attrs: self.attrs.clone(),
        })?;
        let rows = u32::try_from(self.rows).map_err(|_| Error::shape("rows exceed u32"))?;
        let cols = u32::try_from(self.cols).map_err(|_| Error::shape("cols exceed u32"))?;
        let channels =
            u16::try_from(self.channels).map_err(|_| Error::shape("channels exceed u16"))?;

        let mut out =
            Vec::with_capacity(PGRID_HEADER_LEN + self.values.len() * 4 + 4 + meta.len());
        out.extend_from_slice(&PGRID_MAGIC);
        out.push(PGRID_VERSION);
        out.push(0);
        out.extend_from_slice(&rows.to_le_bytes());
        out.extend_from_slice(&cols.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_pgrid_bytes(bytes: &[u8]) -> Result<RasterGrid> {
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                expected: PGRID_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != PGRID_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < PGRID_HEADER_LEN {
            return Err(Error::Truncated {
                expected: PGRID_HEADER_LEN,
                found: bytes.len(),
            });
        }
        if bytes[4] != PGRID_VERSION {
            return Err(Error::VersionMismatch(bytes[4]));
        }
        let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let channels = u16::from_le_bytes(bytes[14..16].try_into().unwrap()) as usize;
        let n = rows * cols * channels;
        let data_end = PGRID_HEADER_LEN + n * 4;
        if bytes.len() < data_end {
            return Err(Error::Truncated {
                expected: data_end,
                found: bytes.len(),
            });
        }
        let values: Vec<f32> = bytes[PGRID_HEADER_LEN..data_end]
            .chunks_exact(4)
            .map(|b| f32::from_bits(u32::from_le_bytes(b.try_into().unwrap())))
            .collect();

        let rest = &bytes[data_end..];
        let meta = if rest.is_empty() {
            None
        } else {
            if rest.len() < 4 {
                return Err(Error::Truncated {
                    expected: data_end + 4,
                    found: bytes.len(),
                });
            }
            let len = u32::from_le_bytes(rest[0..4].try_into().unwrap()) as usize;
            if rest.len() < 4 + len {
                return Err(Error::Truncated {
                    expected: data_end + 4 + len,
                    found: bytes.len(),
                });
            }
            Some(serde_json::from_slice::<PgridMeta>(&rest[4..4 + len])?)
        };

        let spacing = meta.as_ref().map_or(1.0, |m| m.pixel_spacing_m);
        let mut grid = RasterGrid::new(rows, cols, channels, values, spacing)?;
        if let Some(meta) = meta {
            grid.geo = meta.geo;
            grid.attrs = meta.attrs;
        }
        Ok(grid)
    }
}

pub fn write_pgrid(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let bytes = grid.to_pgrid_bytes()?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgrid(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let bytes = fs::read(path)?;
    RasterGrid::from_pgrid_bytes(&bytes)
}

/// Nodata-aware `k`×`k` block mean (multi-looking). Trailing partial blocks
/// are dropped.
pub fn block_average(grid: &RasterGrid, k: usize) -> Result<RasterGrid> {
    if k == 0 {
        return Err(Error::invalid("block size must be at least 1"));
    }
    if k == 1 {
        return Ok(grid.clone());
    }
    let rows = grid.rows / k;
    let cols = grid.cols / k;
    if rows == 0 || cols == 0 {
        return Err(Error::shape(format!(
            "block size {k} exceeds grid extent {}x{}",
            grid.rows, grid.cols
        )));
    }
    let ch = grid.channels;
    let mut out = vec![f32::NAN; rows * cols * ch];
    let mut sum = vec![0.0f64; ch];
    let mut count = vec![0usize; ch];
    for r in 0..rows {
        for c in 0..cols {
            sum.iter_mut().for_each(|s| *s = 0.0);
            count.iter_mut().for_each(|n| *n = 0);
            for br in r * k..(r + 1) * k {
                for bc in c * k..(c + 1) * k {
                    let base = grid.index(br, bc, 0);
                    for (i, v) in grid.values[base..base + ch].iter().enumerate() {
                        if !v.is_nan() {
                            sum[i] += *v as f64;
                            count[i] += 1;
                        }
                    }
                }
            }
            let base = (r * cols + c) * ch;
            for i in 0..ch {
                if count[i] > 0 {
                    out[base + i] = (sum[i] / count[i] as f64) as f32;
                }
            }
        }
    }
    Ok(RasterGrid::new(rows, cols, ch, out, grid.pixel_spacing_m * k as f64)?.with_meta_of(grid))
}

/// Bilinear interpolation of channel `ch` at fractional pixel coordinates,
/// clamping to the border. NaN samples count as zero.
pub(crate) fn sample_bilinear_clamped(grid: &RasterGrid, y: f64, x: f64, ch: usize) -> f64 {
    let maxr = (grid.rows - 1) as f64;
    let maxc = (grid.cols - 1) as f64;
    let y = y.clamp(0.0, maxr);
    let x = x.clamp(0.0, maxc);
    let r0 = y.floor() as usize;
    let c0 = x.floor() as usize;
    let r1 = (r0 + 1).min(grid.rows - 1);
    let c1 = (c0 + 1).min(grid.cols - 1);
    let fy = y - r0 as f64;
    let fx = x - c0 as f64;
    let v = |r, c| {
        let v = grid.get(r, c, ch);
        if v.is_nan() {
            0.0
        } else {
            v as f64
        }
    };
    let top = v(r0, c0) * (1.0 - fx) + v(r0, c1) * fx;
    let bottom = v(r1, c0) * (1.0 - fx) + v(r1, c1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Downsamples by an integer factor (2 or 4) using bilinear interpolation
/// evaluated at output pixel centres.
pub fn bilinear_downsample(grid: &RasterGrid, factor: usize) -> Result<RasterGrid> {
    if factor != 2 && factor != 4 {
        return Err(Error::invalid(format!(
            "downsampling factor must be 2 or 4, got {factor}"
        )));
    }
    if grid.rows % factor != 0 || grid.cols % factor != 0 {
        return Err(Error::shape(format!(
            "factor {factor} does not divide grid extent {}x{}",
            grid.rows, grid.cols
        )));
    }
    let rows = grid.rows / factor;
    let cols = grid.cols / factor;
    let f = factor as f64;
    let out = RasterGrid::from_fn(
        rows,
        cols,
        grid.channels,
        grid.pixel_spacing_m * f,
        |r, c, ch| {
            let y = (r as f64 + 0.5) * f - 0.5;
            let x = (c as f64 + 0.5) * f - 0.5;
            sample_bilinear_clamped(grid, y, x, ch) as f32
        },
    )?;
    Ok(out.with_meta_of(grid))
}

/// Offset of a centred window of length `size` inside `extent`
/// (floor alignment when the remainder is odd).
pub fn center_offset(extent: usize, size: usize) -> usize {
    (extent - size) / 2
}

/// Extracts the `size`×`size` window centred on the grid. With an odd
/// remainder the extra row/column is left on the bottom/right.
pub fn center_crop(grid: &RasterGrid, size: usize) -> Result<RasterGrid> {
    if size == 0 || size > grid.rows || size > grid.cols {
        return Err(Error::shape(format!(
            "crop size {size} exceeds grid extent {}x{}",
            grid.rows, grid.cols
        )));
    }
    let r0 = center_offset(grid.rows, size);
    let c0 = center_offset(grid.cols, size);
    let ch = grid.channels;
    let mut values = Vec::with_capacity(size * size * ch);
    for r in r0..r0 + size {
        let start = grid.index(r, c0, 0);
        values.extend_from_slice(&grid.values[start..start + size * ch]);
    }
    Ok(RasterGrid::new(size, size, ch, values, grid.pixel_spacing_m)?.with_meta_of(grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: usize, cols: usize, ch: usize, v: &[f32]) -> RasterGrid {
        RasterGrid::new(rows, cols, ch, v.to_vec(), 500.0).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(RasterGrid::new(0, 1, 1, vec![], 1.0).is_err());
        assert!(RasterGrid::new(2, 2, 1, vec![0.0; 3], 1.0).is_err());
        assert!(RasterGrid::new(1, 1, 1, vec![0.0], 0.0).is_err());
    }

    #[test]
    fn pgrid_round_trip_single_zero() {
        let g = grid(1, 1, 1, &[0.0]);
        let back = RasterGrid::from_pgrid_bytes(&g.to_pgrid_bytes().unwrap()).unwrap();
        assert!(back.bit_eq(&g));
        assert_eq!(back.get(0, 0, 0), 0.0);
    }

    #[test]
    fn pgrid_round_trip_preserves_nan_position() {
        let mut v = vec![0.5f32; 12];
        v[7] = f32::NAN;
        let g = grid(2, 2, 3, &v);
        let back = RasterGrid::from_pgrid_bytes(&g.to_pgrid_bytes().unwrap()).unwrap();
        assert!(back.values()[7].is_nan());
        assert_eq!(back.values().iter().filter(|v| v.is_nan()).count(), 1);
    }

    #[test]
    fn pgrid_header_layout() {
        let g = grid(2, 3, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bytes = g.to_pgrid_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"PGRD");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 3);
        assert_eq!(u16::from_le_bytes(bytes[14..16].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(bytes[36..40].try_into().unwrap()), 6.0);
    }

    #[test]
    fn pgrid_payload_length_800x800x3() {
        let g = RasterGrid::filled(800, 800, 3, 0.25, 500.0).unwrap();
        let bytes = g.to_pgrid_bytes().unwrap();
        let payload = 16 + 800 * 800 * 3 * 4;
        assert_eq!(payload, 7_680_016);
        let meta_len = u32::from_le_bytes(bytes[payload..payload + 4].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), payload + 4 + meta_len);
    }

    #[test]
    fn pgrid_without_metadata_block_is_accepted() {
        let g = grid(1, 2, 1, &[3.0, 4.0]);
        let bytes = g.to_pgrid_bytes().unwrap();
        let bare = &bytes[..16 + 8];
        let back = RasterGrid::from_pgrid_bytes(bare).unwrap();
        assert_eq!(back.values(), &[3.0, 4.0]);
        assert_eq!(back.pixel_spacing_m(), 1.0);
    }

    #[test]
    fn pgrid_errors_are_distinct() {
        let g = grid(2, 2, 1, &[1.0; 4]);
        let bytes = g.to_pgrid_bytes().unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            RasterGrid::from_pgrid_bytes(&bad_magic),
            Err(Error::BadMagic(_))
        ));

        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(matches!(
            RasterGrid::from_pgrid_bytes(&bad_version),
            Err(Error::VersionMismatch(2))
        ));

        assert!(matches!(
            RasterGrid::from_pgrid_bytes(&bytes[..20]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            RasterGrid::from_pgrid_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn block_average_identity() {
        let g = grid(2, 3, 1, &[1.0, 2.0, 3.0, 4.0, f32::NAN, 6.0]);
        let out = block_average(&g, 1).unwrap();
        assert!(out.bit_eq(&g));
    }

    #[test]
    fn block_average_ignores_nodata() {
        let g = grid(2, 2, 1, &[1.0, 2.0, 3.0, f32::NAN]);
        let out = block_average(&g, 2).unwrap();
        assert_eq!((out.rows(), out.cols()), (1, 1));
        assert_eq!(out.get(0, 0, 0), 2.0);
        assert_eq!(out.pixel_spacing_m(), 1000.0);
    }

    #[test]
    fn block_average_all_nan() {
        let g = RasterGrid::filled(4, 4, 1, f32::NAN, 1.0).unwrap();
        let out = block_average(&g, 2).unwrap();
        assert_eq!((out.rows(), out.cols()), (2, 2));
        assert!(out.values().iter().all(|v| v.is_nan()));
    }

    #[test]
    fn block_average_drops_partial_blocks() {
        let g = RasterGrid::from_fn(5, 7, 1, 1.0, |r, c, _| (r * 7 + c) as f32).unwrap();
        let out = block_average(&g, 2).unwrap();
        assert_eq!((out.rows(), out.cols()), (2, 3));
        // block rows 2..4, cols 4..6: values 18,19,25,26
        assert_eq!(out.get(1, 2, 0), 22.0);
    }

    #[test]
    fn block_average_rejects_zero() {
        let g = grid(1, 1, 1, &[1.0]);
        assert!(block_average(&g, 0).is_err());
    }

    #[test]
    fn bilinear_constant() {
        let g = RasterGrid::filled(8, 8, 2, 3.5, 500.0).unwrap();
        let out = bilinear_downsample(&g, 2).unwrap();
        assert!(out.values().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn bilinear_two_by_two() {
        let g = grid(2, 2, 1, &[0.0, 1.0, 0.0, 1.0]);
        let out = bilinear_downsample(&g, 2).unwrap();
        assert_eq!(out.values(), &[0.5]);
    }

    #[test]
    fn bilinear_800_to_200() {
        let g = RasterGrid::filled(800, 800, 1, 0.0, 500.0).unwrap();
        let out = bilinear_downsample(&g, 4).unwrap();
        assert_eq!((out.rows(), out.cols()), (200, 200));
        assert_eq!(out.pixel_spacing_m(), 2000.0);
    }

    #[test]
    fn bilinear_rejects_bad_factor() {
        let g = RasterGrid::filled(6, 6, 1, 0.0, 1.0).unwrap();
        assert!(bilinear_downsample(&g, 3).is_err());
        assert!(bilinear_downsample(&g, 4).is_err());
    }

    #[test]
    fn crop_identity() {
        let g = RasterGrid::from_fn(5, 5, 2, 1.0, |r, c, ch| (r * 10 + c + ch * 100) as f32).unwrap();
        assert!(center_crop(&g, 5).unwrap().bit_eq(&g));
    }

    #[test]
    fn crop_800_to_512() {
        let g = RasterGrid::from_fn(800, 800, 1, 500.0, |r, c, _| (r * 800 + c) as f32).unwrap();
        let out = center_crop(&g, 512).unwrap();
        assert_eq!(out.get(0, 0, 0), (144 * 800 + 144) as f32);
        assert_eq!(out.get(511, 511, 0), (655 * 800 + 655) as f32);
    }

    #[test]
    fn crop_inner_block() {
        let g = RasterGrid::from_fn(4, 4, 1, 1.0, |r, c, _| (r * 4 + c) as f32).unwrap();
        let out = center_crop(&g, 2).unwrap();
        assert_eq!(out.values(), &[5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn crop_too_large() {
        let g = RasterGrid::filled(4, 6, 1, 0.0, 1.0).unwrap();
        assert!(center_crop(&g, 5).is_err());
    }
}

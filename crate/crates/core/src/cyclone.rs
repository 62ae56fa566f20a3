//! Candidate mesocyclone detection on gridded sea-level pressure.
//!
//! A cell is a candidate when its pressure lies at least `threshold_pa`
//! below the 9×9 moving average. Adjacent candidates (8-connectivity,
//! longitude wrapping) are grouped and groups larger than an equivalent
//! radius of `max_radius_km` are discarded as synoptic-scale systems.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{center_offset, GeoRef, RasterGrid};

/// Length of one degree of arc at the equator.
pub const KM_PER_DEG: f64 = 111.32;

pub type Cell = (usize, usize);

#[derive(Clone, Debug)]
pub struct SlpField {
    /// Cell-centre latitudes in degrees, one per row.
    pub lat: Vec<f64>,
    /// Cell-centre longitudes in degrees, one per column.
    pub lon: Vec<f64>,
    /// Pressure in Pa, row-major `lat.len() × lon.len()`.
    pub slp: Vec<f64>,
    pub timestamp: Option<DateTime<Utc>>,
    /// Whether the east and west edges are neighbours.
    pub cyclic_lon: bool,
}

impl SlpField {
    pub fn new(lat: Vec<f64>, lon: Vec<f64>, slp: Vec<f64>) -> Result<Self> {
        if lat.is_empty() || lon.is_empty() {
            return Err(Error::shape("empty latitude or longitude axis"));
        }
        if slp.len() != lat.len() * lon.len() {
            return Err(Error::shape(format!(
                "slp has {} values, expected {}x{}",
                slp.len(),
                lat.len(),
                lon.len()
            )));
        }
        if slp.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sea-level pressure must be finite everywhere"));
        }
        Ok(Self {
            lat,
            lon,
            slp,
            timestamp: None,
            cyclic_lon: true,
        })
    }

    /// Regular grid starting at (`lat0`, `lon0`) with `step` degrees,
    /// latitudes decreasing row by row.
    pub fn regular(lat0: f64, lon0: f64, step: f64, nlat: usize, nlon: usize, slp: Vec<f64>) -> Result<Self> {
        let lat = (0..nlat).map(|i| lat0 - step * i as f64).collect();
        let lon = (0..nlon).map(|j| lon0 + step * j as f64).collect();
        Self::new(lat, lon, slp)
    }

    pub fn nlat(&self) -> usize {
        self.lat.len()
    }

    pub fn nlon(&self) -> usize {
        self.lon.len()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.slp[i * self.nlon() + j]
    }

    fn lat_step(&self) -> f64 {
        if self.lat.len() > 1 {
            (self.lat[1] - self.lat[0]).abs()
        } else {
            0.25
        }
    }

    fn lon_step(&self) -> f64 {
        if self.lon.len() > 1 {
            (self.lon[1] - self.lon[0]).abs()
        } else {
            0.25
        }
    }

    fn with_values(&self, slp: Vec<f64>) -> SlpField {
        SlpField {
            lat: self.lat.clone(),
            lon: self.lon.clone(),
            slp,
            timestamp: self.timestamp,
            cyclic_lon: self.cyclic_lon,
        }
    }

    /// Reads a single-channel grid with geodetic georeferencing. A
    /// `timestamp` attribute (RFC 3339) is picked up when present.
    pub fn from_grid(grid: &RasterGrid) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::shape("SLP grid must have one channel"));
        }
        let (lat0, lon0, cell, ascending) = match &grid.geo {
            Some(GeoRef::Geodetic {
                lat0,
                lon0,
                cell_deg,
                lat_ascending,
            }) => (*lat0, *lon0, *cell_deg, *lat_ascending),
            _ => return Err(Error::invalid("SLP grid needs geodetic georeferencing")),
        };
        let dlat = if ascending { cell } else { -cell };
        let lat = (0..grid.rows()).map(|i| lat0 + dlat * i as f64).collect();
        let lon = (0..grid.cols()).map(|j| lon0 + cell * j as f64).collect();
        let slp = grid.values().iter().map(|&v| v as f64).collect();
        let mut field = SlpField::new(lat, lon, slp)?;
        if let Some(ts) = grid.attrs.get("timestamp").and_then(|v| v.as_str()) {
            let ts = DateTime::parse_from_rfc3339(ts)
                .map_err(|e| Error::invalid(format!("bad timestamp {ts:?}: {e}")))?;
            field.timestamp = Some(ts.with_timezone(&Utc));
        }
        if let Some(cyclic) = grid.attrs.get("cyclic_lon").and_then(|v| v.as_bool()) {
            field.cyclic_lon = cyclic;
        }
        Ok(field)
    }

    pub fn to_grid(&self) -> Result<RasterGrid> {
        let values = self.slp.iter().map(|&v| v as f32).collect();
        let spacing = self.lat_step() * KM_PER_DEG * 1000.0;
        let mut grid = RasterGrid::new(self.nlat(), self.nlon(), 1, values, spacing)?;
        grid.geo = Some(GeoRef::Geodetic {
            lat0: self.lat[0],
            lon0: self.lon[0],
            cell_deg: self.lon_step(),
            lat_ascending: self.lat.len() > 1 && self.lat[1] > self.lat[0],
        });
        if let Some(ts) = self.timestamp {
            grid.attrs
                .insert("timestamp".into(), serde_json::Value::String(ts.to_rfc3339()));
        }
        grid.attrs
            .insert("cyclic_lon".into(), serde_json::Value::Bool(self.cyclic_lon));
        Ok(grid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    pub threshold_pa: f64,
    pub max_radius_km: f64,
    pub window: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            threshold_pa: 230.0,
            max_radius_km: 200.0,
            window: 9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateAoi {
    pub cells: Vec<Cell>,
    pub area_km2: f64,
    pub equiv_radius_km: f64,
    /// (lat, lon) in degrees; longitude in `[0, 360)`.
    pub centroid: (f64, f64),
    pub max_depression_pa: f64,
    pub timestamp: Option<DateTime<Utc>>,
}

/// One line of the AOI JSON-lines output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoiRecord {
    pub timestamp: Option<String>,
    pub centroid_lat: f64,
    pub centroid_lon: f64,
    pub area_km2: f64,
    pub equiv_radius_km: f64,
    pub max_depression_pa: f64,
    pub n_cells: usize,
}

impl CandidateAoi {
    pub fn record(&self) -> AoiRecord {
        AoiRecord {
            timestamp: self.timestamp.map(|t| t.to_rfc3339()),
            centroid_lat: self.centroid.0,
            centroid_lon: self.centroid.1,
            area_km2: self.area_km2,
            equiv_radius_km: self.equiv_radius_km,
            max_depression_pa: self.max_depression_pa,
            n_cells: self.cells.len(),
        }
    }
}

/// Moving-average filter with a `window`×`window` box. Longitude wraps
/// when the field is cyclic; at latitude edges only the rows that exist are
/// averaged.
pub fn lowpass_slp_window(field: &SlpField, window: usize) -> Result<SlpField> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("window must be odd, got {window}")));
    }
    let (nlat, nlon) = (field.nlat(), field.nlon());
    if nlat < window {
        return Err(Error::shape(format!(
            "field has {nlat} latitude rows, filter needs at least {window}"
        )));
    }
    if nlon < window {
        return Err(Error::shape(format!(
            "field has {nlon} longitude columns, filter needs at least {window}"
        )));
    }
    let half = (window / 2) as isize;

    // Longitude pass: window sums along each row.
    let mut row_sums = vec![0.0f64; nlat * nlon];
    let mut row_counts = vec![0usize; nlon];
    for j in 0..nlon {
        row_counts[j] = (-half..=half)
            .filter(|d| field.cyclic_lon || (0..nlon as isize).contains(&(j as isize + d)))
            .count();
    }
    for i in 0..nlat {
        for j in 0..nlon {
            let mut s = 0.0;
            for d in -half..=half {
                let jj = j as isize + d;
                let jj = if field.cyclic_lon {
                    jj.rem_euclid(nlon as isize)
                } else if (0..nlon as isize).contains(&jj) {
                    jj
                } else {
                    continue;
                };
                s += field.at(i, jj as usize);
            }
            row_sums[i * nlon + j] = s;
        }
    }

    // Latitude pass over the truncated neighbourhood.
    let mut out = vec![0.0f64; nlat * nlon];
    for i in 0..nlat {
        let lo = (i as isize - half).max(0) as usize;
        let hi = ((i as isize + half) as usize).min(nlat - 1);
        let rows = (hi - lo + 1) as f64;
        for j in 0..nlon {
            let s: f64 = (lo..=hi).map(|ii| row_sums[ii * nlon + j]).sum();
            out[i * nlon + j] = s / (rows * row_counts[j] as f64);
        }
    }
    Ok(field.with_values(out))
}

/// 9×9 moving average.
pub fn lowpass_slp(field: &SlpField) -> Result<SlpField> {
    lowpass_slp_window(field, 9)
}

/// Cells whose pressure lies at least `threshold_pa` below the low-pass
/// field (inclusive).
pub fn candidate_cells(field: &SlpField, lowpass: &SlpField, threshold_pa: f64) -> Result<BTreeSet<Cell>> {
    if field.nlat() != lowpass.nlat() || field.nlon() != lowpass.nlon() {
        return Err(Error::shape(format!(
            "field {}x{} and low-pass {}x{} differ",
            field.nlat(),
            field.nlon(),
            lowpass.nlat(),
            lowpass.nlon()
        )));
    }
    let nlon = field.nlon();
    Ok(field
        .slp
        .iter()
        .zip(&lowpass.slp)
        .enumerate()
        .filter(|(_, (slp, low))| *low - *slp >= threshold_pa)
        .map(|(k, _)| (k / nlon, k % nlon))
        .collect())
}

/// Maximal 8-connected components, with longitude adjacency wrapping on
/// cyclic fields. Groups are ordered by their first (row-major) cell and
/// cells within a group are sorted.
pub fn group_cells(cells: &BTreeSet<Cell>, field: &SlpField) -> Vec<Vec<Cell>> {
    let (nlat, nlon) = (field.nlat() as isize, field.nlon() as isize);
    let mut unvisited = cells.clone();
    let mut groups = Vec::new();
    while let Some(&seed) = unvisited.iter().next() {
        unvisited.remove(&seed);
        let mut group = vec![seed];
        let mut stack = vec![seed];
        while let Some((i, j)) = stack.pop() {
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ii = i as isize + di;
                    if ii < 0 || ii >= nlat {
                        continue;
                    }
                    let mut jj = j as isize + dj;
                    if field.cyclic_lon {
                        jj = jj.rem_euclid(nlon);
                    } else if jj < 0 || jj >= nlon {
                        continue;
                    }
                    let n = (ii as usize, jj as usize);
                    if unvisited.remove(&n) {
                        group.push(n);
                        stack.push(n);
                    }
                }
            }
        }
        group.sort_unstable();
        groups.push(group);
    }
    groups
}

/// Physical area of one grid cell, shrinking with the cosine of latitude.
pub fn cell_area_km2(lat_deg: f64, lat_step_deg: f64, lon_step_deg: f64) -> f64 {
    (lat_step_deg * KM_PER_DEG) * (lon_step_deg * KM_PER_DEG) * lat_deg.to_radians().cos()
}

/// Turns cell groups into AOIs and keeps those with an equivalent radius
/// strictly below `max_radius_km`.
pub fn filter_and_vectorize(
    groups: &[Vec<Cell>],
    field: &SlpField,
    lowpass: &SlpField,
    max_radius_km: f64,
) -> Vec<CandidateAoi> {
    let (dlat, dlon) = (field.lat_step(), field.lon_step());
    let nlon = field.nlon();
    groups
        .iter()
        .filter(|g| !g.is_empty())
        .filter_map(|group| {
            let mut area = 0.0;
            let mut lat_acc = 0.0;
            let (mut cos_acc, mut sin_acc) = (0.0, 0.0);
            let mut max_dep = f64::NEG_INFINITY;
            for &(i, j) in group {
                let a = cell_area_km2(field.lat[i], dlat, dlon);
                area += a;
                lat_acc += a * field.lat[i];
                let lon = field.lon[j].to_radians();
                cos_acc += a * lon.cos();
                sin_acc += a * lon.sin();
                max_dep = max_dep.max(lowpass.slp[i * nlon + j] - field.slp[i * nlon + j]);
            }
            let radius = (area / std::f64::consts::PI).sqrt();
            if radius >= max_radius_km {
                return None;
            }
            let lon = sin_acc.atan2(cos_acc).to_degrees().rem_euclid(360.0);
            Some(CandidateAoi {
                cells: group.clone(),
                area_km2: area,
                equiv_radius_km: radius,
                centroid: (lat_acc / area, lon),
                max_depression_pa: max_dep,
                timestamp: field.timestamp,
            })
        })
        .collect()
}

/// Full candidate scan of one SLP field.
pub fn detect_candidates(field: &SlpField, params: &DetectParams) -> Result<Vec<CandidateAoi>> {
    let lowpass = lowpass_slp_window(field, params.window)?;
    let cells = candidate_cells(field, &lowpass, params.threshold_pa)?;
    let groups = group_cells(&cells, field);
    Ok(filter_and_vectorize(&groups, field, &lowpass, params.max_radius_km))
}

pub const DEPRESSION_WINDOW: usize = 100;

/// Image-wide mean SLP minus the mean over the centre 100×100 pixels.
pub fn slp_depression(raster: &RasterGrid) -> Result<f64> {
    if raster.channels() != 1 {
        return Err(Error::shape("SLP raster must have a single channel"));
    }
    if raster.rows() < DEPRESSION_WINDOW || raster.cols() < DEPRESSION_WINDOW {
        return Err(Error::shape(format!(
            "raster {}x{} is smaller than the {DEPRESSION_WINDOW}x{DEPRESSION_WINDOW} centre window",
            raster.rows(),
            raster.cols()
        )));
    }
    let mean = |it: &mut dyn Iterator<Item = f32>| -> Result<f64> {
        let (mut s, mut n) = (0.0f64, 0usize);
        for v in it.filter(|v| !v.is_nan()) {
            s += v as f64;
            n += 1;
        }
        if n == 0 {
            Err(Error::AllNodata)
        } else {
            Ok(s / n as f64)
        }
    };
    let whole = mean(&mut raster.values().iter().copied())?;
    let r0 = center_offset(raster.rows(), DEPRESSION_WINDOW);
    let c0 = center_offset(raster.cols(), DEPRESSION_WINDOW);
    let centre = mean(&mut (r0..r0 + DEPRESSION_WINDOW).flat_map(|r| {
        (c0..c0 + DEPRESSION_WINDOW).map(move |c| raster.get(r, c, 0))
    }))?;
    Ok(whole - centre)
}

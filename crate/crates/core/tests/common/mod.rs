//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use mesocyclone_core::cyclone::{detect_candidates, DetectParams, SlpField};
use mesocyclone_core::sampler::{Label, Oversampler};
use rand::Rng;

/// Reference AOI from the brute-force detector.
#[derive(Clone, Debug)]
pub struct RefAoi {
    pub cells: Vec<(usize, usize)>,
    pub area_km2: f64,
    pub centroid: (f64, f64),
    pub max_depression_pa: f64,
}

/// Per-cell reference detector for integer-valued fields. The criterion
/// `mean(window) − slp ≥ threshold` is evaluated as
/// `Σ window − n·slp ≥ n·threshold` in integers, so it is exact.
pub fn brute_force_detect(
    slp: &[i64],
    nlat: usize,
    nlon: usize,
    lat: &[f64],
    lon: &[f64],
    cyclic: bool,
    threshold_pa: i64,
    max_radius_km: f64,
) -> Vec<RefAoi> {
    let half = 4isize;
    let at = |i: usize, j: usize| slp[i * nlon + j];
    let mut sums = vec![(0i64, 0i64); nlat * nlon];
    let mut candidate = vec![false; nlat * nlon];
    for i in 0..nlat {
        for j in 0..nlon {
            let (mut s, mut n) = (0i64, 0i64);
            for di in -half..=half {
                let ii = i as isize + di;
                if ii < 0 || ii >= nlat as isize {
                    continue;
                }
                for dj in -half..=half {
                    let mut jj = j as isize + dj;
                    if cyclic {
                        jj = (jj + nlon as isize) % nlon as isize;
                    } else if jj < 0 || jj >= nlon as isize {
                        continue;
                    }
                    s += at(ii as usize, jj as usize);
                    n += 1;
                }
            }
            sums[i * nlon + j] = (s, n);
            candidate[i * nlon + j] = s - n * at(i, j) >= n * threshold_pa;
        }
    }

    // Union-find over candidate cells.
    let mut parent: Vec<usize> = (0..nlat * nlon).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..nlat {
        for j in 0..nlon {
            if !candidate[i * nlon + j] {
                continue;
            }
            for (di, dj) in [(0isize, 1isize), (1, -1), (1, 0), (1, 1)] {
                let ii = i as isize + di;
                let mut jj = j as isize + dj;
                if ii >= nlat as isize {
                    continue;
                }
                if cyclic {
                    jj = (jj + nlon as isize) % nlon as isize;
                } else if jj < 0 || jj >= nlon as isize {
                    continue;
                }
                let k = ii as usize * nlon + jj as usize;
                if candidate[k] {
                    let (a, b) = (find(&mut parent, i * nlon + j), find(&mut parent, k));
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for k in 0..nlat * nlon {
        if candidate[k] {
            let r = find(&mut parent, k);
            groups.entry(r).or_default().push((k / nlon, k % nlon));
        }
    }

    let dlat = (lat[1] - lat[0]).abs();
    let dlon = lon[1] - lon[0];
    let mut out = Vec::new();
    for (_, mut cells) in groups {
        cells.sort_unstable();
        let mut area = 0.0;
        let (mut la, mut x, mut y) = (0.0, 0.0, 0.0);
        let mut dep = f64::MIN;
        for &(i, j) in &cells {
            let a = dlat * 111.32 * dlon * 111.32 * (lat[i] * std::f64::consts::PI / 180.0).cos();
            area += a;
            la += a * lat[i];
            let t = lon[j] * std::f64::consts::PI / 180.0;
            x += a * t.cos();
            y += a * t.sin();
            let (s, n) = sums[i * nlon + j];
            dep = dep.max(s as f64 / n as f64 - at(i, j) as f64);
        }
        if (area / std::f64::consts::PI).sqrt() < max_radius_km {
            let mut lon_c = y.atan2(x) * 180.0 / std::f64::consts::PI;
            if lon_c < 0.0 {
                lon_c += 360.0;
            }
            out.push(RefAoi {
                cells,
                area_km2: area,
                centroid: (la / area, lon_c),
                max_depression_pa: dep,
            });
        }
    }
    out
}

/// Random integer SLP field: smooth background, pixel noise, several
/// narrow lows (some straddling the east/west edge) and occasionally a
/// broad low.
pub fn random_field<R: Rng>(rng: &mut R, nlat: usize, nlon: usize) -> Vec<i64> {
    let phase: f64 = rng.gen_range(0.0..6.3);
    let tilt: f64 = rng.gen_range(-30.0..30.0);
    let mut f: Vec<f64> = (0..nlat * nlon)
        .map(|k| {
            let (i, j) = ((k / nlon) as f64, (k % nlon) as f64);
            101_000.0 + tilt * i + 400.0 * (phase + j * std::f64::consts::TAU / nlon as f64).sin()
                + rng.gen_range(-60.0..60.0)
        })
        .collect();
    let mut add_low = |ci: f64, cj: f64, depth: f64, sigma: f64| {
        for i in 0..nlat {
            for j in 0..nlon {
                let dj = {
                    let d = (j as f64 - cj).abs();
                    d.min(nlon as f64 - d)
                };
                let d2 = (i as f64 - ci).powi(2) + dj * dj;
                f[i * nlon + j] -= depth * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    };
    for _ in 0..rng.gen_range(1..6) {
        let cj = if rng.gen_bool(0.3) {
            rng.gen_range(-2.0..2.0f64).rem_euclid(nlon as f64)
        } else {
            rng.gen_range(0.0..nlon as f64)
        };
        add_low(
            rng.gen_range(0.0..nlat as f64),
            cj,
            rng.gen_range(150.0..1500.0),
            rng.gen_range(0.7..3.5),
        );
    }
    if rng.gen_bool(0.25) {
        add_low(rng.gen_range(10.0..30.0), rng.gen_range(0.0..nlon as f64), 3000.0, 14.0);
    }
    f.iter().map(|v| v.round() as i64).collect()
}

/// Compares the detector with the brute-force reference on one field.
/// Returns a description of the first mismatch.
pub fn compare_with_oracle(slp: &[i64], nlat: usize, nlon: usize, lat0: f64, cyclic: bool) -> Result<usize, String> {
    let values: Vec<f64> = slp.iter().map(|&v| v as f64).collect();
    let mut field = SlpField::regular(lat0, 0.0, 0.25, nlat, nlon, values).map_err(|e| e.to_string())?;
    field.cyclic_lon = cyclic;
    let got = detect_candidates(&field, &DetectParams::default()).map_err(|e| e.to_string())?;
    let want = brute_force_detect(slp, nlat, nlon, &field.lat, &field.lon, cyclic, 230, 200.0);
    let got_cells: BTreeSet<Vec<(usize, usize)>> = got.iter().map(|a| a.cells.clone()).collect();
    let want_cells: BTreeSet<Vec<(usize, usize)>> = want.iter().map(|a| a.cells.clone()).collect();
    if got_cells != want_cells {
        return Err(format!("cell sets differ: {} vs {} AOIs", got.len(), want.len()));
    }
    for w in &want {
        let g = got.iter().find(|a| a.cells == w.cells).expect("same cell sets");
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        let lon_diff = (g.centroid.1 - w.centroid.1).abs();
        let lon_ok = lon_diff.min(360.0 - lon_diff) <= 1e-9;
        if !(close(g.area_km2, w.area_km2)
            && close(g.centroid.0, w.centroid.0)
            && lon_ok
            && close(g.max_depression_pa, w.max_depression_pa))
        {
            return Err(format!("AOI metrics differ: {g:?} vs {w:?}"));
        }
    }
    Ok(want.len())
}

/// Whether any reference AOI touches both the first and last column.
pub fn has_wrapping_aoi(slp: &[i64], nlat: usize, nlon: usize, lat0: f64) -> bool {
    let lat: Vec<f64> = (0..nlat).map(|i| lat0 - 0.25 * i as f64).collect();
    let lon: Vec<f64> = (0..nlon).map(|j| 0.25 * j as f64).collect();
    brute_force_detect(slp, nlat, nlon, &lat, &lon, true, 230, 200.0)
        .iter()
        .any(|a| a.cells.iter().any(|c| c.1 == 0) && a.cells.iter().any(|c| c.1 == nlon - 1))
}

/// `n0` negatives followed by `n1` positives.
pub fn labels(n0: usize, n1: usize) -> Vec<Label> {
    let mut v = vec![Label::Negative; n0];
    v.extend(vec![Label::Positive; n1]);
    v
}

/// Checks one oversampling run: exact (8, 8) batches, every negative once
/// per epoch, no duplicates inside a batch, and positive counts that never
/// drift apart by more than one.
pub fn check_oversampling(n0: usize, n1: usize, epochs: usize, seed: u64) -> Result<(), String> {
    let y = labels(n0, n1);
    let mut o = Oversampler::new(&y, 16, seed).map_err(|e| e.to_string())?;
    let mut pos_counts = vec![0usize; n1];
    for epoch in 0..epochs {
        let mut neg_seen = vec![0usize; n0];
        for batch in o.next_epoch() {
            let negs = batch.iter().filter(|&&i| y[i] == Label::Negative).count();
            if batch.len() != 16 || negs != 8 {
                return Err(format!("epoch {epoch}: batch of {} with {negs} negatives", batch.len()));
            }
            if batch.iter().collect::<HashSet<_>>().len() != batch.len() {
                return Err(format!("epoch {epoch}: duplicate inside a batch"));
            }
            for &i in &batch {
                if i < n0 {
                    neg_seen[i] += 1;
                } else {
                    pos_counts[i - n0] += 1;
                }
            }
            let (lo, hi) = (pos_counts.iter().min().unwrap(), pos_counts.iter().max().unwrap());
            if hi - lo > 1 {
                return Err(format!("epoch {epoch}: positive counts spread {lo}..{hi}"));
            }
        }
        let expected_once = (n0 / 8) * 8;
        let once = neg_seen.iter().filter(|&&c| c == 1).count();
        if neg_seen.iter().any(|&c| c > 1) || once != expected_once {
            return Err(format!("epoch {epoch}: negatives used {once} times once, expected {expected_once}"));
        }
    }
    Ok(())
}

mod common;

use common::{compare_with_oracle, has_wrapping_aoi, random_field};
use mesocyclone_core::cyclone::{detect_candidates, DetectParams, SlpField};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_brute_force_on_random_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut aois, mut wraps) = (0, 0);
    for case in 0..200 {
        let slp = random_field(&mut rng, 40, 80);
        let lat0 = rng.gen_range(-70.0..80.0);
        let cyclic = case % 4 != 3;
        aois += compare_with_oracle(&slp, 40, 80, lat0, cyclic).unwrap_or_else(|e| panic!("case {case}: {e}"));
        wraps += usize::from(cyclic && has_wrapping_aoi(&slp, 40, 80, lat0));
    }
    assert!(aois > 200, "too few AOIs exercised: {aois}");
    assert!(wraps > 5, "too few wrapping AOIs exercised: {wraps}");
}

fn field_from(values: &[i64], lat0: f64) -> SlpField {
    SlpField::regular(lat0, 0.0, 0.25, 40, 80, values.iter().map(|&v| v as f64).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constant_offset_leaves_candidates_unchanged(seed in any::<u64>(), offset in -5000i64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slp = random_field(&mut rng, 40, 80);
        let shifted: Vec<i64> = slp.iter().map(|v| v + offset).collect();
        let a = detect_candidates(&field_from(&slp, 60.0), &DetectParams::default()).unwrap();
        let b = detect_candidates(&field_from(&shifted, 60.0), &DetectParams::default()).unwrap();
        let cells = |v: &[mesocyclone_core::cyclone::CandidateAoi]| v.iter().map(|a| a.cells.clone()).collect::<Vec<_>>();
        prop_assert_eq!(cells(&a), cells(&b));
    }

    #[test]
    fn outputs_respect_thresholds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slp = random_field(&mut rng, 40, 80);
        let params = DetectParams::default();
        for aoi in detect_candidates(&field_from(&slp, 55.0), &params).unwrap() {
            prop_assert!(aoi.equiv_radius_km < params.max_radius_km);
            prop_assert!(aoi.max_depression_pa >= params.threshold_pa);
        }
    }

    /// Rotation equivariance needs a closed circle of longitudes, so this
    /// uses a global 0.25° grid.
    #[test]
    fn longitude_rotation_rotates_aois(seed in any::<u64>(), shift in 0usize..1440) {
        const NLON: usize = 1440;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slp = random_field(&mut rng, 40, NLON);
        let rotated: Vec<i64> = (0..40 * NLON)
            .map(|k| slp[(k / NLON) * NLON + (k % NLON + NLON - shift) % NLON])
            .collect();
        let global = |v: &[i64]| {
            SlpField::regular(50.0, 0.0, 0.25, 40, NLON, v.iter().map(|&x| x as f64).collect()).unwrap()
        };
        let a = detect_candidates(&global(&slp), &DetectParams::default()).unwrap();
        let b = detect_candidates(&global(&rotated), &DetectParams::default()).unwrap();
        prop_assert_eq!(a.len(), b.len());
        let mut moved: Vec<_> = a
            .iter()
            .map(|x| {
                let mut c: Vec<_> = x.cells.iter().map(|&(i, j)| (i, (j + shift) % NLON)).collect();
                c.sort_unstable();
                c
            })
            .collect();
        moved.sort();
        let mut got: Vec<_> = b.iter().map(|x| x.cells.clone()).collect();
        got.sort();
        prop_assert_eq!(moved, got);
        for x in &a {
            let expect = (x.centroid.1 + 0.25 * shift as f64).rem_euclid(360.0);
            let found = b.iter().any(|y| {
                let d = (y.centroid.1 - expect).abs();
                d.min(360.0 - d) < 1e-9 && (y.area_km2 - x.area_km2).abs() < 1e-6
            });
            prop_assert!(found, "no rotated AOI near longitude {}", expect);
        }
    }
}

mod common;

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use common::{check_oversampling, labels};

use mesocyclone_core::sampler::{
    class_weights, group_sets, rejection_sample_epoch, split_by_sets, weighted_epoch, ImagingMode,
    ImbalanceStrategy, Label, Partition, Sample,
};
use mesocyclone_core::sar::PolMode;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn manifest(set_sizes: &[usize]) -> Vec<Sample> {
    let mut out = Vec::new();
    for (s, &n) in set_sizes.iter().enumerate() {
        for k in 0..=n {
            let id = format!("s{s}_{k}");
            out.push(Sample {
                id: id.clone(),
                set_id: format!("s{s}"),
                label: if k == 0 { Label::Positive } else { Label::Negative },
                pol_mode: PolMode::Dual,
                imaging_mode: ImagingMode::IW,
                raster_path: PathBuf::from(format!("{id}.pgrid")),
                slp_depression_pa: None,
            });
        }
    }
    out
}

#[test]
fn oversampling_toy_manifest_hundred_epochs() {
    check_oversampling(160, 30, 100, 7).unwrap();
}

#[test]
fn class_weights_identity() {
    let (w0, w1) = class_weights(1686, 318).unwrap();
    assert_eq!(1686.0 * w0 + 318.0 * w1, 2004.0);
    assert_eq!(format!("{w0:.4} {w1:.4}"), "0.5943 3.1509");
}

#[test]
fn strategy_selector_has_three_rows() {
    let names: Vec<_> = ImbalanceStrategy::ALL.iter().map(|s| s.name()).collect();
    assert_eq!(names, ["class-weighting", "oversampling", "rejection"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn oversampling_invariants_hold(n0 in 8usize..200, n1 in 8usize..60, seed in any::<u64>()) {
        prop_assert_eq!(check_oversampling(n0, n1, 12, seed), Ok(()));
    }

    #[test]
    fn rejection_keeps_balanced_subset(n0 in 1usize..120, n1 in 1usize..120, seed in any::<u64>()) {
        let y = labels(n0, n1);
        let batches = rejection_sample_epoch(&y, 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let all: Vec<usize> = batches.concat();
        let k = n0.min(n1);
        prop_assert_eq!(all.len(), 2 * k);
        prop_assert_eq!(all.iter().collect::<HashSet<_>>().len(), 2 * k);
        prop_assert_eq!(all.iter().filter(|&&i| y[i] == Label::Positive).count(), k);
    }

    #[test]
    fn weighted_epoch_is_a_permutation(n in 1usize..300, bs in 1usize..40, seed in any::<u64>()) {
        let mut all = weighted_epoch(n, bs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_set_disjoint_and_near_target(sizes in prop::collection::vec(0usize..=10, 10..60), seed in any::<u64>()) {
        let samples = manifest(&sizes);
        let sets = group_sets(&samples).unwrap();
        let split = split_by_sets(&sets, 0.21, 0.10, seed).unwrap();
        let mut owner: HashMap<&str, Partition> = HashMap::new();
        for part in [Partition::Train, Partition::Val, Partition::Test] {
            for s in split.select(&samples, part) {
                let prev = owner.insert(s.set_id.as_str(), part);
                prop_assert!(prev.is_none() || prev == Some(part), "set {} in two partitions", s.set_id);
            }
        }
        prop_assert_eq!(owner.len(), sets.len());
        let largest = sets.iter().map(|s| s.len()).max().unwrap();
        let n_test = split.select(&samples, Partition::Test).len();
        let target = 0.21 * samples.len() as f64;
        prop_assert!((n_test as f64 - target).abs() <= largest as f64, "{} vs {}", n_test, target);
    }
}

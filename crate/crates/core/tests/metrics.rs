use mesocyclone_core::sampler::class_weights;
use mesocyclone_core::trainer::{mean_std, ConfusionMatrix};
use proptest::prelude::*;

/// F1 through precision and recall, the textbook route.
fn f1_via_precision_recall(cm: &ConfusionMatrix) -> f64 {
    let precision = if cm.tp + cm.fp == 0 { 0.0 } else { cm.tp as f64 / (cm.tp + cm.fp) as f64 };
    let recall = if cm.tp + cm.fn_ == 0 { 0.0 } else { cm.tp as f64 / (cm.tp + cm.fn_) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn f1_matches_precision_recall(tn in 0usize..500, fn_ in 0usize..500, fp in 0usize..500, tp in 0usize..500) {
        let cm = ConfusionMatrix::new(tn, fn_, fp, tp);
        let f1 = cm.f1();
        prop_assert!((f1 - f1_via_precision_recall(&cm)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert_eq!(cm.total(), tn + fn_ + fp + tp);
    }

    #[test]
    fn confusion_counts_predictions(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..200)) {
        let (labels, preds): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let cm = ConfusionMatrix::from_predictions(&labels, &preds);
        let count = |l, p| pairs.iter().filter(|&&x| x == (l, p)).count();
        prop_assert_eq!(cm, ConfusionMatrix::new(count(0, 0), count(1, 0), count(0, 1), count(1, 1)));
    }

    #[test]
    fn class_weights_balance_total(n0 in 1usize..100_000, n1 in 1usize..100_000) {
        let (w0, w1) = class_weights(n0, n1).unwrap();
        let n = (n0 + n1) as f64;
        prop_assert!((n0 as f64 * w0 + n1 as f64 * w1 - n).abs() <= 1e-9 * n);
        prop_assert!((n0 as f64 * w0 - n1 as f64 * w1).abs() <= 1e-9 * n);
    }

    #[test]
    fn mean_std_matches_two_pass(v in prop::collection::vec(-10.0f64..10.0, 2..20)) {
        let (m, s) = mean_std(&v);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        prop_assert!((m - mean).abs() < 1e-12);
        prop_assert!((s - var.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn class_weights_for_the_reference_counts() {
    let (w0, w1) = class_weights(1686, 318).unwrap();
    assert_eq!(1686.0 * w0 + 318.0 * w1, 2004.0);
    assert_eq!((format!("{w0:.4}"), format!("{w1:.4}")), ("0.5943".into(), "3.1509".into()));
}

#[test]
fn degenerate_matrices_have_zero_f1() {
    assert_eq!(ConfusionMatrix::new(10, 0, 0, 0).f1(), 0.0);
    assert_eq!(ConfusionMatrix::new(0, 3, 0, 0).f1(), 0.0);
    assert_eq!(ConfusionMatrix::new(0, 0, 0, 0).f1(), 0.0);
    assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
}

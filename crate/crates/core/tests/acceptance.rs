//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over all of them. Lines go straight to stdout so they survive
//! output capture.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::{check_oversampling, compare_with_oracle, has_wrapping_aoi, random_field};
use mesocyclone_core::grid::{read_pgrid, write_pgrid, GeoRef};
use mesocyclone_core::interpret::{integrated_gradients, LinearScorer, ModelScorer, Scorer, POSITIVE_CLASS};
use mesocyclone_core::nn::gradcheck::{check_layers, check_model, check_residual_block, GradCheckReport};
use mesocyclone_core::nn::{Activation, ModelConfig, NetworkParams, Resolution, Tensor4};
use mesocyclone_core::sampler::{
    class_weights, group_sets, split_by_sets, ImbalanceStrategy, Label, Partition, Sample, DEFAULT_TEST_FRAC,
    DEFAULT_VAL_FRAC,
};
use mesocyclone_core::synth::{generate_synth_dataset, SynthDatasetConfig};
use mesocyclone_core::trainer::{
    evaluate, format_study_table, history_csv, mix_seed, prepare_eval, resolution_study, train, ConfusionMatrix,
    ImageStore, MemoryStore, StudyArm, TrainConfig,
};
use mesocyclone_core::RasterGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const STUDY_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const E2E_EPOCHS: usize = 40;

struct Report {
    passed: Vec<bool>,
}

impl Report {
    fn line(&mut self, name: &str, ok: bool, detail: impl AsRef<str>) {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{} {name}: {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
        let _ = out.flush();
        self.passed.push(ok);
    }

    fn note(&self, text: impl AsRef<str>) {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "     {}", text.as_ref());
        let _ = out.flush();
    }
}

// ---------------------------------------------------------------------------
// Criteria that need no training

fn gradients(r: &mut Report) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut input_checked = false;
    let mut record = |reports: &[GradCheckReport]| {
        for rep in reports {
            worst = worst.max(rep.rel_err);
            input_checked |= rep.name.contains("input");
            if !rep.passes(GRAD_TOL) {
                failures.push(format!("{} {:.2e}", rep.name, rep.rel_err));
            }
        }
    };
    for seed in 0..16 {
        record(&check_layers(seed).unwrap());
    }
    // Composed checks skip seeds whose perturbations cross a ReLU or max
    // kink, where central differences do not estimate the derivative.
    let mut kink_free = [0usize; 3];
    for seed in 0..16 {
        let runs = [
            check_residual_block(seed).unwrap(),
            check_model(seed, Activation::Relu).unwrap(),
            check_model(seed, Activation::Selu).unwrap(),
        ];
        for (k, reports) in runs.iter().enumerate() {
            if reports.iter().all(|rep| rep.kink_crossings == 0) {
                kink_free[k] += 1;
                record(reports);
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && input_checked && kink_free.iter().all(|&n| n >= 3) && elapsed < Duration::from_secs(120);
    r.line(
        "gradient correctness",
        ok,
        format!(
            "max rel err {worst:.2e} (tol {GRAD_TOL:.0e}), kink-free composed seeds {kink_free:?}, input grads checked {input_checked}, {:.1}s{}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!(", failures: {}", failures.join("; ")) }
        ),
    );
}

fn metric_reproduction(r: &mut Report) {
    let cm = ConfusionMatrix::new(366, 2, 5, 62);
    let f1 = format!("{:.2}", cm.f1());
    r.line("metric reproduction", f1 == "0.95", format!("(tn 366, fn 2, fp 5, tp 62) gives F1 {f1}"));
}

fn class_weight_identity(r: &mut Report) {
    let (w0, w1) = class_weights(1686, 318).unwrap();
    let total = 1686.0 * w0 + 318.0 * w1;
    let hand = (format!("{w0:.4}"), format!("{w1:.4}"));
    let ok = total == 2004.0 && hand == ("0.5943".into(), "3.1509".into());
    r.line("class-weight identity", ok, format!("w0 {} w1 {}, n0*w0 + n1*w1 = {total:?}", hand.0, hand.1));
}

fn detector_oracle(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut aois, mut wraps, mut failures) = (0, 0, Vec::new());
    for case in 0..200 {
        let slp = random_field(&mut rng, 40, 80);
        let lat0 = rng.gen_range(-70.0..80.0);
        let cyclic = case % 4 != 3;
        match compare_with_oracle(&slp, 40, 80, lat0, cyclic) {
            Ok(n) => aois += n,
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
        wraps += usize::from(cyclic && has_wrapping_aoi(&slp, 40, 80, lat0));
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && wraps > 0 && elapsed < Duration::from_secs(60);
    r.line(
        "detector oracle equivalence",
        ok,
        format!(
            "200 fields 40x80, {aois} AOIs, {wraps} fields with wrapping AOIs, {} mismatches, {:.1}s",
            failures.len(),
            elapsed.as_secs_f64()
        ),
    );
    for f in failures.iter().take(3) {
        r.note(f);
    }
}

fn oversampling(r: &mut Report) {
    let result = check_oversampling(160, 30, 100, 7);
    r.line(
        "oversampling invariants",
        result.is_ok(),
        result.err().unwrap_or_else(|| "100 epochs, 160 neg / 30 pos, every batch (8, 8)".into()),
    );
}

fn random_grid(rng: &mut ChaCha8Rng) -> RasterGrid {
    let (rows, cols, ch) = (rng.gen_range(1..16), rng.gen_range(1..16), rng.gen_range(1..4));
    let values = (0..rows * cols * ch)
        .map(|_| match rng.gen_range(0..4) {
            0 => f32::NAN,
            1 => f32::from_bits(rng.gen()),
            _ => rng.gen_range(-40.0..10.0),
        })
        .collect();
    let mut g = RasterGrid::new(rows, cols, ch, values, rng.gen_range(0.5..5000.0)).unwrap();
    if rng.gen_bool(0.5) {
        g.geo = Some(GeoRef::Geodetic {
            lat0: rng.gen_range(-90.0..90.0),
            lon0: rng.gen_range(0.0..360.0),
            cell_deg: 0.25,
            lat_ascending: rng.gen(),
        });
    }
    g.attrs_mut().insert("case".into(), rng.gen::<u32>().into());
    g
}

fn pgrid_round_trip(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("case.pgrid");
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut bad, mut nan_cases) = (0, 0);
    for _ in 0..1000 {
        let g = random_grid(&mut rng);
        nan_cases += usize::from(g.values().iter().any(|v| v.is_nan()));
        write_pgrid(&g, &path).unwrap();
        bad += usize::from(!read_pgrid(&path).unwrap().bit_eq(&g));
    }
    r.line(
        "pgrid round-trip",
        bad == 0,
        format!("1000 random grids ({nan_cases} with NaN), {bad} not bit-identical"),
    );
}

// ---------------------------------------------------------------------------
// Training criteria

fn e2e_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: E2E_EPOCHS,
        batch_size: 16,
        strategy: ImbalanceStrategy::Oversampling,
        seed,
        aug_seed: mix_seed(&[seed, 7]),
        ..TrainConfig::new(ModelConfig::for_resolution(Resolution::Km2))
    }
}

fn positive_input(sample: &Sample, store: &dyn ImageStore, side: usize) -> Tensor4 {
    let g = prepare_eval(&store.load(sample).unwrap(), side).unwrap();
    Tensor4::from_grids(&[&g]).unwrap()
}

fn ig_axioms(r: &mut Report, params: &NetworkParams, config: &ModelConfig, inputs: &[Tensor4]) {
    let scorer = ModelScorer { params, config };
    let x = &inputs[0];
    let same = integrated_gradients(&scorer, x, x, 256, POSITIVE_CLASS).unwrap();
    let zero_ok = same.values.iter().all(|&v| v == 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lin = LinearScorer {
        weights: (0..x.item_len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let black = x.zeros_like();
    let lin_map = integrated_gradients(&lin, x, &black, 256, POSITIVE_CLASS).unwrap();
    let exact_ok = lin_map.values.iter().zip(&x.data).zip(&lin.weights).all(|((&a, &xv), &w)| a == w * xv);

    let f = |t: &Tensor4| scorer.score_and_grad(t, POSITIVE_CLASS).unwrap().0[0];
    let gap = |x: &Tensor4, steps: usize| {
        let map = integrated_gradients(&scorer, x, &black, steps, POSITIVE_CLASS).unwrap();
        let delta = f(x) - f(&black);
        (map.total() - delta).abs() / delta.abs()
    };
    let gaps: Vec<f64> = inputs.iter().map(|x| gap(x, 256)).collect();
    let within = gaps.iter().filter(|&&g| g <= 0.01).count();
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    r.line(
        "integrated gradients axioms",
        zero_ok && exact_ok && within == gaps.len(),
        format!(
            "x = x' all zero {zero_ok}, linear IG == w*x {exact_ok}, completeness within 1% at m = 256 for {within}/{} held-out positives (worst {:.2}%)",
            gaps.len(),
            100.0 * worst
        ),
    );
    let k = gaps.iter().position(|&g| g == worst).unwrap();
    r.note(format!(
        "worst positive: gap {:.2}% at m = 256, {:.3}% at m = 4096 (midpoint error over ReLU/max-pool kinks)",
        100.0 * worst,
        100.0 * gap(&inputs[k], 4096)
    ));
}

#[test]
fn acceptance() {
    let mut r = Report { passed: Vec::new() };
    gradients(&mut r);
    metric_reproduction(&mut r);
    class_weight_identity(&mut r);
    detector_oracle(&mut r);
    oversampling(&mut r);
    pgrid_round_trip(&mut r);

    let data = generate_synth_dataset(&SynthDatasetConfig::default(), 0).unwrap();
    let samples: Vec<Sample> = data.iter().map(|(s, _)| s.clone()).collect();
    let store = MemoryStore::from_samples(&data);
    let split = split_by_sets(&group_sets(&samples).unwrap(), DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC, 0).unwrap();
    let (tr, va, te) = (
        split.select(&samples, Partition::Train),
        split.select(&samples, Partition::Val),
        split.select(&samples, Partition::Test),
    );
    let n_pos = samples.iter().filter(|s| s.label == Label::Positive).count();
    r.note(format!(
        "synthetic dataset: {} images in 50 sets, {:.1}% positive, 128x128; train {} val {} test {}",
        samples.len(),
        100.0 * n_pos as f64 / samples.len() as f64,
        tr.len(),
        va.len(),
        te.len()
    ));

    // End-to-end run.
    let config = e2e_config(0);
    let start = Instant::now();
    let outcome = train(&config, &tr, &va, &store, |_| {}).unwrap();
    let elapsed = start.elapsed();
    let cm = evaluate(&outcome.best_params, &config.model, &te, &store).unwrap();

    // IG on every held-out positive with the trained model.
    let positives: Vec<Tensor4> = te
        .iter()
        .filter(|s| s.label == Label::Positive)
        .map(|s| positive_input(s, &store, config.model.input_size))
        .collect();
    ig_axioms(&mut r, &outcome.best_params, &config.model, &positives);

    // Resolution study; its native seed-0 run repeats the end-to-end run.
    let arms = [
        StudyArm {
            label: "native".into(),
            factor: 1,
            config: e2e_config(0),
        },
        StudyArm {
            label: "4x down".into(),
            factor: 4,
            config: TrainConfig {
                model: ModelConfig {
                    input_size: 32,
                    ..ModelConfig::for_resolution(Resolution::Km2)
                },
                ..e2e_config(0)
            },
        },
    ];
    let rows = resolution_study(&arms, &STUDY_SEEDS, &tr, &va, &te, &store, |label, seed, m| {
        r.note(format!("study {label} seed {seed}: {m:?} F1 {:.3}", m.f1()));
    })
    .unwrap();
    let reproducible = history_csv(&outcome.history) == history_csv(&rows[0].histories[0]);

    r.line(
        "synthetic end-to-end",
        cm.f1() >= 0.90 && elapsed <= Duration::from_secs(30 * 60) && reproducible,
        format!(
            "test F1 {:.3} ({cm:?}) from best epoch {} of {E2E_EPOCHS}, {:.0}s, history byte-identical on rerun {reproducible}",
            cm.f1(),
            outcome.best_epoch,
            elapsed.as_secs_f64()
        ),
    );

    let (native, down) = (rows[0].mean_f1(), rows[1].mean_f1());
    r.line(
        "resolution trend",
        native >= down,
        format!("mean F1 over {} seeds: native {native:.3}, 4x downsampled {down:.3}", STUDY_SEEDS.len()),
    );
    for line in format_study_table(&rows).lines() {
        r.note(line);
    }

    let failed = r.passed.iter().filter(|&&ok| !ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}

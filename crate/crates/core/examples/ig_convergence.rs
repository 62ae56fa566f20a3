//! Completeness gap of Integrated Gradients against the number of steps,
//! for the positive test images of the default synthetic dataset.
//!
//! `cargo run --release -p mesocyclone-core --example ig_convergence -- best.ckpt [seed]`

use mesocyclone_core::interpret::{integrated_gradients, ModelScorer, Scorer, POSITIVE_CLASS};
use mesocyclone_core::nn::{Checkpoint, Tensor4};
use mesocyclone_core::sampler::{group_sets, split_by_sets, Label, Partition, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC};
use mesocyclone_core::synth::{generate_synth_dataset, SynthDatasetConfig};
use mesocyclone_core::trainer::{prepare_eval, ImageStore, MemoryStore};

fn main() -> mesocyclone_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = Checkpoint::load(args.get(1).expect("checkpoint path"))?;
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let data = generate_synth_dataset(&SynthDatasetConfig::default(), seed)?;
    let samples: Vec<_> = data.iter().map(|(s, _)| s.clone()).collect();
    let store = MemoryStore::from_samples(&data);
    let split = split_by_sets(&group_sets(&samples)?, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC, seed)?;
    let scorer = ModelScorer {
        params: &ckpt.params,
        config: &ckpt.config,
    };
    for sample in split.select(&samples, Partition::Test) {
        if sample.label != Label::Positive {
            continue;
        }
        let g = prepare_eval(&store.load(sample)?, ckpt.config.input_size)?;
        let x = Tensor4::from_grids(&[&g])?;
        let black = x.zeros_like();
        let f = |t: &Tensor4| scorer.score_and_grad(t, POSITIVE_CLASS).map(|(s, _)| s[0]);
        let delta = f(&x)? - f(&black)?;
        let mut line = format!("{:<14} F(x) - F(0) {delta:>9.4}", sample.id);
        for m in [32, 64, 128, 256, 512, 1024, 4096] {
            let map = integrated_gradients(&scorer, &x, &black, m, POSITIVE_CLASS)?;
            line += &format!("  m={m}: {:.3}%", 100.0 * (map.total() - delta).abs() / delta.abs());
        }
        println!("{line}");
    }
    Ok(())
}

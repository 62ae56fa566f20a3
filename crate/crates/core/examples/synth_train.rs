//! Trains the 2 km preset on a generated dataset and reports held-out F1.
//!
//! `cargo run --release -p mesocyclone-core --example synth_train -- [epochs] [seed] [best.ckpt]`

use std::time::Instant;

use mesocyclone_core::nn::{ModelConfig, Resolution};
use mesocyclone_core::sampler::{group_sets, split_by_sets, Partition, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC};
use mesocyclone_core::synth::{generate_synth_dataset, SynthDatasetConfig};
use mesocyclone_core::trainer::{evaluate, train, MemoryStore, TrainConfig};

fn main() -> mesocyclone_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let data = generate_synth_dataset(&SynthDatasetConfig::default(), seed)?;
    let samples: Vec<_> = data.iter().map(|(s, _)| s.clone()).collect();
    let store = MemoryStore::from_samples(&data);
    let split = split_by_sets(&group_sets(&samples)?, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC, seed)?;
    let (tr, va, te) = (
        split.select(&samples, Partition::Train),
        split.select(&samples, Partition::Val),
        split.select(&samples, Partition::Test),
    );
    println!("samples: train {} val {} test {}", tr.len(), va.len(), te.len());

    let config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::new(ModelConfig::for_resolution(Resolution::Km2))
    };
    let start = Instant::now();
    let outcome = train(&config, &tr, &va, &store, |m| {
        println!(
            "epoch {:>3} loss {:.4} val F1 {:.3} ({:.0?})",
            m.epoch,
            m.train_loss,
            m.val_f1,
            start.elapsed()
        );
    })?;
    let cm = evaluate(&outcome.best_params, &config.model, &te, &store)?;
    println!("best epoch {} test {:?} F1 {:.3}", outcome.best_epoch, cm, cm.f1());
    if let Some(path) = args.get(3) {
        outcome.best_checkpoint(&config.model).save(path)?;
    }
    Ok(())
}

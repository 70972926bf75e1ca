//! Improvement-only checkpointing: replay scripted validation accuracies,
//! then train a small network and look at what was kept.

use cnn_mixture::data::{generate_synthetic, split_dataset, SplitRatios, SynthConfig};
use cnn_mixture::model::NetworkSpec;
use cnn_mixture::train::{train_with, CheckpointHarvester, Objective, TrainConfig, TOP_K};

fn main() -> cnn_mixture::Result<()> {
    for trace in [
        vec![0.50, 0.60, 0.55, 0.70],
        vec![0.8; 5],
        (1..=12).map(|i| 0.5 + i as f64 / 30.0).collect(),
    ] {
        let mut h = CheckpointHarvester::<()>::new(TOP_K)?;
        for (i, &acc) in trace.iter().enumerate() {
            h.observe(i + 1, acc, || ());
        }
        let epochs: Vec<usize> = h.top().iter().map(|c| c.epoch).collect();
        println!("{trace:.3?} -> checkpoints at epochs {epochs:?}");
    }

    let synth = SynthConfig {
        total_count: 600,
        canvas_size_range: [40, 64],
        seed: 1,
        ..SynthConfig::default()
    };
    let sets = split_dataset(generate_synthetic(&synth)?, SplitRatios::default(), 1)?
        .preprocessed(32)?
        .into_prepared()?;
    let config = TrainConfig {
        epochs: 8,
        batch_size: 32,
        seed: 1,
        ..TrainConfig::default()
    };
    let outcome = train_with(
        &NetworkSpec::with_input_side(32),
        &sets.training,
        &sets.validation,
        &config,
        &Objective::default(),
        |r| {
            println!(
                "epoch {:>2}  loss {:.4}  train {:.3}  val {:.3}",
                r.epoch, r.train_loss, r.train_accuracy, r.val_accuracy
            )
        },
    )?;
    for cp in &outcome.top8 {
        println!("kept epoch {} (val {:.4})", cp.epoch, cp.val_accuracy);
    }
    Ok(())
}

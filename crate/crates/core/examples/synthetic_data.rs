//! Generate a small synthetic set, split it, preprocess to 64x64 and write
//! it in the on-disk layout.
//!
//!     cargo run --example synthetic_data -- /tmp/synthetic

use std::path::PathBuf;

use cnn_mixture::data::disk::{write_dataset, StoredMeans};
use cnn_mixture::data::{generate_synthetic, split_dataset, EpochPlan, SplitRatios, SynthConfig};
use cnn_mixture::rng::SessionRng;

fn main() -> cnn_mixture::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let config = SynthConfig {
        total_count: 400,
        seed: 7,
        ..SynthConfig::default()
    };
    let samples = generate_synthetic(&config)?;
    let positives = samples.iter().filter(|s| s.label == 1).count();
    println!("{} images, {positives} positive", samples.len());
    let sizes: Vec<String> = samples
        .iter()
        .take(5)
        .map(|s| format!("{}x{}", s.height(), s.width()))
        .collect();
    println!("first canvases: {}", sizes.join(", "));

    let raw = split_dataset(samples, SplitRatios::default(), 7)?;
    println!(
        "split: {} / {} / {}",
        raw.training.len(),
        raw.validation.len(),
        raw.testing.len()
    );

    let prepared = raw.clone().preprocessed(64)?;
    println!(
        "training channel means after preprocessing: {:?}",
        prepared.channel_means
    );
    let means = prepared.channel_means;
    let sets = prepared.into_prepared()?;
    let plan = EpochPlan::new(sets.training.len(), true, &mut SessionRng::new(0));
    println!(
        "an augmented epoch visits {} entries (2 x {})",
        plan.entries.len(),
        sets.training.len()
    );

    if let Some(dir) = out {
        write_dataset(&dir, &raw, &StoredMeans { input_side: 64, means })?;
        println!("wrote PNGs and manifest.csv under {}", dir.display());
    }
    Ok(())
}

//! Synthetic data generation, preprocessing, splitting and batching.

mod dataset;
pub mod disk;
mod preprocess;
mod split;
mod synth;

pub use dataset::{batch_iterator, Batch, Dataset, EpochPlan, PoolEntry};
pub use preprocess::{center_crop, channel_means, horizontal_flip, normalize, preprocess, resize_bilinear};
pub use split::{split_dataset, DatasetSplit, SplitRatios};
pub use synth::{generate_synthetic, SynthConfig};

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image with pixel values in `[0, 255]`, stored as `3 x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub pixels: Tensor<f32>,
    /// 0 or 1.
    pub label: u8,
    pub id: String,
}

impl ImageSample {
    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// Suffix marking a horizontally flipped copy of a sample.
pub const FLIP_SUFFIX: &str = "#flip";

/// Resizes and crops every sample to `side x side`, in parallel.
pub fn preprocess_all(samples: Vec<ImageSample>, side: usize) -> Result<Vec<ImageSample>> {
    samples
        .into_par_iter()
        .map(|s| {
            Ok(ImageSample {
                pixels: preprocess(&s.pixels, side)?,
                ..s
            })
        })
        .collect()
}

/// Normalized, fixed-size datasets for all three splits.
#[derive(Clone, Debug)]
pub struct PreparedSplits {
    pub training: Dataset,
    pub validation: Dataset,
    pub testing: Dataset,
    pub channel_means: [f64; 3],
}

impl PreparedSplits {
    pub fn get(&self, split: disk::SplitName) -> &Dataset {
        match split {
            disk::SplitName::Train => &self.training,
            disk::SplitName::Validation => &self.validation,
            disk::SplitName::Test => &self.testing,
        }
    }
}

impl DatasetSplit {
    /// Preprocesses every split to `side` and recomputes the channel means
    /// on the preprocessed training images.
    pub fn preprocessed(self, side: usize) -> Result<DatasetSplit> {
        let training = preprocess_all(self.training, side)?;
        let channel_means = channel_means(&training);
        Ok(DatasetSplit {
            training,
            validation: preprocess_all(self.validation, side)?,
            testing: preprocess_all(self.testing, side)?,
            channel_means,
        })
    }

    /// Normalizes already preprocessed splits with `self.channel_means`.
    pub fn into_prepared(self) -> Result<PreparedSplits> {
        let m = self.channel_means;
        Ok(PreparedSplits {
            training: Dataset::from_samples(&self.training, &m)?,
            validation: Dataset::from_samples(&self.validation, &m)?,
            testing: Dataset::from_samples(&self.testing, &m)?,
            channel_means: m,
        })
    }
}

/// Reads a dataset directory, preprocesses to `side` and normalizes with the
/// stored training means.
pub fn load_prepared(root: &Path, side: usize) -> Result<PreparedSplits> {
    let stored = disk::read_means(root)?;
    if stored.input_side != side {
        return Err(Error::arg(format!(
            "dataset means were computed at side {}, network expects {side}; regenerate the data",
            stored.input_side
        )));
    }
    let load = |name| -> Result<Vec<ImageSample>> { preprocess_all(disk::load_samples(root, name)?, side) };
    DatasetSplit {
        training: load(disk::SplitName::Train)?,
        validation: load(disk::SplitName::Validation)?,
        testing: load(disk::SplitName::Test)?,
        channel_means: stored.means,
    }
    .into_prepared()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_split() -> DatasetSplit {
        let cfg = SynthConfig {
            total_count: 120,
            canvas_size_range: [20, 40],
            seed: 9,
            ..SynthConfig::default()
        };
        split_dataset(generate_synthetic(&cfg).unwrap(), SplitRatios::default(), 9).unwrap()
    }

    #[test]
    fn prepared_training_split_has_zero_mean() {
        let prepared = small_split().preprocessed(16).unwrap().into_prepared().unwrap();
        let ds = &prepared.training;
        let plane = 16 * 16;
        for c in 0..3 {
            let mut sum = 0.0f64;
            for i in 0..ds.len() {
                sum += ds.sample(i)[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            assert!((sum / (ds.len() * plane) as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn disk_round_trip_matches_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let raw = small_split();
        let pre = raw.clone().preprocessed(16).unwrap();
        let means = disk::StoredMeans {
            input_side: 16,
            means: pre.channel_means,
        };
        disk::write_dataset(dir.path(), &raw, &means).unwrap();
        let loaded = load_prepared(dir.path(), 16).unwrap();
        let direct = pre.into_prepared().unwrap();
        assert_eq!(loaded.training, direct.training);
        assert_eq!(loaded.testing, direct.testing);
        assert!(load_prepared(dir.path(), 32).is_err());
    }
}

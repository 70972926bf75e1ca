use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{channel_means, ImageSample};
use crate::error::{Error, Result};
use crate::rng::SessionRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::config("data.split", "each ratio must lie in (0, 1)"));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("data.split", "ratios must sum to 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub training: Vec<ImageSample>,
    pub validation: Vec<ImageSample>,
    pub testing: Vec<ImageSample>,
    /// Means of `pixel / 255` over the training split only.
    pub channel_means: [f64; 3],
}

/// Stratified shuffle-split: each class is shuffled with `seed` and cut by
/// the ratios, so every split keeps the global positive fraction to within
/// one sample. Each split is returned in original sample order.
pub fn split_dataset(samples: Vec<ImageSample>, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    if samples.is_empty() {
        return Err(Error::arg("cannot split an empty sample set"));
    }
    let mut seen = HashSet::with_capacity(samples.len());
    for s in &samples {
        if s.label > 1 {
            return Err(Error::arg(format!("sample {} has non-binary label {}", s.id, s.label)));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(Error::arg(format!("duplicate sample id {}", s.id)));
        }
    }

    let mut rng = SessionRng::new(seed);
    let mut assignment = vec![0u8; samples.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == class).collect();
        rng.shuffle(&mut idx);
        let n = idx.len() as f64;
        let n_train = (n * ratios.train).round() as usize;
        let n_val = ((n * ratios.validation).round() as usize).min(idx.len() - n_train);
        for (k, &i) in idx.iter().enumerate() {
            assignment[i] = if k < n_train {
                0
            } else if k < n_train + n_val {
                1
            } else {
                2
            };
        }
    }

    let mut parts: [Vec<ImageSample>; 3] = Default::default();
    for (s, a) in samples.into_iter().zip(assignment) {
        parts[a as usize].push(s);
    }
    let [training, validation, testing] = parts;
    for (name, part) in [
        ("training", &training),
        ("validation", &validation),
        ("testing", &testing),
    ] {
        if part.is_empty() {
            return Err(Error::arg(format!("{name} split would be empty")));
        }
    }
    let channel_means = channel_means(&training);
    Ok(DatasetSplit {
        training,
        validation,
        testing,
        channel_means,
    })
}

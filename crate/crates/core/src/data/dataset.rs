use super::{normalize, ImageSample, FLIP_SUFFIX};
use crate::error::{Error, Result};
use crate::rng::SessionRng;
use crate::tensor::Tensor;

/// Normalized, equally sized samples held contiguously (`N x C x H x W`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sample_shape: [usize; 3],
    data: Vec<f32>,
    labels: Vec<u8>,
    ids: Vec<String>,
}

impl Dataset {
    /// Normalizes preprocessed samples with the given training-split means.
    pub fn from_samples(samples: &[ImageSample], channel_means: &[f64; 3]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::arg("dataset needs at least one sample"))?;
        let shape = first.pixels.shape().to_vec();
        let sample_shape = [shape[0], shape[1], shape[2]];
        let mut data = Vec::with_capacity(samples.len() * first.pixels.len());
        for s in samples {
            if s.pixels.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "sample {} has shape {:?}, expected {shape:?}",
                    s.id,
                    s.pixels.shape()
                )));
            }
            if s.label > 1 {
                return Err(Error::arg(format!("sample {} has non-binary label", s.id)));
            }
            data.extend_from_slice(normalize(&s.pixels, channel_means)?.data());
        }
        Ok(Self {
            sample_shape,
            data,
            labels: samples.iter().map(|s| s.label).collect(),
            ids: samples.iter().map(|s| s.id.clone()).collect(),
        })
    }

    /// Wraps already-normalized data.
    pub fn from_raw(sample_shape: [usize; 3], data: Vec<f32>, labels: Vec<u8>, ids: Vec<String>) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if labels.is_empty() || data.len() != per * labels.len() || ids.len() != labels.len() {
            return Err(Error::shape("dataset buffers do not line up"));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::arg("labels must be 0 or 1"));
        }
        Ok(Self {
            sample_shape,
            data,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.sample_shape
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn sample(&self, index: usize) -> &[f32] {
        let per: usize = self.sample_shape.iter().product();
        &self.data[index * per..(index + 1) * per]
    }

    /// Stacks the given pool entries into a batch tensor.
    pub fn gather(&self, entries: &[PoolEntry]) -> Result<Batch> {
        let per: usize = self.sample_shape.iter().product();
        let w = self.sample_shape[2];
        let mut data = Vec::with_capacity(entries.len() * per);
        for e in entries {
            let src = self.sample(e.index);
            if e.flipped {
                for row in src.chunks(w) {
                    data.extend(row.iter().rev());
                }
            } else {
                data.extend_from_slice(src);
            }
        }
        let [c, h, w] = self.sample_shape;
        Ok(Batch {
            inputs: Tensor::new(vec![entries.len(), c, h, w], data)?,
            labels: entries.iter().map(|e| self.labels[e.index] as f32).collect(),
            ids: entries.iter().map(|e| e.id(self)).collect(),
        })
    }

    /// Contiguous `[start, end)` slice as a batch, without augmentation.
    pub fn range_batch(&self, start: usize, end: usize) -> Result<Batch> {
        let entries: Vec<PoolEntry> = (start..end.min(self.len()))
            .map(|index| PoolEntry { index, flipped: false })
            .collect();
        self.gather(&entries)
    }
}

/// One element of an epoch's sample pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolEntry {
    pub index: usize,
    pub flipped: bool,
}

impl PoolEntry {
    /// Sample id, with a flip suffix for augmented copies.
    pub fn id(&self, dataset: &Dataset) -> String {
        let base = &dataset.ids[self.index];
        if self.flipped {
            format!("{base}{FLIP_SUFFIX}")
        } else {
            base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B x C x H x W`.
    pub inputs: Tensor<f32>,
    pub labels: Vec<f32>,
    pub ids: Vec<String>,
}

/// Shuffled sample pool for one epoch; with augmentation every sample also
/// appears as a flipped copy, doubling the pool.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochPlan {
    pub entries: Vec<PoolEntry>,
}

impl EpochPlan {
    pub fn new(len: usize, augment: bool, rng: &mut SessionRng) -> Self {
        let mut entries: Vec<PoolEntry> = (0..len)
            .flat_map(|index| {
                let plain = PoolEntry { index, flipped: false };
                let flipped = augment.then_some(PoolEntry { index, flipped: true });
                std::iter::once(plain).chain(flipped)
            })
            .collect();
        rng.shuffle(&mut entries);
        Self { entries }
    }

    pub fn batch_count(&self, batch_size: usize) -> usize {
        self.entries.len().div_ceil(batch_size)
    }
}

/// Batches of one freshly shuffled epoch. The final batch may be short.
pub fn batch_iterator<'a>(
    dataset: &'a Dataset,
    batch_size: usize,
    augment: bool,
    rng: &mut SessionRng,
) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    if batch_size == 0 {
        return Err(Error::arg("batch_size must be at least 1"));
    }
    let plan = EpochPlan::new(dataset.len(), augment, rng);
    Ok((0..plan.batch_count(batch_size)).map(move |b| {
        let end = ((b + 1) * batch_size).min(plan.entries.len());
        dataset.gather(&plan.entries[b * batch_size..end])
    }))
}

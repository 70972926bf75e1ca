//! Single-session training with improvement-only checkpoint harvesting.

mod checkpoint;
mod harvest;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use harvest::{Checkpoint, CheckpointHarvester, TOP_K};

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{build_network, Mode, ModelState, NetworkSpec};
use crate::ops::sigmoid_scalar;
use crate::optim::{AdamConfig, AdamState, LossConfig};
use crate::rng::SessionRng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Samples per inference batch when scoring a dataset.
const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Supplied by the run-level seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub checkpoint_capacity: usize,
    /// Adds a horizontally flipped copy of every training image each epoch.
    pub augment: bool,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            seed: 0,
            checkpoint_capacity: TOP_K,
            augment: true,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.checkpoint_capacity < TOP_K {
            return Err(Error::config(
                "train.checkpoint_capacity",
                format!("must be at least {TOP_K}, got {}", self.checkpoint_capacity),
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("train.threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    pub records: Vec<EpochRecord>,
}

impl TrainingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.8},{:.6},{:.6}\n",
                r.epoch, r.train_loss, r.train_accuracy, r.val_accuracy
            ));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Up to eight checkpoints, ascending in validation accuracy.
    pub top8: Vec<Checkpoint>,
    pub curve: TrainingCurve,
    pub improvements: usize,
}

impl TrainOutcome {
    /// The highest-accuracy snapshot of the session.
    pub fn best(&self) -> &Checkpoint {
        self.top8.last().expect("training always keeps at least one checkpoint")
    }
}

/// Optimizer and loss settings shared by every step of a session.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Objective {
    pub loss: LossConfig,
    pub adam: AdamConfig,
}

/// Builds a fresh network from `spec` and trains it.
pub fn train(
    spec: &NetworkSpec,
    training: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
    objective: &Objective,
) -> Result<TrainOutcome> {
    train_with(spec, training, validation, config, objective, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    spec: &NetworkSpec,
    training: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
    objective: &Objective,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    objective.loss.validate()?;
    objective.adam.validate()?;
    if training.is_empty() || validation.is_empty() {
        return Err(Error::arg("training and validation sets must be nonempty"));
    }
    for (name, ds) in [("training", training), ("validation", validation)] {
        if ds.sample_shape() != spec.input_size {
            return Err(Error::shape(format!(
                "{name} samples are {:?}, network expects {:?}",
                ds.sample_shape(),
                spec.input_size
            )));
        }
    }
    if training.ids().iter().any(|id| validation.ids().contains(id)) {
        return Err(Error::arg("training and validation sets overlap"));
    }

    let mut root = SessionRng::new(config.seed);
    let mut init_rng = root.split();
    let mut order_rng = root.split();
    let mut dropout_rng = root.split();

    let mut model: ModelState<f32> = build_network(spec, &mut init_rng)?;
    let mut adam = AdamState::new(objective.adam, model.parameters());
    let mut harvester = CheckpointHarvester::new(config.checkpoint_capacity)?;
    let mut curve = TrainingCurve::default();

    for epoch in 1..=config.epochs {
        let (train_loss, train_accuracy) = run_epoch(
            &mut model,
            &mut adam,
            training,
            config,
            &objective.loss,
            &mut order_rng,
            &mut dropout_rng,
        )?;
        let val_accuracy = validate_accuracy(&model, validation, config.threshold)?;
        let saved = harvester.observe(epoch, val_accuracy, || model.clone());
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_accuracy,
        };
        info!(
            "epoch {epoch}: loss {train_loss:.5} train_acc {train_accuracy:.4} val_acc {val_accuracy:.4}{}",
            if saved { " (checkpoint)" } else { "" }
        );
        on_epoch(&record);
        curve.records.push(record);
    }

    let improvements = harvester.improvements();
    Ok(TrainOutcome {
        top8: harvester.top(),
        curve,
        improvements,
    })
}

fn run_epoch(
    model: &mut ModelState<f32>,
    adam: &mut AdamState<f32>,
    training: &Dataset,
    config: &TrainConfig,
    loss_cfg: &LossConfig,
    order_rng: &mut SessionRng,
    dropout_rng: &mut SessionRng,
) -> Result<(f64, f64)> {
    let fc1 = model.fc1_index();
    let coef = loss_cfg.l2_coefficient as f32;
    let eps = loss_cfg.clamp_epsilon as f32;
    let threshold = config.threshold as f32;
    let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);

    for batch in crate::data::batch_iterator(training, config.batch_size, config.augment, order_rng)? {
        let batch = batch?;
        let b = batch.labels.len();
        let mut tape = Tape::new();
        let (logits, params) = model.record(&mut tape, batch.inputs, &mut Mode::Train(dropout_rng))?;
        let mut loss = tape.bce_with_logits(logits, &batch.labels, eps)?;
        if coef > 0.0 {
            let penalty = tape.sum_squares(params[fc1], coef);
            loss = tape.add(loss, penalty)?;
        }
        let value = tape.value(loss).item()? as f64;
        if !value.is_finite() {
            return Err(Error::Format(format!("training loss became non-finite ({value})")));
        }
        loss_sum += value * b as f64;
        seen += b;
        correct += tape
            .value(logits)
            .data()
            .iter()
            .zip(&batch.labels)
            .filter(|(&z, &y)| (sigmoid_scalar(z) >= threshold) == (y > 0.5))
            .count();

        let mut grads = tape.backward(loss)?;
        for (p, var) in model.parameters_mut().iter_mut().zip(&params) {
            let g = grads
                .take(*var)
                .ok_or_else(|| Error::shape("parameter received no gradient"))?;
            p.set_grad(g.into_data())?;
        }
        adam.step(model.parameters_mut())?;
        model.parameters_mut().iter_mut().for_each(Tensor::clear_grad);
    }
    Ok((loss_sum / seen as f64, correct as f64 / seen as f64))
}

/// Inference-mode probabilities for every sample, in dataset order.
pub fn predict_dataset(model: &ModelState<f32>, dataset: &Dataset) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(dataset.len());
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + EVAL_BATCH).min(dataset.len());
        let batch = dataset.range_batch(start, end)?;
        out.extend_from_slice(model.predict(batch.inputs)?.data());
        start = end;
    }
    Ok(out)
}

/// Fraction of samples whose thresholded prediction (`p >= threshold` is
/// class 1) matches the label. Dropout is off.
pub fn validate_accuracy(model: &ModelState<f32>, dataset: &Dataset, threshold: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::arg("cannot validate on an empty dataset"));
    }
    let probs = predict_dataset(model, dataset)?;
    Ok(accuracy_at(&probs, dataset.labels(), threshold))
}

pub(crate) fn accuracy_at(probs: &[f32], labels: &[u8], threshold: f64) -> f64 {
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p as f64 >= threshold) == (y == 1))
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_size: [3, 8, 8],
            conv_channels: vec![4, 4],
            fc_width: 8,
            dropout_probs: vec![0.1, 0.1, 0.2],
            l2_fc1: 0.01,
            pool_after: vec![1, 2],
            conv_stride: 1,
        }
    }

    /// Bright-red images are positive, dark ones negative.
    fn toy(n: usize, offset: usize) -> Dataset {
        let plane = 64;
        let mut data = Vec::with_capacity(n * 3 * plane);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = (i % 2) as u8;
            for c in 0..3 {
                for k in 0..plane {
                    let base = if y == 1 && c == 0 { 0.6 } else { -0.2 };
                    data.push(base + 0.05 * (((i + k + c) % 7) as f32 - 3.0) / 3.0);
                }
            }
            labels.push(y);
        }
        let ids = (0..n).map(|i| format!("t{}", i + offset)).collect();
        Dataset::from_raw([3, 8, 8], data, labels, ids).unwrap()
    }

    #[test]
    fn zero_model_predicts_half_and_ties_go_positive() {
        let model = build_network::<f32>(&tiny_spec(), &mut SessionRng::new(0))
            .unwrap()
            .zeroed();
        let ds = toy(10, 0);
        let acc = validate_accuracy(&model, &ds, 0.5).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn accuracy_rule_examples() {
        assert_eq!(accuracy_at(&[0.5 - 1e-6; 4], &[0; 4], 0.5), 1.0);
        assert_eq!(accuracy_at(&[0.3; 4], &[0, 1, 0, 1], 0.5), 0.5);
    }

    #[test]
    fn toy_training_learns_and_is_deterministic() {
        let (tr, va) = (toy(40, 0), toy(20, 100));
        let config = TrainConfig {
            epochs: 6,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let obj = Objective {
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            ..Objective::default()
        };
        let a = train(&tiny_spec(), &tr, &va, &config, &obj).unwrap();
        let b = train(&tiny_spec(), &tr, &va, &config, &obj).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.top8.len(), b.top8.len());
        for (x, y) in a.top8.iter().zip(&b.top8) {
            assert_eq!(x.model, y.model);
        }
        let recs = &a.curve.records;
        assert_eq!(recs.len(), 6);
        assert!(recs.last().unwrap().train_accuracy > recs[0].train_accuracy);
        assert!(a.top8.windows(2).all(|w| w[0].val_accuracy < w[1].val_accuracy));
        assert_eq!(a.top8.len(), a.improvements.min(TOP_K));
        assert_eq!(a.curve.to_csv().lines().count(), 7);
    }

    #[test]
    fn rejects_empty_or_overlapping_sets() {
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let ds = toy(4, 0);
        assert!(Dataset::from_raw([3, 8, 8], vec![], vec![], vec![]).is_err());
        assert!(train(&tiny_spec(), &ds, &ds, &config, &Objective::default()).is_err());
    }

    #[test]
    fn invalid_train_config_names_field() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("train.batch_size"));
        let bad = TrainConfig {
            checkpoint_capacity: 4,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

//! Binary cross-entropy, the fc1 weight penalty and the Adam update rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::ops::sigmoid_scalar;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Coefficient of the squared-norm penalty on the fc1 weights.
    #[serde(rename = "l2_fc1")]
    pub l2_coefficient: f64,
    /// Predictions are clamped to `[eps, 1 - eps]` before taking logs.
    pub clamp_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            l2_coefficient: 0.01,
            clamp_epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_coefficient >= 0.0 && self.l2_coefficient.is_finite()) {
            return Err(Error::config("loss.l2_fc1", "must be a nonnegative number"));
        }
        if !(self.clamp_epsilon > 0.0 && self.clamp_epsilon <= 1e-3) {
            return Err(Error::config("loss.clamp_epsilon", "must lie in (0, 1e-3]"));
        }
        Ok(())
    }
}

fn check_labels<T: Scalar>(predictions: usize, labels: &[T]) -> Result<()> {
    if predictions != labels.len() || labels.is_empty() {
        return Err(Error::shape(format!(
            "{predictions} predictions for {} labels",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != T::zero() && y != T::one()) {
        return Err(Error::arg(format!("label {bad} is not 0 or 1")));
    }
    Ok(())
}

#[inline]
fn clamp<T: Scalar>(f: T, eps: T) -> T {
    f.max(eps).min(T::one() - eps)
}

/// Mean of `-[y ln f + (1 - y) ln(1 - f)]` over the batch.
pub fn bce_forward<T: Scalar>(predictions: &[T], labels: &[T], eps: T) -> Result<T> {
    check_labels(predictions.len(), labels)?;
    let total: T = predictions
        .iter()
        .zip(labels)
        .map(|(&f, &y)| {
            let f = clamp(f, eps);
            -(y * f.ln() + (T::one() - y) * (T::one() - f).ln())
        })
        .sum();
    Ok(total / T::from_f64(labels.len() as f64))
}

/// Derivative of [`bce_forward`] with respect to each prediction, evaluated at
/// the clamped value.
pub fn bce_backward<T: Scalar>(predictions: &[T], labels: &[T], eps: T) -> Result<Vec<T>> {
    check_labels(predictions.len(), labels)?;
    let n = T::from_f64(labels.len() as f64);
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(&f, &y)| {
            let f = clamp(f, eps);
            (f - y) / (f * (T::one() - f)) / n
        })
        .collect())
}

/// Loss of `sigmoid(logits)` against `labels`, plus its logit gradient
/// `(sigmoid(z) - y) / B`.
pub fn bce_with_logits<T: Scalar>(logits: &[T], labels: &[T], eps: T) -> Result<(T, Vec<T>)> {
    let probs: Vec<T> = logits.iter().map(|&z| sigmoid_scalar(z)).collect();
    let loss = bce_forward(&probs, labels, eps)?;
    let n = T::from_f64(labels.len() as f64);
    let grad = probs.iter().zip(labels).map(|(&p, &y)| (p - y) / n).collect();
    Ok((loss, grad))
}

/// Tensor-level binary cross-entropy using `config.clamp_epsilon`.
pub fn bce_loss<T: Scalar>(predictions: &Tensor<T>, labels: &Tensor<T>, config: &LossConfig) -> Result<T> {
    bce_forward(predictions.data(), labels.data(), T::from_f64(config.clamp_epsilon))
}

/// `l2_coefficient * sum(fc1.w^2)`; no other parameter is penalized.
pub fn l2_penalty<T: Scalar>(model: &ModelState<T>, config: &LossConfig) -> f64 {
    let w = model.fc1_weights();
    config.l2_coefficient * w.data().iter().map(|&x| x.as_f64() * x.as_f64()).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("optim.lr", "must be positive"));
        }
        for (name, b) in [("optim.beta1", self.beta1), ("optim.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("optim.eps", "must be positive"));
        }
        Ok(())
    }
}

/// First/second moment estimates for every parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// Applies one bias-corrected Adam update using each parameter's `grad`.
    pub fn step(&mut self, params: &mut [Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.m[i].len() {
                return Err(Error::shape(format!("parameter {i} changed length")));
            }
            if p.grad().is_none() {
                return Err(Error::arg(format!("parameter {i} has no gradient")));
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.t as i32));
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));

        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad().map(<[T]>::to_vec).unwrap_or_default();
            for (((theta, m), v), g) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

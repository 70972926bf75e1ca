//! Central-difference verification of analytic gradients (double precision).

use crate::error::{Error, Result};
use crate::model::{Mode, ModelState};
use crate::rng::SessionRng;
use crate::tape::{GradientFault, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Pass iff every checked relative error is below this.
    pub tol: f64,
    /// Parameters sampled per block; smaller blocks are checked exhaustively.
    pub samples_per_block: usize,
    /// Denominator floor for the relative error. With `h = 1e-6` the
    /// difference quotient carries roughly 1e-9 of rounding noise, so
    /// gradients below the floor are effectively compared absolutely.
    pub abs_floor: f64,
    pub seed: u64,
    pub fault: Option<GradientFault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-6,
            tol: 1e-5,
            samples_per_block: 100,
            abs_floor: 1e-3,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` on a sampled
/// subset of every parameter block. `params` is perturbed in place and
/// restored afterwards.
pub fn check_gradients<F>(
    names: &[String],
    params: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    mut loss: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    if names.len() != params.len() || analytic.len() != params.len() {
        return Err(Error::shape("names, parameters and gradients must align"));
    }
    let mut rng = SessionRng::new(config.seed);
    let mut blocks = Vec::with_capacity(params.len());
    for b in 0..params.len() {
        if analytic[b].len() != params[b].len() {
            return Err(Error::shape(format!("gradient of {} has the wrong length", names[b])));
        }
        let mut indices: Vec<usize> = (0..params[b].len()).collect();
        if indices.len() > config.samples_per_block {
            rng.shuffle(&mut indices);
            indices.truncate(config.samples_per_block);
            indices.sort_unstable();
        }
        let mut report = BlockReport {
            name: names[b].clone(),
            checked: indices.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: indices.first().copied().unwrap_or(0),
        };
        for &i in &indices {
            let orig = params[b].data()[i];
            params[b].data_mut()[i] = orig + config.h;
            let up = loss(params);
            params[b].data_mut()[i] = orig - config.h;
            let down = loss(params);
            params[b].data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * config.h);
            report.max_abs_error = report.max_abs_error.max((analytic[b].data()[i] - numeric).abs());
            let err = relative_error(analytic[b].data()[i], numeric, config.abs_floor);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst_index = i;
            }
        }
        blocks.push(report);
    }
    Ok(GradCheckReport {
        blocks,
        tol: config.tol,
    })
}

/// Training loss used by the checker: mean BCE of the inference-mode
/// network plus the fc1 penalty from the spec.
fn network_loss(
    model: &ModelState<f64>,
    input: &Tensor<f64>,
    labels: &[f64],
    fault: Option<GradientFault>,
) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut tape = match fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let (logits, params) = model.record(&mut tape, input.clone(), &mut Mode::Inference)?;
    let mut loss = tape.bce_with_logits(logits, labels, 1e-12)?;
    if model.spec().l2_fc1 > 0.0 {
        let pen = tape.sum_squares(params[model.fc1_index()], model.spec().l2_fc1);
        loss = tape.add(loss, pen)?;
    }
    let value = tape.value(loss).item()?;
    let mut grads = tape.backward(loss)?;
    let grads = params
        .iter()
        .map(|&v| {
            grads
                .take(v)
                .ok_or_else(|| Error::shape("parameter received no gradient"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((value, grads))
}

/// Gradient check of the full network with dropout disabled. `input` is a
/// `B x C x H x W` batch with one 0/1 label per sample.
pub fn gradient_check(
    model: &ModelState<f64>,
    input: &Tensor<f64>,
    labels: &[f64],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let (_, analytic) = network_loss(model, input, labels, config.fault)?;
    let names = model.names().to_vec();
    let spec = model.spec().clone();
    let mut params = model.parameters().to_vec();
    check_gradients(
        &names,
        &mut params,
        &analytic,
        |p| {
            let m = ModelState::from_parameters(spec.clone(), p.to_vec())?;
            Ok(network_loss(&m, input, labels, None)?.0)
        },
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, NetworkSpec};

    #[test]
    fn linear_least_squares_is_exact() {
        // loss = 0.5 * sum((W x - t)^2); gradient (W x - t) x^T
        let x = [0.5, -1.5, 2.0];
        let t = [1.0, -0.25];
        let w = Tensor::new(vec![2, 3], vec![0.3, -0.2, 0.1, 0.7, 0.05, -0.4]).unwrap();
        let loss = |p: &[Tensor<f64>]| -> Result<f64> {
            let w = p[0].data();
            Ok((0..2)
                .map(|r| {
                    let y: f64 = (0..3).map(|c| w[r * 3 + c] * x[c]).sum();
                    0.5 * (y - t[r]).powi(2)
                })
                .sum())
        };
        let mut grad = vec![0.0; 6];
        for r in 0..2 {
            let y: f64 = (0..3).map(|c| w.data()[r * 3 + c] * x[c]).sum();
            for c in 0..3 {
                grad[r * 3 + c] = (y - t[r]) * x[c];
            }
        }
        let analytic = vec![Tensor::new(vec![2, 3], grad).unwrap()];
        let cfg = GradCheckConfig {
            h: 1e-3,
            tol: 1e-10,
            abs_floor: 1e-12,
            ..Default::default()
        };
        let report = check_gradients(&["w".into()], &mut [w], &analytic, loss, &cfg).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_rel_error() < 1e-10);
    }

    fn small_setup() -> (ModelState<f64>, Tensor<f64>, Vec<f64>) {
        let spec = NetworkSpec::with_input_side(16);
        let model = build_network::<f64>(&spec, &mut SessionRng::new(21)).unwrap();
        let mut rng = SessionRng::new(22);
        let x = Tensor::from_fn(vec![2, 3, 16, 16], |_| rng.range(-2.0, 2.0));
        (model, x, vec![1.0, 0.0])
    }

    #[test]
    fn small_network_passes() {
        let (model, x, y) = small_setup();
        let report = gradient_check(&model, &x, &y, &GradCheckConfig::default()).unwrap();
        assert!(report.passed(), "{report:#?}");
        assert_eq!(report.blocks.len(), 16);
        assert!(report
            .blocks
            .iter()
            .all(|b| b.checked >= 100.min(model.parameter(&b.name).unwrap().len())));
    }

    #[test]
    fn corrupted_conv_backward_is_caught() {
        let (model, x, y) = small_setup();
        let cfg = GradCheckConfig {
            fault: Some(GradientFault::ScaleConvKernelGrad(1.01)),
            ..Default::default()
        };
        let report = gradient_check(&model, &x, &y, &cfg).unwrap();
        assert!(!report.passed());
        assert!(report.blocks[0].max_rel_error > 1e-3);
    }
}

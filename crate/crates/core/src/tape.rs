//! Reverse-mode differentiation over a linear tape of recorded operations.

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeometry, PoolIndices};
use crate::optim;
use crate::rng::SessionRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate gradient corruption, used to confirm that gradient checking
/// actually detects a broken backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientFault {
    /// Multiplies every convolution kernel gradient by the given factor.
    ScaleConvKernelGrad(f64),
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    MaxPool {
        input: Var,
        indices: PoolIndices,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Dropout {
        input: Var,
        mask: Option<Vec<T>>,
    },
    Reshape {
        input: Var,
    },
    Bce {
        predictions: Var,
        labels: Vec<T>,
        eps: T,
    },
    BceLogits {
        logits: Var,
        grad: Vec<T>,
    },
    SumSquares {
        input: Var,
        coef: T,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Sum {
        input: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    fault: Option<GradientFault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn with_fault(fault: GradientFault) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    /// Records an input. Parameters pass `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, geom: ConvGeometry) -> Result<Var> {
        let y = ops::conv2d_forward(self.value(input), self.value(kernels), self.value(bias), geom)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
            },
            &[input, kernels, bias],
        ))
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (y, indices) = ops::maxpool2x2_forward(self.value(input))?;
        Ok(self.push(y, Op::MaxPool { input, indices }, &[input]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let y = ops::relu(self.value(input));
        self.push(y, Op::Relu { input }, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let y = ops::sigmoid(self.value(input));
        self.push(y, Op::Sigmoid { input }, &[input])
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let y = ops::dense_forward(self.value(input), self.value(weights), self.value(bias))?;
        Ok(self.push(y, Op::Dense { input, weights, bias }, &[input, weights, bias]))
    }

    pub fn dropout(&mut self, input: Var, p: f64, training: bool, rng: Option<&mut SessionRng>) -> Result<Var> {
        let (y, mask) = ops::dropout_apply(self.value(input), p, training, rng)?;
        Ok(self.push(y, Op::Dropout { input, mask }, &[input]))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let y = ops::flatten(self.value(input))?;
        Ok(self.push(y, Op::Reshape { input }, &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let y = self.value(input).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { input }, &[input]))
    }

    /// Mean binary cross-entropy of `predictions` against 0/1 `labels`.
    pub fn bce(&mut self, predictions: Var, labels: &[T], eps: T) -> Result<Var> {
        let loss = optim::bce_forward(self.value(predictions).data(), labels, eps)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                predictions,
                labels: labels.to_vec(),
                eps,
            },
            &[predictions],
        ))
    }

    /// Fused sigmoid + mean binary cross-entropy on raw logits. The logit
    /// gradient is `(sigmoid(z) - y) / B`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T], eps: T) -> Result<Var> {
        let (loss, grad) = optim::bce_with_logits(self.value(logits).data(), labels, eps)?;
        Ok(self.push(Tensor::scalar(loss), Op::BceLogits { logits, grad }, &[logits]))
    }

    /// `coef * sum(x^2)`.
    pub fn sum_squares(&mut self, input: Var, coef: T) -> Var {
        let s: T = self.value(input).data().iter().map(|&x| x * x).sum();
        self.push(Tensor::scalar(coef * s), Op::SumSquares { input, coef }, &[input])
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::shape(format!("add of {:?} and {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let y = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.push(y, Op::Add { lhs, rhs }, &[lhs, rhs]))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: T = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { input }, &[input])
    }

    /// Back-propagates from a one-element `loss`. Gradients are retained for
    /// leaves only; intermediate gradients are freed as the sweep passes them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (var, contribution) in self.node_backward(node, &g)? {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                accumulate(&mut grads[var.0], contribution)?;
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
            } => {
                let need_input = self.nodes[input.0].requires_grad;
                let mut cg = ops::conv2d_backward(self.value(*input), self.value(*kernels), g, *geom, need_input)?;
                if let Some(GradientFault::ScaleConvKernelGrad(f)) = self.fault {
                    let f = T::from_f64(f);
                    cg.kernels.data_mut().iter_mut().for_each(|v| *v = *v * f);
                }
                let mut v = vec![(*kernels, cg.kernels), (*bias, cg.bias)];
                if let Some(dx) = cg.input {
                    v.push((*input, dx));
                }
                v
            }
            Op::MaxPool { input, indices } => {
                vec![(
                    *input,
                    ops::maxpool2x2_backward(g, indices, self.value(*input).shape())?,
                )]
            }
            Op::Relu { input } => vec![(*input, ops::relu_backward(self.value(*input), g)?)],
            Op::Sigmoid { input } => vec![(*input, ops::sigmoid_backward(&node.value, g)?)],
            Op::Dense { input, weights, bias } => {
                let dg = ops::dense_backward(self.value(*input), self.value(*weights), g)?;
                vec![(*input, dg.input), (*weights, dg.weights), (*bias, dg.bias)]
            }
            Op::Dropout { input, mask } => {
                let dx = match mask {
                    Some(m) => {
                        let data = g.data().iter().zip(m).map(|(&a, &b)| a * b).collect();
                        Tensor::new(g.shape().to_vec(), data)?
                    }
                    None => g.clone(),
                };
                vec![(*input, dx)]
            }
            Op::Reshape { input } => {
                vec![(*input, g.clone().reshape(self.value(*input).shape().to_vec())?)]
            }
            Op::Bce {
                predictions,
                labels,
                eps,
            } => {
                let upstream = g.item()?;
                let mut d = optim::bce_backward(self.value(*predictions).data(), labels, *eps)?;
                d.iter_mut().for_each(|v| *v = *v * upstream);
                vec![(*predictions, Tensor::new(self.value(*predictions).shape().to_vec(), d)?)]
            }
            Op::BceLogits { logits, grad } => {
                let upstream = g.item()?;
                let d = grad.iter().map(|&v| v * upstream).collect();
                vec![(*logits, Tensor::new(self.value(*logits).shape().to_vec(), d)?)]
            }
            Op::SumSquares { input, coef } => {
                let scale = g.item()? * (*coef + *coef);
                vec![(*input, self.value(*input).map(|x| x * scale))]
            }
            Op::Add { lhs, rhs } => vec![(*lhs, g.clone()), (*rhs, g.clone())],
            Op::Sum { input } => {
                let upstream = g.item()?;
                vec![(*input, Tensor::full(self.value(*input).shape().to_vec(), upstream))]
            }
        };
        Ok(out)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, contribution: Tensor<T>) -> Result<()> {
    match slot {
        None => *slot = Some(contribution),
        Some(existing) => {
            if existing.len() != contribution.len() {
                return Err(Error::shape("gradient accumulation length mismatch"));
            }
            existing
                .data_mut()
                .iter_mut()
                .zip(contribution.data())
                .for_each(|(a, &b)| *a = *a + b);
        }
    }
    Ok(())
}

//! The six-convolution, two-dense-layer binary classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{ConvGeometry, KERNEL};
use crate::rng::SessionRng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Declarative description of the layer stack.
///
/// Convolution `i` (1-based) is followed by ReLU, and when `i` is listed in
/// `pool_after`, by 2x2 max pooling and dropout. After the last convolution
/// the features are flattened into `fc1` (ReLU, dropout) and a single-unit
/// output layer whose logit goes through a sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[channels, height, width]`.
    pub input_size: [usize; 3],
    pub conv_channels: Vec<usize>,
    pub fc_width: usize,
    /// One probability per pooling site, then one for fc1.
    pub dropout_probs: Vec<f64>,
    pub l2_fc1: f64,
    /// 1-based indices of the convolutions followed by pooling.
    pub pool_after: Vec<usize>,
    /// Convolution stride. Anything other than 1 shrinks feature maps and is
    /// only kept for experimentation.
    pub conv_stride: usize,
}

impl NetworkSpec {
    /// Full-size configuration: 3x128x128 input, channels 16..128.
    pub fn full_scale() -> Self {
        Self {
            input_size: [3, 128, 128],
            conv_channels: vec![16, 32, 32, 64, 64, 128],
            fc_width: 128,
            dropout_probs: vec![0.1, 0.2, 0.3, 0.4, 0.4],
            l2_fc1: 0.01,
            pool_after: vec![1, 2, 4, 6],
            conv_stride: 1,
        }
    }

    /// Same stack on a smaller square input.
    pub fn with_input_side(side: usize) -> Self {
        Self {
            input_size: [3, side, side],
            ..Self::full_scale()
        }
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            stride: self.conv_stride,
            pad: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.input_size.contains(&0) {
            return bad(format!("input_size {:?} has a zero extent", self.input_size));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad("conv_channels must be nonempty and positive".into());
        }
        if self.conv_channels.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!(
                "conv_channels {:?} must be monotonically nondecreasing",
                self.conv_channels
            ));
        }
        if self.fc_width == 0 {
            return bad("fc_width must be positive".into());
        }
        if self.pool_after.windows(2).any(|w| w[1] <= w[0])
            || self.pool_after.iter().any(|&i| i == 0 || i > self.conv_channels.len())
        {
            return bad(format!(
                "pool_after {:?} must be strictly increasing conv indices in 1..={}",
                self.pool_after,
                self.conv_channels.len()
            ));
        }
        if self.dropout_probs.len() != self.pool_after.len() + 1 {
            return bad(format!(
                "dropout_probs needs {} entries (one per pool plus fc1), got {}",
                self.pool_after.len() + 1,
                self.dropout_probs.len()
            ));
        }
        if let Some(p) = self.dropout_probs.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return bad(format!("dropout probability {p} outside [0, 1)"));
        }
        if !(self.l2_fc1 >= 0.0 && self.l2_fc1.is_finite()) {
            return bad("l2_fc1 must be nonnegative".into());
        }
        if self.conv_stride == 0 {
            return bad("conv_stride must be positive".into());
        }
        if self.conv_stride == 1 {
            let div = 1usize << self.pool_after.len();
            let [_, h, w] = self.input_size;
            if h % div != 0 || w % div != 0 {
                return bad(format!(
                    "input height and width must be divisible by {div} for {} pooling stages, got {h}x{w}",
                    self.pool_after.len()
                ));
            }
        }
        self.feature_shape().map(|_| ())
    }

    /// Shape of the feature bank entering `fc1`.
    pub fn feature_shape(&self) -> Result<[usize; 3]> {
        let geom = self.geometry();
        let [_, mut h, mut w] = self.input_size;
        for (i, _) in self.conv_channels.iter().enumerate() {
            h = geom.output_extent(h).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            w = geom.output_extent(w).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            if self.pool_after.contains(&(i + 1)) {
                if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "pooling after conv{} sees odd extent {h}x{w}",
                        i + 1
                    )));
                }
                h /= 2;
                w /= 2;
            }
        }
        Ok([*self.conv_channels.last().unwrap_or(&0), h, w])
    }

    pub fn flatten_len(&self) -> Result<usize> {
        Ok(self.feature_shape()?.iter().product())
    }

    /// Parameter names and shapes in serialization order.
    pub fn parameter_layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut out = Vec::new();
        let mut c_in = self.input_size[0];
        for (i, &c) in self.conv_channels.iter().enumerate() {
            out.push((format!("conv{}.w", i + 1), vec![c, c_in, KERNEL, KERNEL]));
            out.push((format!("conv{}.b", i + 1), vec![c]));
            c_in = c;
        }
        let flat = self.flatten_len()?;
        out.push(("fc1.w".into(), vec![self.fc_width, flat]));
        out.push(("fc1.b".into(), vec![self.fc_width]));
        out.push(("out.w".into(), vec![1, self.fc_width]));
        out.push(("out.b".into(), vec![1]));
        Ok(out)
    }
}

/// Forward-pass mode. Training mode applies dropout with the given generator.
pub enum Mode<'a> {
    Train(&'a mut SessionRng),
    Inference,
}

/// Concrete parameter values for a [`NetworkSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T = f32> {
    spec: NetworkSpec,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Allocates the network and draws He-uniform weights (`U(-a, a)`,
/// `a = sqrt(6 / fan_in)`); biases start at zero.
pub fn build_network<T: Scalar>(spec: &NetworkSpec, rng: &mut SessionRng) -> Result<ModelState<T>> {
    spec.validate()?;
    let layout = spec.parameter_layout()?;
    let mut names = Vec::with_capacity(layout.len());
    let mut params = Vec::with_capacity(layout.len());
    for (name, shape) in layout {
        let t = if name.ends_with(".w") {
            let fan_in: usize = shape[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| T::from_f64(rng.range(-limit, limit)))
        } else {
            Tensor::zeros(shape)
        };
        names.push(name);
        params.push(t);
    }
    Ok(ModelState {
        spec: spec.clone(),
        names,
        params,
    })
}

impl<T: Scalar> ModelState<T> {
    /// Assembles a model from explicit parameter tensors, checking every shape.
    pub fn from_parameters(spec: NetworkSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.parameter_layout()?;
        if layout.len() != params.len() {
            return Err(Error::shape(format!(
                "spec needs {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "{name} has shape {:?}, spec requires {shape:?}",
                    p.shape()
                )));
            }
        }
        let names = layout.into_iter().map(|(n, _)| n).collect();
        Ok(Self { spec, names, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parameters(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn fc1_index(&self) -> usize {
        2 * self.spec.conv_channels.len()
    }

    pub fn fc1_weights(&self) -> &Tensor<T> {
        &self.params[self.fc1_index()]
    }

    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            spec: self.spec.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Sets every parameter to zero.
    pub fn zeroed(mut self) -> Self {
        for p in &mut self.params {
            p.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        self
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        match batch.shape() {
            [_, c, h, w] if [*c, *h, *w] == self.spec.input_size => Ok(()),
            s => Err(Error::shape(format!(
                "batch shape {s:?} does not match B x {:?}",
                self.spec.input_size
            ))),
        }
    }

    /// Records the forward pass on `tape`, returning the `B` logits and the
    /// parameter leaves in serialization order.
    pub fn record(&self, tape: &mut Tape<T>, batch: Tensor<T>, mode: &mut Mode<'_>) -> Result<(Var, Vec<Var>)> {
        self.check_batch(&batch)?;
        let b = batch.shape()[0];
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
        let training = matches!(mode, Mode::Train(_));
        let geom = self.spec.geometry();

        let mut x = tape.leaf(batch, false);
        let mut drop_site = 0;
        for i in 0..self.spec.conv_channels.len() {
            x = tape.conv2d(x, params[2 * i], params[2 * i + 1], geom)?;
            x = tape.relu(x);
            if self.spec.pool_after.contains(&(i + 1)) {
                x = tape.maxpool2x2(x)?;
                let p = self.spec.dropout_probs[drop_site];
                drop_site += 1;
                x = tape.dropout(x, p, training, rng_of(mode))?;
            }
        }
        let fc = self.fc1_index();
        x = tape.flatten(x)?;
        x = tape.dense(x, params[fc], params[fc + 1])?;
        x = tape.relu(x);
        x = tape.dropout(x, self.spec.dropout_probs[drop_site], training, rng_of(mode))?;
        x = tape.dense(x, params[fc + 2], params[fc + 3])?;
        let logits = tape.reshape(x, vec![b])?;
        Ok((logits, params))
    }

    /// Probabilities for a `B x C x H x W` batch; output shape `[B]`.
    pub fn forward(&self, batch: Tensor<T>, mut mode: Mode<'_>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let (logits, _) = self.record(&mut tape, batch, &mut mode)?;
        let probs = tape.sigmoid(logits);
        Ok(tape.value(probs).clone())
    }

    /// Inference-mode forward pass.
    pub fn predict(&self, batch: Tensor<T>) -> Result<Tensor<T>> {
        self.forward(batch, Mode::Inference)
    }
}

fn rng_of<'m>(mode: &'m mut Mode<'_>) -> Option<&'m mut SessionRng> {
    match mode {
        Mode::Train(rng) => Some(&mut **rng),
        Mode::Inference => None,
    }
}

//! Forward and backward kernels for the layers of the network.
//!
//! Image tensors are `C x H x W` or batched `B x C x H x W`. Batched kernels
//! process samples in parallel; reductions over the batch (kernel and bias
//! gradients) are summed in a fixed chunk order so results do not depend on
//! the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SessionRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatial extent of every convolution kernel.
pub const KERNEL: usize = 3;

/// Samples per reduction chunk in batched backward passes.
const REDUCE_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self { stride: 1, pad: 1 }
    }
}

impl ConvGeometry {
    pub fn output_extent(&self, extent: usize) -> Result<usize> {
        let padded = extent + 2 * self.pad;
        if self.stride == 0 || padded < KERNEL {
            return Err(Error::shape(format!(
                "extent {extent} too small for a {KERNEL}x{KERNEL} kernel with {self:?}"
            )));
        }
        Ok((padded - KERNEL) / self.stride + 1)
    }
}

/// `(batch, channels, height, width, was_batched)` of an image tensor.
fn image_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w, false)),
        [b, c, h, w] => Ok((b, c, h, w, true)),
        _ => Err(Error::shape(format!(
            "expected a C x H x W or B x C x H x W tensor, got shape {shape:?}"
        ))),
    }
}

fn image_shape(b: usize, c: usize, h: usize, w: usize, batched: bool) -> Vec<usize> {
    if batched {
        vec![b, c, h, w]
    } else {
        vec![c, h, w]
    }
}

struct ConvDims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    h_out: usize,
    w_out: usize,
    geom: ConvGeometry,
}

impl ConvDims {
    fn patch_len(&self) -> usize {
        self.c_in * KERNEL * KERNEL
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn conv_dims<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, geom: ConvGeometry) -> Result<(usize, bool, ConvDims)> {
    let (b, c_in, h, w, batched) = image_dims(input.shape())?;
    let (c_out, k_in) = match *kernels.shape() {
        [co, ci, KERNEL, KERNEL] => (co, ci),
        ref s => {
            return Err(Error::shape(format!(
                "kernels must be C_out x C_in x {KERNEL} x {KERNEL}, got {s:?}"
            )))
        }
    };
    if k_in != c_in {
        return Err(Error::shape(format!(
            "input has {c_in} channels but kernels expect {k_in}"
        )));
    }
    let h_out = geom.output_extent(h)?;
    let w_out = geom.output_extent(w)?;
    Ok((
        b,
        batched,
        ConvDims {
            c_in,
            h,
            w,
            c_out,
            h_out,
            w_out,
            geom,
        },
    ))
}

/// Unfolds one zero-padded `C x H x W` sample into a `(C*9) x (H_out*W_out)` matrix.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let p = d.positions();
    let (stride, pad) = (d.geom.stride as isize, d.geom.pad as isize);
    for c in 0..d.c_in {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.h_out {
                    let iy = oy as isize * stride + ky as isize - pad;
                    let out_row = &mut dst[oy * d.w_out..(oy + 1) * d.w_out];
                    if iy < 0 || iy >= d.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * stride + kx as isize - pad;
                        *o = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds patch gradients back onto the sample.
fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, dx: &mut [T]) {
    let p = d.positions();
    let (stride, pad) = (d.geom.stride as isize, d.geom.pad as isize);
    for c in 0..d.c_in {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.h_out {
                    let iy = oy as isize * stride + ky as isize - pad;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.w_out {
                        let ix = ox as isize * stride + kx as isize - pad;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * d.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution (cross-correlation) with zero padding.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let (b, batched, d) = conv_dims(input, kernels, geom)?;
    if bias.shape() != [d.c_out] {
        return Err(Error::shape(format!(
            "bias shape {:?} does not match {} output channels",
            bias.shape(),
            d.c_out
        )));
    }
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * d.positions();
    let mut out = vec![T::zero(); b * out_len];
    out.par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each_init(
            || vec![T::zero(); d.patch_len() * d.positions()],
            |cols, (o, x)| {
                im2col(x, &d, cols);
                T::gemm(
                    d.c_out,
                    d.patch_len(),
                    d.positions(),
                    T::one(),
                    kernels.data(),
                    false,
                    cols,
                    false,
                    T::zero(),
                    o,
                );
                for (row, &bv) in o.chunks_mut(d.positions()).zip(bias.data()) {
                    row.iter_mut().for_each(|v| *v = *v + bv);
                }
            },
        );
    Tensor::new(image_shape(b, d.c_out, d.h_out, d.w_out, batched), out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// `None` when the input gradient was not requested.
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_output: &Tensor<T>,
    geom: ConvGeometry,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let (b, batched, d) = conv_dims(input, kernels, geom)?;
    let expected = image_shape(b, d.c_out, d.h_out, d.w_out, batched);
    if grad_output.shape() != expected.as_slice() {
        return Err(Error::shape(format!(
            "output gradient shape {:?}, expected {expected:?}",
            grad_output.shape()
        )));
    }
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * d.positions();
    let k_len = kernels.len();
    let mut dx = if need_input_grad {
        vec![T::zero(); b * in_len]
    } else {
        Vec::new()
    };

    let chunk_in = REDUCE_CHUNK * in_len;
    let chunk_out = REDUCE_CHUNK * out_len;
    let mut dx_chunks: Vec<&mut [T]> = if need_input_grad {
        dx.chunks_mut(chunk_in).collect()
    } else {
        Vec::new()
    };
    let x_chunks: Vec<&[T]> = input.data().chunks(chunk_in).collect();
    let g_chunks: Vec<&[T]> = grad_output.data().chunks(chunk_out).collect();

    let per_chunk = |x_chunk: &[T], g_chunk: &[T], mut dx_chunk: Option<&mut [T]>| {
        let mut dk = vec![T::zero(); k_len];
        let mut db = vec![T::zero(); d.c_out];
        let mut cols = vec![T::zero(); d.patch_len() * d.positions()];
        let mut dcols = if dx_chunk.is_some() {
            vec![T::zero(); cols.len()]
        } else {
            Vec::new()
        };
        for (s, (x, g)) in x_chunk.chunks(in_len).zip(g_chunk.chunks(out_len)).enumerate() {
            im2col(x, &d, &mut cols);
            T::gemm(
                d.c_out,
                d.positions(),
                d.patch_len(),
                T::one(),
                g,
                false,
                &cols,
                true,
                T::one(),
                &mut dk,
            );
            for (acc, row) in db.iter_mut().zip(g.chunks(d.positions())) {
                *acc = *acc + row.iter().copied().sum::<T>();
            }
            if let Some(dxc) = dx_chunk.as_deref_mut() {
                T::gemm(
                    d.patch_len(),
                    d.c_out,
                    d.positions(),
                    T::one(),
                    kernels.data(),
                    true,
                    g,
                    false,
                    T::zero(),
                    &mut dcols,
                );
                col2im(&dcols, &d, &mut dxc[s * in_len..(s + 1) * in_len]);
            }
        }
        (dk, db)
    };

    let partials: Vec<(Vec<T>, Vec<T>)> = if need_input_grad {
        x_chunks
            .par_iter()
            .zip(g_chunks.par_iter())
            .zip(dx_chunks.par_iter_mut())
            .map(|((x, g), dxc)| per_chunk(x, g, Some(&mut **dxc)))
            .collect()
    } else {
        x_chunks
            .par_iter()
            .zip(g_chunks.par_iter())
            .map(|(x, g)| per_chunk(x, g, None))
            .collect()
    };
    drop(dx_chunks);

    let mut dk = vec![T::zero(); k_len];
    let mut db = vec![T::zero(); d.c_out];
    for (pk, pb) in partials {
        dk.iter_mut().zip(pk).for_each(|(a, v)| *a = *a + v);
        db.iter_mut().zip(pb).for_each(|(a, v)| *a = *a + v);
    }
    Ok(ConvGrads {
        input: if need_input_grad {
            Some(Tensor::new(input.shape().to_vec(), dx)?)
        } else {
            None
        },
        kernels: Tensor::new(kernels.shape().to_vec(), dk)?,
        bias: Tensor::new(vec![d.c_out], db)?,
    })
}

/// Flat input offsets of the maximum chosen by each pooling window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices(pub Vec<u32>);

/// Non-overlapping 2x2 max pooling. Ties resolve to the first element in
/// row-major window order.
pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (b, c, h, w, batched) = image_dims(input.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "2x2 max pooling needs even height and width, got {h}x{w}"
        )));
    }
    if input.len() > u32::MAX as usize {
        return Err(Error::shape("tensor too large for pooling indices"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let planes = b * c;
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut arg = vec![0u32; planes * ho * wo];
    out.par_chunks_mut(ho * wo)
        .zip(arg.par_chunks_mut(ho * wo))
        .enumerate()
        .for_each(|(p, (o, a))| {
            let base = p * h * w;
            let x = &input.data()[base..base + h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (2 * oy) * w + 2 * ox;
                    for idx in [
                        (2 * oy) * w + 2 * ox + 1,
                        (2 * oy + 1) * w + 2 * ox,
                        (2 * oy + 1) * w + 2 * ox + 1,
                    ] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    o[oy * wo + ox] = x[best];
                    a[oy * wo + ox] = (base + best) as u32;
                }
            }
        });
    Ok((Tensor::new(image_shape(b, c, ho, wo, batched), out)?, PoolIndices(arg)))
}

pub fn maxpool2x2_backward<T: Scalar>(
    grad_output: &Tensor<T>,
    indices: &PoolIndices,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_output.len() != indices.0.len() {
        return Err(Error::shape("pooling gradient does not match recorded indices"));
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let data = dx.data_mut();
    for (&i, &g) in indices.0.iter().zip(grad_output.data()) {
        data[i as usize] = data[i as usize] + g;
    }
    Ok(dx)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes the gradient where the input was strictly positive (subgradient 0 at 0).
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    same_len(input, grad_output)?;
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Gradient through the sigmoid given its forward output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    same_len(output, grad_output)?;
    let data = output
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}

fn dense_dims<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize, bool)> {
    let (m, n) = match *weights.shape() {
        [m, n] => (m, n),
        ref s => return Err(Error::shape(format!("dense weights must be m x n, got {s:?}"))),
    };
    let (b, k, batched) = match *input.shape() {
        [k] => (1, k, false),
        [b, k] => (b, k, true),
        ref s => return Err(Error::shape(format!("dense input must be n or B x n, got {s:?}"))),
    };
    if k != n {
        return Err(Error::shape(format!(
            "dense input length {k} does not match weight columns {n}"
        )));
    }
    Ok((b, m, n, batched))
}

/// `weights . input + bias` for a vector or each row of a `B x n` batch.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, m, n, batched) = dense_dims(input, weights)?;
    if bias.shape() != [m] {
        return Err(Error::shape(format!(
            "dense bias shape {:?}, expected [{m}]",
            bias.shape()
        )));
    }
    let mut out = Vec::with_capacity(b * m);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        b,
        n,
        m,
        T::one(),
        input.data(),
        false,
        weights.data(),
        true,
        T::one(),
        &mut out,
    );
    Tensor::new(if batched { vec![b, m] } else { vec![m] }, out)
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (b, m, n, _) = dense_dims(input, weights)?;
    if grad_output.len() != b * m {
        return Err(Error::shape("dense output gradient has the wrong length"));
    }
    let g = grad_output.data();
    let mut dx = vec![T::zero(); b * n];
    T::gemm(b, m, n, T::one(), g, false, weights.data(), false, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); m * n];
    T::gemm(m, b, n, T::one(), g, true, input.data(), false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); m];
    for row in g.chunks(m) {
        db.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: Tensor::new(vec![m, n], dw)?,
        bias: Tensor::new(vec![m], db)?,
    })
}

/// Inverted dropout. In training mode each element is zeroed with probability
/// `p` and survivors are scaled by `1 / (1 - p)`; the returned mask holds the
/// per-element multiplier. Inference mode (or `p == 0`) is the identity and
/// draws nothing from `rng`.
pub fn dropout_apply<T: Scalar>(
    input: &Tensor<T>,
    p: f64,
    training: bool,
    rng: Option<&mut SessionRng>,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok((input.clone(), None));
    }
    let rng = rng.ok_or_else(|| Error::arg("training-mode dropout needs a generator"))?;
    let keep = T::from_f64(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.uniform() < p { T::zero() } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, Some(mask)))
}

/// Row-major flatten: `C x H x W -> C*H*W`, and `B x C x H x W -> B x C*H*W`.
pub fn flatten<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = match *input.shape() {
        [_, _, _] => vec![input.len()],
        [b, _, _, _] => vec![b, input.len() / b],
        ref s => return Err(Error::shape(format!("flatten expects rank 3 or 4, got {s:?}"))),
    };
    input.clone().reshape(shape)
}

/// Reverses the columns of every channel of a `C x H x W` (or batched) image.
pub fn horizontal_flip<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, _, w, _) = image_dims(input.shape())?;
    let mut out = input.clone();
    out.clear_grad();
    out.data_mut().chunks_mut(w).for_each(|row| row.reverse());
    Ok(out)
}

fn same_len<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "gradient shape {:?} does not match {:?}",
            b.shape(),
            a.shape()
        )));
    }
    Ok(())
}

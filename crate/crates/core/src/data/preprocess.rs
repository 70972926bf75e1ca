use super::ImageSample;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

fn dims(image: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(format!("expected a C x H x W image, got {s:?}"))),
    }
}

/// Scales the shorter side to `target_short_side` with bilinear
/// interpolation (align-corners mapping), preserving aspect ratio. An image
/// whose shorter side already has the target length is returned unchanged.
pub fn resize_bilinear(image: &Tensor<f32>, target_short_side: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = dims(image)?;
    if h < 2 || w < 2 {
        return Err(Error::arg(format!("cannot resize a degenerate {h}x{w} image")));
    }
    if target_short_side < 2 {
        return Err(Error::arg("target side must be at least 2"));
    }
    if h.min(w) == target_short_side {
        return Ok(image.clone());
    }
    let (nh, nw) = if h <= w {
        let nw = ((w as f64 * target_short_side as f64 / h as f64).round() as usize).max(target_short_side);
        (target_short_side, nw)
    } else {
        let nh = ((h as f64 * target_short_side as f64 / w as f64).round() as usize).max(target_short_side);
        (nh, target_short_side)
    };
    let sy = (h - 1) as f64 / (nh - 1) as f64;
    let sx = (w - 1) as f64 / (nw - 1) as f64;
    // per-column source taps
    let xs: Vec<(usize, usize, f64)> = (0..nw)
        .map(|j| {
            let x = j as f64 * sx;
            let x0 = (x.floor() as usize).min(w - 1);
            (x0, (x0 + 1).min(w - 1), x - x0 as f64)
        })
        .collect();
    let src = image.data();
    let mut out = vec![0.0f32; c * nh * nw];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for i in 0..nh {
            let y = i as f64 * sy;
            let y0 = (y.floor() as usize).min(h - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fy = y - y0 as f64;
            for (j, &(x0, x1, fx)) in xs.iter().enumerate() {
                let p = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[(ch * nh + i) * nw + j] = v.clamp(0.0, 255.0) as f32;
            }
        }
    }
    Tensor::new(vec![c, nh, nw], out)
}

/// Extracts the centered `size x size` window; offsets are
/// `floor((side - size) / 2)`.
pub fn center_crop(image: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = dims(image)?;
    if h < size || w < size || size == 0 {
        return Err(Error::arg(format!("cannot crop {size}x{size} from a {h}x{w} image")));
    }
    let (oy, ox) = ((h - size) / 2, (w - size) / 2);
    let src = image.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in oy..oy + size {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&src[row + ox..row + ox + size]);
        }
    }
    Tensor::new(vec![c, size, size], out)
}

/// Shorter-side resize followed by a center crop to `side x side`.
pub fn preprocess(image: &Tensor<f32>, side: usize) -> Result<Tensor<f32>> {
    center_crop(&resize_bilinear(image, side)?, side)
}

/// `pixel / 255 - mean[c]` per channel.
pub fn normalize(image: &Tensor<f32>, channel_means: &[f64; 3]) -> Result<Tensor<f32>> {
    let (c, h, w) = dims(image)?;
    if c != 3 {
        return Err(Error::shape(format!("normalize expects 3 channels, got {c}")));
    }
    let plane = h * w;
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v / 255.0 - channel_means[i / plane] as f32)
        .collect();
    Tensor::new(vec![c, h, w], data)
}

/// Per-channel mean of `pixel / 255` over every pixel of every sample.
pub fn channel_means(samples: &[ImageSample]) -> [f64; 3] {
    let mut sums = [0.0f64; 3];
    let mut count = 0usize;
    for s in samples {
        let plane = s.height() * s.width();
        for (c, sum) in sums.iter_mut().enumerate() {
            *sum += s.pixels.data()[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| (v / 255.0) as f64)
                .sum::<f64>();
        }
        count += plane;
    }
    if count == 0 {
        return [0.0; 3];
    }
    sums.map(|s| s / count as f64)
}

pub fn horizontal_flip(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    ops::horizontal_flip(image)
}

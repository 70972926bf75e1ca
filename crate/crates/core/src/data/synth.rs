use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ImageSample;
use crate::error::{Error, Result};
use crate::rng::SessionRng;
use crate::tensor::Tensor;

/// Color band of positive-class ellipses, `[low, high]` per RGB channel.
const SKIN_BAND: [[f64; 2]; 3] = [[180.0, 230.0], [130.0, 180.0], [100.0, 150.0]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub total_count: usize,
    pub positive_fraction: f64,
    /// Inclusive range of each canvas side.
    pub canvas_size_range: [usize; 2],
    pub seed: u64,
    /// Half-width of the per-pixel uniform noise.
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            total_count: 4000,
            positive_fraction: 0.5,
            canvas_size_range: [96, 192],
            seed: 0,
            noise_level: 12.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_count < 100 {
            return Err(Error::config("data.total_count", "must be at least 100"));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::config(
                "data.positive_fraction",
                "must lie strictly between 0 and 1",
            ));
        }
        let [lo, hi] = self.canvas_size_range;
        if lo < 2 || lo > hi {
            return Err(Error::config("data.canvas_size_range", "needs 2 <= min <= max"));
        }
        if !(self.noise_level >= 0.0 && self.noise_level <= 255.0) {
            return Err(Error::config("data.noise_level", "must lie in [0, 255]"));
        }
        Ok(())
    }

    pub fn positive_count(&self) -> usize {
        (self.total_count as f64 * self.positive_fraction).round() as usize
    }
}

/// Deterministic labelled images. Positives contain a filled ellipse in a
/// skin-tone band over a textured background. Negatives hold one of: a
/// background alone, an ellipse in a hue-shifted band, or skin-toned bars
/// (right colour, wrong shape). Sample `i` depends only on `(seed, i)`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<ImageSample>> {
    config.validate()?;
    let n = config.total_count;
    let positives = config.positive_count();
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < positives)).collect();
    SessionRng::for_stream(config.seed, u64::MAX).shuffle(&mut labels);

    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = SessionRng::for_stream(config.seed, i as u64);
            ImageSample {
                pixels: draw_image(&mut rng, labels[i], config),
                label: labels[i],
                id: format!("s{i:06}"),
            }
        })
        .collect())
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    color: [f64; 3],
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

fn band_color(rng: &mut SessionRng, band: [[f64; 2]; 3]) -> [f64; 3] {
    band.map(|[lo, hi]| rng.range(lo, hi))
}

/// Bands a few tens of degrees of hue away from the skin band.
const NEAR_BANDS: [[[f64; 2]; 3]; 2] = [
    [[190.0, 240.0], [175.0, 220.0], [60.0, 110.0]],
    [[170.0, 220.0], [95.0, 140.0], [150.0, 200.0]],
];

enum Shape {
    Ellipse(Ellipse),
    /// Parallel bars of width `width` and spacing `period` along direction `(cos, sin)`.
    Bars {
        cos: f64,
        sin: f64,
        period: f64,
        width: f64,
        color: [f64; 3],
    },
    Empty,
}

impl Shape {
    fn color_at(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        match self {
            Shape::Ellipse(e) => e.contains(x, y).then_some(e.color),
            Shape::Bars {
                cos,
                sin,
                period,
                width,
                color,
            } => {
                let t = (x * cos + y * sin).rem_euclid(*period);
                (t < *width).then_some(*color)
            }
            Shape::Empty => None,
        }
    }
}

fn random_ellipse(rng: &mut SessionRng, w: usize, h: usize, color: [f64; 3]) -> Ellipse {
    let side = w.min(h) as f64;
    let theta = rng.range(0.0, std::f64::consts::PI);
    Ellipse {
        cx: w as f64 * rng.range(0.3, 0.7),
        cy: h as f64 * rng.range(0.3, 0.7),
        a: side * rng.range(0.08, 0.3),
        b: side * rng.range(0.08, 0.3),
        cos: theta.cos(),
        sin: theta.sin(),
        color,
    }
}

fn draw_image(rng: &mut SessionRng, label: u8, cfg: &SynthConfig) -> Tensor<f32> {
    let [lo, hi] = cfg.canvas_size_range;
    let w = rng.range_inclusive(lo, hi);
    let h = rng.range_inclusive(lo, hi);

    // background: random base color with a sinusoidal texture
    let base = [rng.range(20.0, 200.0), rng.range(40.0, 200.0), rng.range(40.0, 210.0)];
    let amp = rng.range(5.0, 25.0);
    let (fx, fy) = (rng.range(0.02, 0.3), rng.range(0.02, 0.3));
    let phase = [0, 1, 2].map(|_| rng.range(0.0, std::f64::consts::TAU));

    let shape = if label == 1 {
        let color = band_color(rng, SKIN_BAND);
        Shape::Ellipse(random_ellipse(rng, w, h, color))
    } else {
        match rng.range_inclusive(0, 3) {
            0 => Shape::Empty,
            1 => {
                // channel rotations of the skin band are its +-120 degree hue shifts
                let [r, g, b] = SKIN_BAND;
                let band = if rng.uniform() < 0.5 { [b, r, g] } else { [g, b, r] };
                let color = band_color(rng, band);
                Shape::Ellipse(random_ellipse(rng, w, h, color))
            }
            2 => {
                let band = NEAR_BANDS[rng.range_inclusive(0, NEAR_BANDS.len() - 1)];
                let color = band_color(rng, band);
                Shape::Ellipse(random_ellipse(rng, w, h, color))
            }
            _ => {
                let theta = rng.range(0.0, std::f64::consts::PI);
                let side = w.min(h) as f64;
                let period = side * rng.range(0.15, 0.3);
                Shape::Bars {
                    cos: theta.cos(),
                    sin: theta.sin(),
                    period,
                    width: period * rng.range(0.15, 0.35),
                    color: band_color(rng, SKIN_BAND),
                }
            }
        }
    };

    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = shape.color_at(px, py);
            for c in 0..3 {
                let clean = match inside {
                    Some(color) => color[c],
                    None => base[c] + amp * (fx * px + fy * py + phase[c]).sin(),
                };
                let noisy = clean + rng.range(-cfg.noise_level, cfg.noise_level);
                data[(c * h + y) * w + x] = noisy.round().clamp(0.0, 255.0) as f32;
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape matches buffer")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            total_count: 120,
            seed,
            canvas_size_range: [24, 40],
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_identical_images() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn exact_class_balance() {
        let cfg = SynthConfig {
            total_count: 1000,
            canvas_size_range: [8, 12],
            ..Default::default()
        };
        let s = generate_synthetic(&cfg).unwrap();
        assert_eq!(s.iter().filter(|x| x.label == 1).count(), 500);
    }

    #[test]
    fn canvas_sizes_in_range_and_pixels_valid() {
        let cfg = SynthConfig {
            total_count: 100,
            ..Default::default()
        };
        for s in generate_synthetic(&cfg).unwrap() {
            assert!((96..=192).contains(&s.height()) && (96..=192).contains(&s.width()));
            assert!(s
                .pixels
                .data()
                .iter()
                .all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
        }
    }

    #[test]
    fn skin_color_alone_does_not_decide_the_label() {
        let cfg = SynthConfig {
            noise_level: 0.0,
            ..small(9)
        };
        let mut skin_negatives = 0;
        for s in generate_synthetic(&cfg).unwrap() {
            let (h, w) = (s.height(), s.width());
            let d = s.pixels.data();
            let skin = (0..h * w).any(|p| {
                let (r, g, b) = (d[p], d[h * w + p], d[2 * h * w + p]);
                (180.0..=230.0).contains(&r) && (130.0..=180.0).contains(&g) && (100.0..=150.0).contains(&b)
            });
            if s.label == 1 {
                assert!(skin, "{}", s.id);
            } else if skin {
                skin_negatives += 1;
            }
        }
        assert!(skin_negatives > 0);
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            SynthConfig {
                positive_fraction: 1.0,
                ..Default::default()
            },
            SynthConfig {
                total_count: 99,
                ..Default::default()
            },
            SynthConfig {
                canvas_size_range: [50, 40],
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}

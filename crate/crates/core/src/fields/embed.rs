use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

/// Sinusoidal embedding of a time `t` at `F` log-spaced frequencies in
/// `[1, 8]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    freqs: Vec<f64>,
}

impl TimeEmbedding {
    pub const DEFAULT_FREQS: usize = 256;

    pub fn new(count: usize) -> Self {
        let freqs = (0..count)
            .map(|f| {
                if count == 1 {
                    1.0
                } else {
                    2f64.powf(3.0 * f as f64 / (count - 1) as f64)
                }
            })
            .collect();
        Self { freqs }
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn dim(&self) -> usize {
        2 * self.freqs.len()
    }

    /// `[sin(2πω₁t), cos(2πω₁t), …]` as a `1 × 2F` row.
    pub fn embed(&self, t: f64) -> Array2<f64> {
        let mut out = Array2::zeros((1, self.dim()));
        for (f, w) in self.freqs.iter().enumerate() {
            let (s, c) = (2.0 * PI * w * t).sin_cos();
            out[[0, 2 * f]] = s;
            out[[0, 2 * f + 1]] = c;
        }
        out
    }
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self::new(Self::DEFAULT_FREQS)
    }
}

/// Multi-scale random Fourier features of a point in the unit cube.
///
/// Level `ℓ` of `L` uses frequency `f_max^(ℓ/(L−1))` and
/// `max(1, f_max/2^ℓ)` Gaussian projection directions, each contributing a
/// sin/cos pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFeatures {
    /// One row per projection: the direction already scaled by `2π·freq`.
    proj: Array2<f64>,
}

impl SpatialFeatures {
    pub fn new<R: Rng + ?Sized>(dim: usize, levels: usize, max_freq: f64, rng: &mut R) -> Self {
        let mut rows = Vec::new();
        for l in 0..levels {
            let freq = if levels == 1 {
                1.0
            } else {
                max_freq.powf(l as f64 / (levels - 1) as f64)
            };
            let n = ((max_freq / 2f64.powi(l as i32)).floor() as usize).max(1);
            for _ in 0..n {
                for _ in 0..dim {
                    let g: f64 = rng.sample(StandardNormal);
                    rows.push(2.0 * PI * freq * g);
                }
            }
        }
        let count = rows.len() / dim.max(1);
        Self {
            proj: Array2::from_shape_vec((count, dim), rows).expect("projection layout"),
        }
    }

    pub fn projections(&self) -> usize {
        self.proj.nrows()
    }

    pub fn dim(&self) -> usize {
        2 * self.proj.nrows()
    }

    /// Features for every row of `points` (`D × d`), shaped `D × 2P`.
    pub fn eval(&self, points: &Array2<f64>) -> Array2<f64> {
        let z = points.dot(&self.proj.t());
        let p = self.proj.nrows();
        let mut out = Array2::zeros((points.nrows(), 2 * p));
        for ((j, k), &v) in z.indexed_iter() {
            let (s, c) = v.sin_cos();
            out[[j, 2 * k]] = s;
            out[[j, 2 * k + 1]] = c;
        }
        out
    }
}

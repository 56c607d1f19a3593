//! Random piecewise signals with a jump at `x = 0.5`:
//! `f(x) = σ(sin 2πkx + 2x)` on `[0, ½]` and `σ(−sin 2πkx + 2x − 2)` on
//! `(½, 1]`, with `σ = ±1` equiprobable and `k ~ Geometric(1/3)` on
//! `{1, 2, …}`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::error::Result;
use crate::objectives::dataset::check_points;
use crate::objectives::FunctionDataset;
use crate::seeds::{SeedSplitter, Stream};
use crate::space::QuadratureSet;

pub const GEOMETRIC_P: f64 = 1.0 / 3.0;

/// Signal with parameters `(σ, k)` at `x`.
pub fn synthetic_value(sigma: f64, k: u32, x: f64) -> f64 {
    let s = (2.0 * std::f64::consts::PI * k as f64 * x).sin();
    if x <= 0.5 {
        sigma * (s + 2.0 * x)
    } else {
        sigma * (-s + 2.0 * x - 2.0)
    }
}

/// Unbounded stream of signals; sample `id` is drawn from its own counter of
/// the given seed's data stream, so samples are independent of access order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synthetic1D {
    seeds: SeedSplitter,
    stream: Stream,
}

impl Synthetic1D {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, Stream::Data)
    }

    /// Held-out signals use a stream disjoint from the training one.
    pub fn with_stream(seed: u64, stream: Stream) -> Self {
        Self {
            seeds: SeedSplitter::new(seed),
            stream,
        }
    }

    pub fn params(&self, id: u64) -> (f64, u32) {
        let mut rng = self.seeds.rng(self.stream, id);
        let sigma = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let k = 1 + Geometric::new(GEOMETRIC_P).expect("valid p").sample(&mut rng) as u32;
        (sigma, k)
    }

    /// Values at arbitrary scalar positions.
    pub fn values(&self, id: u64, xs: &[f64]) -> Vec<f64> {
        let (sigma, k) = self.params(id);
        xs.iter().map(|&x| synthetic_value(sigma, k, x)).collect()
    }
}

impl FunctionDataset for Synthetic1D {
    fn dim(&self) -> usize {
        1
    }

    fn channels(&self) -> usize {
        1
    }

    fn len(&self) -> Option<usize> {
        None
    }

    fn eval(&self, id: u64, points: &QuadratureSet) -> Result<Array2<f64>> {
        check_points(self, points)?;
        let (sigma, k) = self.params(id);
        let p = points.points();
        Ok(Array2::from_shape_fn((p.nrows(), 1), |(j, _)| synthetic_value(sigma, k, p[[j, 0]])))
    }
}

//! Deterministic fixtures shared by the benchmarks.

use ndarray::Array2;

/// Smooth pseudo-random matrix; no RNG so runs are comparable across machines.
pub fn fixture(rows: usize, cols: usize, seed: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        ((i as f64 + 1.0) * 0.7548776662 + (j as f64 + 1.0) * 0.5698402910 + seed).sin()
    })
}

/// Skew-symmetric `r × r` matrix.
pub fn skew(r: usize, seed: f64) -> Array2<f64> {
    let a = fixture(r, r, seed);
    &a - &a.t()
}

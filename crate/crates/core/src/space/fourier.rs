use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use ndarray::Array2;

use super::quadrature::QuadratureSet;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Signed multi-index of the real Fourier basis plus an output channel.
///
/// Per axis, a positive entry selects `√2·cos(2π i x)`, a negative entry
/// `√2·sin(2π |i| x)`, and zero the constant. `channel` is zero-based; the
/// element vanishes on every other channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FourierIndex {
    pub spatial: Vec<i32>,
    pub channel: usize,
}

impl FourierIndex {
    pub fn new(spatial: Vec<i32>, channel: usize) -> Self {
        Self { spatial, channel }
    }

    /// Single-channel index.
    pub fn scalar(spatial: Vec<i32>) -> Self {
        Self { spatial, channel: 0 }
    }

    pub fn norm2(&self) -> i64 {
        self.spatial.iter().map(|&i| (i as i64) * (i as i64)).sum()
    }

    pub fn dim(&self) -> usize {
        self.spatial.len()
    }
}

impl fmt::Display for FourierIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.spatial.iter().map(|i| i.to_string()).collect();
        write!(f, "({};c{})", parts.join(","), self.channel)
    }
}

/// One-axis factor of a real Fourier element.
#[inline]
pub fn axis_factor(i: i32, x: f64) -> f64 {
    match i {
        0 => 1.0,
        i if i > 0 => SQRT_2 * (2.0 * PI * i as f64 * x).cos(),
        i => SQRT_2 * (2.0 * PI * (-i) as f64 * x).sin(),
    }
}

/// Spatial part of a Fourier element at one point.
pub fn spatial_value(spatial: &[i32], x: &[f64]) -> f64 {
    spatial.iter().zip(x).map(|(&i, &xv)| axis_factor(i, xv)).product()
}

/// Values of `idx` at every point, shaped `D × C`.
pub fn eval_fourier(idx: &FourierIndex, points: &QuadratureSet, channels: usize) -> Result<Array2<f64>> {
    check(idx, points, channels)?;
    let mut out = Array2::zeros((points.len(), channels));
    for (j, p) in points.points().rows().into_iter().enumerate() {
        out[[j, idx.channel]] = spatial_value(&idx.spatial, p.as_slice().expect("row-major"));
    }
    Ok(out)
}

/// Values of many elements as rows of a `n × (D·C)` matrix, the layout used
/// for function batches throughout the crate (column `j·C + c` holds channel
/// `c` at point `j`).
pub fn eval_fourier_rows(
    indices: &[FourierIndex],
    points: &QuadratureSet,
    channels: usize,
) -> Result<Array2<f64>> {
    let d = points.len();
    let mut out = Array2::zeros((indices.len(), d * channels));
    for (row, idx) in indices.iter().enumerate() {
        check(idx, points, channels)?;
        for (j, p) in points.points().rows().into_iter().enumerate() {
            out[[row, j * channels + idx.channel]] =
                spatial_value(&idx.spatial, p.as_slice().expect("row-major"));
        }
    }
    Ok(out)
}

fn check(idx: &FourierIndex, points: &QuadratureSet, channels: usize) -> Result<()> {
    if idx.dim() != points.dim() {
        return Err(Error::Dimension {
            expected: points.dim(),
            got: idx.dim(),
        });
    }
    if idx.channel >= channels {
        return Err(Error::Dimension {
            expected: channels,
            got: idx.channel + 1,
        });
    }
    Ok(())
}

/// Monte-Carlo inner product `(1/D) Σ_{j,c} f_c(ω_j) g_c(ω_j)` of two `D × C`
/// tensors.
pub fn inner_product<'g>(f: Tensor<'g>, g: Tensor<'g>) -> Result<Tensor<'g>> {
    if f.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op: "inner-product",
            lhs: f.shape(),
            rhs: g.shape(),
        });
    }
    let d = f.shape().0 as f64;
    Ok(f.mul(g)?.sum().scale(1.0 / d))
}

/// Gram matrix `(1/D) A Bᵀ` between two row batches on `num_points` points.
pub fn gram_rows(a: &Array2<f64>, b: &Array2<f64>, num_points: usize) -> Array2<f64> {
    a.dot(&b.t()) / num_points as f64
}

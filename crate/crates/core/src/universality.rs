//! Constructive universality: factor a rotation of a finite frame into
//! Givens rotations, lift each factor to a rank-2 generator switched on by a
//! bump control, and integrate the resulting flow with the Cayley scheme.

use nalgebra::DMatrix;
use ndarray::{array, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous};

use crate::error::{Error, Result};
use crate::flow::{step_frozen, Method, TimeGrid};
use crate::space::{eval_fourier_rows, FourierIndex, IndexPrior, QuadratureSet};

/// Tolerance for accepting a matrix as special orthogonal.
pub const ROTATION_TOL: f64 = 1e-8;

/// `exp(θ (b aᵀ − a bᵀ))` for orthonormal `a`, `b`: the rotation taking `a`
/// towards `b` by `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GivensFactor {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub theta: f64,
}

impl GivensFactor {
    pub fn matrix(&self) -> Array2<f64> {
        let n = self.a.len();
        let (s, c) = self.theta.sin_cos();
        Array2::from_shape_fn((n, n), |(i, j)| {
            let id = if i == j { 1.0 } else { 0.0 };
            let skew = self.b[i] * self.a[j] - self.a[i] * self.b[j];
            let proj = self.a[i] * self.a[j] + self.b[i] * self.b[j];
            id + s * skew - (1.0 - c) * proj
        })
    }
}

/// Factors in time order: the target is `R_M ⋯ R_2 R_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GivensFactorization {
    pub n: usize,
    pub factors: Vec<GivensFactor>,
}

impl GivensFactorization {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.factors
            .iter()
            .fold(Array2::eye(self.n), |acc, f| f.matrix().dot(&acc))
    }
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Checks `QᵀQ = I` and `det Q = +1`.
pub fn check_rotation(q: &Array2<f64>) -> Result<()> {
    let (n, m) = q.dim();
    if n != m {
        return Err(Error::NotRotation(format!("matrix is {n}×{m}")));
    }
    let err = (q.t().dot(q) - Array2::<f64>::eye(n)).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if err.is_nan() || err > ROTATION_TOL {
        return Err(Error::NotRotation(format!("max |QᵀQ − I| = {err:.3e}")));
    }
    let det = DMatrix::from_fn(n, n, |i, j| q[[i, j]]).determinant();
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::NotRotation(format!("determinant {det:.6} (reflections are not reachable)")));
    }
    Ok(())
}

/// Coordinate-plane Givens elimination of a special orthogonal matrix.
pub fn givens_factorize(q: &Array2<f64>) -> Result<GivensFactorization> {
    check_rotation(q)?;
    let n = q.nrows();
    let mut a = q.clone();
    // left rotations G_k with G_K ⋯ G_1 Q = I, so Q = G_1ᵀ ⋯ G_Kᵀ
    let mut eliminated = Vec::new();
    for col in 0..n {
        for row in (col + 1)..n {
            let (x, y) = (a[[col, col]], a[[row, col]]);
            if y == 0.0 {
                continue;
            }
            let phi = y.atan2(x);
            let (s, c) = phi.sin_cos();
            for k in 0..n {
                let (u, v) = (a[[col, k]], a[[row, k]]);
                a[[col, k]] = c * u + s * v;
                a[[row, k]] = -s * u + c * v;
            }
            eliminated.push(GivensFactor {
                a: unit(n, col),
                b: unit(n, row),
                theta: phi,
            });
        }
    }
    // G_kᵀ is the rotation by +φ_k; applying G_Kᵀ first puts it first in time
    eliminated.reverse();
    Ok(GivensFactorization { n, factors: eliminated })
}

/// Uniformly random element of `SO(n)`: QR of a Gaussian matrix with the
/// sign of `R`'s diagonal folded into `Q`, and one column flipped if needed.
pub fn random_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    Array2::from_shape_fn((n, n), |(i, j)| q[(i, j)])
}

/// `r(t) = √(Beta density(t; p, q))`, vanishing at both ends with unit
/// squared integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub p: f64,
    pub q: f64,
}

impl Default for Bump {
    fn default() -> Self {
        Self { p: 2.0, q: 2.0 }
    }
}

impl Bump {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(p > 1.0 && q > 1.0) {
            return Err(Error::Config(format!("bump needs p > 1 and q > 1 so both ends vanish, got ({p}, {q})")));
        }
        Ok(Self { p, q })
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 || t >= 1.0 {
            return 0.0;
        }
        if self.p == 2.0 && self.q == 2.0 {
            return (6.0 * t * (1.0 - t)).sqrt();
        }
        Beta::new(self.p, self.q).expect("validated shape").pdf(t).sqrt()
    }
}

/// The piecewise rank-2 generator built from a factorization, in
/// coefficients of an `n`-element frame. Time runs over `[0, M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank2Path {
    pub bump: Bump,
    /// `(α_m, β_m)` per segment, as frame coefficients.
    pub segments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Rank2Path {
    pub fn new(fact: &GivensFactorization, bump: Bump) -> Self {
        let segments = fact
            .factors
            .iter()
            .map(|f| {
                let w = f.theta.abs().sqrt();
                let sign = if f.theta < 0.0 { -1.0 } else { 1.0 };
                let alpha = f.b.iter().map(|v| sign * w * v).collect();
                let beta = f.a.iter().map(|v| w * v).collect();
                (alpha, beta)
            })
            .collect();
        Self { bump, segments }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// `(α(t), β(t))` for `t ∈ [0, M]`; at a joint both sides are zero.
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.segments.first().map_or(0, |s| s.0.len());
        if self.segments.is_empty() || t <= 0.0 || t >= self.len() as f64 {
            return (vec![0.0; n], vec![0.0; n]);
        }
        let m = (t.floor() as usize).min(self.len() - 1);
        let r = self.bump.eval(t - m as f64);
        let (a, b) = &self.segments[m];
        (a.iter().map(|v| r * v).collect(), b.iter().map(|v| r * v).collect())
    }

    /// Coefficient-space generator `α βᵀ − β αᵀ` at time `t`.
    pub fn generator(&self, t: f64) -> Array2<f64> {
        let (a, b) = self.eval(t);
        let n = a.len();
        Array2::from_shape_fn((n, n), |(i, j)| a[i] * b[j] - b[i] * a[j])
    }
}

/// The first `n` reference elements, Gram-Schmidt orthonormalized in the
/// discrete inner product of `points`, as `n × D` rows.
pub fn discrete_frame(n: usize, points: &QuadratureSet) -> Result<Array2<f64>> {
    if n > points.len() {
        return Err(Error::Config(format!("frame of {n} elements needs at least {n} points")));
    }
    let prior = IndexPrior::new(points.dim(), 1, 1.5, 0.0)?;
    let idx: Vec<FourierIndex> = prior.first(n);
    let mut rows = eval_fourier_rows(&idx, points, 1)?;
    let d = points.len() as f64;
    for i in 0..n {
        for _pass in 0..2 {
            for k in 0..i {
                let c = rows.row(i).dot(&rows.row(k)) / d;
                let rk = rows.row(k).to_owned();
                rows.row_mut(i).scaled_add(-c, &rk);
            }
        }
        let norm = (rows.row(i).dot(&rows.row(i)) / d).sqrt();
        if norm < 1e-8 {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        rows.row_mut(i).mapv_inplace(|v| v / norm);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniversalityReport {
    pub n: usize,
    pub segments: usize,
    pub steps_per_segment: usize,
    pub frobenius_error: f64,
    pub norm_drift: f64,
}

/// Integrates the rank-2 path of `target` on `points` and measures how well
/// the frame rotation is reproduced.
pub fn verify_universality(
    target: &Array2<f64>,
    steps_per_segment: usize,
    points: &QuadratureSet,
    bump: Bump,
) -> Result<UniversalityReport> {
    let n = target.nrows();
    let fact = givens_factorize(target)?;
    let path = Rank2Path::new(&fact, bump);
    let frame = discrete_frame(n, points)?;
    let d = points.len();
    let segs = path.len();

    let mut phi = frame.clone();
    let mut drift = 0.0f64;
    if segs > 0 {
        if steps_per_segment == 0 {
            return Err(Error::Config("steps per segment must be positive".into()));
        }
        // time rescaled from [0, M] onto [0, 1]: the generator picks up a factor M
        let grid = TimeGrid::uniform(segs * steps_per_segment);
        let s = array![[0.0, 1.0], [-1.0, 0.0]];
        let scale = (segs as f64).sqrt();
        for l in 0..grid.steps() {
            let (t_mid, dt) = grid.step(l);
            let (a, b) = path.eval(t_mid * segs as f64);
            let coeffs = Array2::from_shape_fn((2, n), |(i, k)| if i == 0 { a[k] } else { b[k] });
            let u_hat = coeffs.dot(&frame) * (scale * dt.sqrt());
            phi = step_frozen(Method::Cayley, &u_hat, &s, phi, d, l)?;
            for i in 0..n {
                let norm = phi.row(i).dot(&phi.row(i)) / d as f64;
                drift = drift.max((norm - 1.0).abs());
            }
        }
    }
    // column j holds the frame coefficients of the evolved element j
    let realized = frame.dot(&phi.t()) / d as f64;
    let err = (&realized - target).iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(UniversalityReport {
        n,
        segments: segs,
        steps_per_segment,
        frobenius_error: err,
        norm_drift: drift,
    })
}

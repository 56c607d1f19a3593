use std::fmt;
use std::sync::Arc;

use ndarray::Array2;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::space::QuadratureSet;

/// Tolerance on `|A[x,y] − A[y,x]|` relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A frozen scalar-output network whose parameter gradients define an NTK.
pub trait FrozenNetwork {
    fn dim(&self) -> usize;

    fn num_params(&self) -> usize;

    /// Network output at each row of `points`, `D × 1`.
    fn forward(&self, points: &Array2<f64>) -> Array2<f64>;

    /// `∇_ξ MLP(ω_j; ξ)` as rows, `D × P`.
    fn param_gradients(&self, points: &Array2<f64>) -> Array2<f64>;
}

/// `MLP(x; ξ) = ξ · x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearNetwork {
    pub weights: Vec<f64>,
}

impl FrozenNetwork for LinearNetwork {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn num_params(&self) -> usize {
        self.weights.len()
    }

    fn forward(&self, points: &Array2<f64>) -> Array2<f64> {
        let w = Array2::from_shape_vec((self.weights.len(), 1), self.weights.clone()).expect("column");
        points.dot(&w)
    }

    fn param_gradients(&self, points: &Array2<f64>) -> Array2<f64> {
        points.clone()
    }
}

type PointKernel = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type Factors = dyn Fn(&QuadratureSet) -> Result<(Vec<f64>, Array2<f64>)> + Send + Sync;

/// A positive semidefinite integral operator on scalar functions.
#[derive(Clone)]
pub enum KernelOperator {
    /// `A f = f`.
    Identity,
    /// Pointwise kernel `A[x, y]`, evaluated on all pairs of points.
    Kernel(Arc<PointKernel>),
    /// `A[x, y] = Σ_m λ_m u_m(x) u_m(y)`; the callback returns `λ` and the
    /// `m × D` matrix of `u_m` at the points.
    Factored(Arc<Factors>),
}

impl fmt::Debug for KernelOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelOperator::Identity => f.write_str("Identity"),
            KernelOperator::Kernel(_) => f.write_str("Kernel(..)"),
            KernelOperator::Factored(_) => f.write_str("Factored(..)"),
        }
    }
}

impl KernelOperator {
    pub fn kernel(k: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        KernelOperator::Kernel(Arc::new(k))
    }

    pub fn factored(f: impl Fn(&QuadratureSet) -> Result<(Vec<f64>, Array2<f64>)> + Send + Sync + 'static) -> Self {
        KernelOperator::Factored(Arc::new(f))
    }

    /// The NTK `κ[x,y] = ∇_ξ MLP(x)·∇_ξ MLP(y)` in factored form.
    pub fn ntk<N: FrozenNetwork + Send + Sync + 'static>(net: Arc<N>) -> Self {
        KernelOperator::factored(move |q| {
            let g = net.param_gradients(q.points());
            Ok((vec![1.0; g.ncols()], g.t().to_owned()))
        })
    }

    /// `A[ω_j, ω_k]` on all pairs, checked for symmetry.
    pub fn matrix(&self, points: &QuadratureSet) -> Result<Array2<f64>> {
        let d = points.len();
        let m = match self {
            KernelOperator::Identity => return Err(Error::Config("the identity has no kernel matrix".into())),
            KernelOperator::Kernel(k) => {
                let p = points.points();
                Array2::from_shape_fn((d, d), |(i, j)| {
                    k(p.row(i).as_slice().expect("row-major"), p.row(j).as_slice().expect("row-major"))
                })
            }
            KernelOperator::Factored(f) => {
                let (lambda, u) = f(points)?;
                let mut scaled = u.clone();
                for (mut row, l) in scaled.rows_mut().into_iter().zip(&lambda) {
                    row *= *l;
                }
                u.t().dot(&scaled)
            }
        };
        let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let asym = m.iter().zip(m.t().iter()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Asymmetric { max: asym });
        }
        Ok(m)
    }

    /// `⟨f, A f⟩` for every row of the scalar function batch `f`, `n × 1`.
    pub fn quadratic_form<'g>(&self, f: Tensor<'g>, points: &QuadratureSet) -> Result<Tensor<'g>> {
        let graph = f.graph();
        let d = points.len();
        if f.shape().1 != d {
            return Err(Error::Dimension {
                expected: d,
                got: f.shape().1,
            });
        }
        let inv_d = 1.0 / d as f64;
        match self {
            KernelOperator::Identity => Ok(f.square().sum_axis(1).scale(inv_d)),
            KernelOperator::Kernel(_) => {
                let k = graph.constant(self.matrix(points)?);
                Ok(f.matmul(k)?.mul(f)?.sum_axis(1).scale(inv_d * inv_d))
            }
            KernelOperator::Factored(factors) => {
                let (lambda, u) = factors(points)?;
                let m = lambda.len();
                let proj = f.matmul(graph.constant(u.t().to_owned()))?.scale(inv_d);
                let weights = graph.constant(Array2::from_shape_vec((m, 1), lambda).expect("column"));
                proj.square().matmul(weights)
            }
        }
    }
}

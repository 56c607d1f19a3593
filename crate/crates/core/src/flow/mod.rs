//! Structure-preserving integration of the basis-change flow.
//!
//! Functions are rows of an `n × (D·C)` batch. With the step size folded into
//! the projection field, `Û = √Δt · U_θ(t_mid)`, the generator on the
//! quadrature set is `K̂ = Ûᵀ Ŝ Û / D` and never materialized: every action
//! goes through the `r × r` Gram matrix `G = Û Ûᵀ / D`.

mod grid;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use grid::TimeGrid;

use crate::autodiff::{BoundParams, Graph, Tensor};
use crate::error::{Error, Result};
use crate::fields::{GeneratorModel, PointCache};
use crate::space::{eval_fourier_rows, FourierIndex, QuadratureSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Method {
    #[default]
    #[serde(rename = "cayley")]
    Cayley,
    #[serde(rename = "euler-fwd")]
    EulerForward,
    #[serde(rename = "euler-bwd")]
    EulerBackward,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cayley, Method::EulerForward, Method::EulerBackward];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Cayley => "cayley",
            Method::EulerForward => "euler-fwd",
            Method::EulerBackward => "euler-bwd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown integrator '{s}' (cayley, euler-fwd, euler-bwd)")))
    }
}

fn eye<'g>(graph: &'g Graph, r: usize) -> Tensor<'g> {
    graph.constant(Array2::eye(r))
}

fn woodbury_solve<'g>(a: Tensor<'g>, rhs: Tensor<'g>, step: usize) -> Result<Tensor<'g>> {
    a.solve(rhs).map_err(|e| match e {
        Error::Singular { cond } => Error::Integration { step, cond },
        other => other,
    })
}

/// One step of `method` applied to every row of `phi`.
///
/// `u_hat` is `r × (D·C)` with `√Δt` already folded in, `s` is the `r × r`
/// skew matrix and `num_points` is `D`. `step` only labels errors.
pub fn flow_step<'g>(
    method: Method,
    u_hat: Tensor<'g>,
    s: Tensor<'g>,
    phi: Tensor<'g>,
    num_points: usize,
    step: usize,
) -> Result<Tensor<'g>> {
    let graph = phi.graph();
    let inv_d = 1.0 / num_points as f64;
    let r = u_hat.shape().0;
    let ut = u_hat.t();
    // coefficients Ûφ/D, one row per function
    let coeff = phi.matmul(ut)?.scale(inv_d);
    match method {
        Method::EulerForward => phi.add(coeff.matmul(s.t())?.matmul(u_hat)?),
        Method::EulerBackward => {
            let gram = u_hat.matmul(ut)?.scale(inv_d);
            let a = eye(graph, r).sub(gram.matmul(s)?)?;
            let x = woodbury_solve(a, coeff.t(), step)?;
            phi.add(s.matmul(x)?.t().matmul(u_hat)?)
        }
        Method::Cayley => {
            let gram = u_hat.matmul(ut)?.scale(inv_d);
            let y = phi.add(coeff.matmul(s.t())?.matmul(u_hat)?.scale(0.5))?;
            let a = eye(graph, r).sub(gram.matmul(s)?.scale(0.5))?;
            let cy = y.matmul(ut)?.scale(inv_d);
            let x = woodbury_solve(a, cy.t(), step)?;
            y.add(s.matmul(x)?.t().matmul(u_hat)?.scale(0.5))
        }
    }
}

/// Integrates `phi0` over `grid`, asking `field(l, t_mid)` for the unscaled
/// `(U, Ŝ)` of each step.
pub fn integrate_with<'g, F>(
    grid: &TimeGrid,
    phi0: Tensor<'g>,
    method: Method,
    num_points: usize,
    mut field: F,
) -> Result<Tensor<'g>>
where
    F: FnMut(usize, f64) -> Result<(Tensor<'g>, Tensor<'g>)>,
{
    let mut phi = phi0;
    for l in 0..grid.steps() {
        let (t_mid, dt) = grid.step(l);
        let (u, s) = field(l, t_mid)?;
        phi = flow_step(method, u.scale(dt.sqrt()), s, phi, num_points, l)?;
    }
    Ok(phi)
}

/// `Q_θ(1)` applied to a batch of functions on the cached points.
pub fn integrate<'g>(
    model: &GeneratorModel,
    graph: &'g Graph,
    params: &BoundParams<'g>,
    grid: &TimeGrid,
    cache: &PointCache,
    phi0: Tensor<'g>,
    method: Method,
) -> Result<Tensor<'g>> {
    let spatial = model.spatial(graph, params, cache)?;
    integrate_with(grid, phi0, method, cache.len(), |_, t| {
        let gamma = model.embed(graph, t);
        Ok((model.eval_u_at(params, gamma, &spatial)?, model.eval_m_skew(params, gamma)?))
    })
}

/// Evolved reference elements `Q_θ φ_i` for every index, `n × (D·C)`.
#[allow(clippy::too_many_arguments)]
pub fn apply_q<'g>(
    model: &GeneratorModel,
    graph: &'g Graph,
    params: &BoundParams<'g>,
    indices: &[FourierIndex],
    points: &QuadratureSet,
    cache: &PointCache,
    grid: &TimeGrid,
    method: Method,
) -> Result<Tensor<'g>> {
    let phi0 = graph.constant(eval_fourier_rows(indices, points, model.channels())?);
    integrate(model, graph, params, grid, cache, phi0, method)
}

/// One gradient-free step on plain arrays.
pub fn step_frozen(
    method: Method,
    u_hat: &Array2<f64>,
    s: &Array2<f64>,
    phi: Array2<f64>,
    num_points: usize,
    step: usize,
) -> Result<Array2<f64>> {
    let graph = Graph::new();
    let out = flow_step(
        method,
        graph.constant(u_hat.clone()),
        graph.constant(s.clone()),
        graph.constant(phi),
        num_points,
        step,
    )?;
    let v = (*out.value()).clone();
    Ok(v)
}

/// Gradient-free integration of explicit function rows; each step lives in
/// its own short graph so memory stays flat in the number of steps.
pub fn integrate_frozen(
    model: &GeneratorModel,
    grid: &TimeGrid,
    cache: &PointCache,
    phi0: Array2<f64>,
    method: Method,
) -> Result<Array2<f64>> {
    let mut phi = phi0;
    let base = Graph::new();
    let spatial = model.spatial(&base, &model.params().bind_frozen(&base), cache)?;
    for l in 0..grid.steps() {
        let (t_mid, dt) = grid.step(l);
        let graph = Graph::new();
        let params = model.params().bind_frozen(&graph);
        let gamma = model.embed(&graph, t_mid);
        let u = model.eval_u_at(&params, gamma, &spatial.detached_into(&graph))?.scale(dt.sqrt());
        let s = model.eval_m_skew(&params, gamma)?;
        let next = flow_step(method, u, s, graph.constant(phi), cache.len(), l)?;
        phi = (*next.value()).clone();
    }
    Ok(phi)
}

/// Gradient-free [`apply_q`].
pub fn apply_q_frozen(
    model: &GeneratorModel,
    indices: &[FourierIndex],
    points: &QuadratureSet,
    grid: &TimeGrid,
    method: Method,
) -> Result<Array2<f64>> {
    let cache = model.prepare(points)?;
    let phi0 = eval_fourier_rows(indices, points, model.channels())?;
    integrate_frozen(model, grid, &cache, phi0, method)
}

#[cfg(test)]
mod tests;

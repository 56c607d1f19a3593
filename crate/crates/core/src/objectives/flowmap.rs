use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::QuadratureSet;

/// A state map `Ψ` of the torus `[0,1)^d` onto itself.
pub trait FlowMap {
    fn dim(&self) -> usize;

    /// `Ψ(ω)` for every row, before wrapping.
    fn advance(&self, points: &Array2<f64>) -> Array2<f64>;

    /// `Ψ(ω)` wrapped back into the cube.
    fn apply(&self, points: &QuadratureSet) -> Result<QuadratureSet> {
        if points.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: points.dim(),
            });
        }
        let mut out = self.advance(points.points());
        for mut row in out.rows_mut() {
            for v in row.iter_mut() {
                *v = wrap(*v);
            }
            if row.iter().any(|v| !(0.0..1.0).contains(v)) {
                return Err(Error::OutOfDomain(row.to_vec()));
            }
        }
        QuadratureSet::from_points(out)
    }
}

/// `x mod 1` in `[0, 1)`; non-finite input passes through.
pub fn wrap(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityMap {
    pub dim: usize,
}

impl FlowMap for IdentityMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn advance(&self, points: &Array2<f64>) -> Array2<f64> {
        points.clone()
    }
}

/// Rigid translation `ω ↦ ω + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub shift: Vec<f64>,
}

impl FlowMap for Translation {
    fn dim(&self) -> usize {
        self.shift.len()
    }

    fn advance(&self, points: &Array2<f64>) -> Array2<f64> {
        let mut out = points.clone();
        for mut row in out.rows_mut() {
            row.iter_mut().zip(&self.shift).for_each(|(v, s)| *v += s);
        }
        out
    }
}

/// Steady Taylor-Green vortex field on the unit torus,
/// `v = A (sin 2πx cos 2πy, −cos 2πx sin 2πy)`, advanced by an explicit
/// Runge-Kutta scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaylorGreen {
    pub amplitude: f64,
    pub dt: f64,
    pub substeps: usize,
    /// 1, 2 or 4.
    pub order: u8,
}

impl Default for TaylorGreen {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            dt: 0.5,
            substeps: 8,
            order: 4,
        }
    }
}

impl TaylorGreen {
    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4].contains(&self.order) {
            return Err(Error::Config(format!("Runge-Kutta order must be 1, 2 or 4, got {}", self.order)));
        }
        if self.substeps == 0 || !self.dt.is_finite() {
            return Err(Error::Config("flow needs substeps >= 1 and a finite dt".into()));
        }
        Ok(())
    }

    pub fn velocity(&self, x: f64, y: f64) -> (f64, f64) {
        let (sx, cx) = (2.0 * PI * x).sin_cos();
        let (sy, cy) = (2.0 * PI * y).sin_cos();
        (self.amplitude * sx * cy, -self.amplitude * cx * sy)
    }

    pub fn with_order(mut self, order: u8) -> Self {
        self.order = order;
        self
    }

    /// The same scheme run backwards in time.
    pub fn inverse(mut self) -> Self {
        self.dt = -self.dt;
        self
    }

    fn rk(&self, p: (f64, f64), h: f64) -> (f64, f64) {
        let f = |q: (f64, f64)| self.velocity(q.0, q.1);
        let add = |q: (f64, f64), k: (f64, f64), s: f64| (q.0 + s * k.0, q.1 + s * k.1);
        match self.order {
            1 => add(p, f(p), h),
            2 => {
                let k1 = f(p);
                let k2 = f(add(p, k1, 0.5 * h));
                add(p, k2, h)
            }
            _ => {
                let k1 = f(p);
                let k2 = f(add(p, k1, 0.5 * h));
                let k3 = f(add(p, k2, 0.5 * h));
                let k4 = f(add(p, k3, h));
                (
                    p.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                    p.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
                )
            }
        }
    }
}

impl FlowMap for TaylorGreen {
    fn dim(&self) -> usize {
        2
    }

    fn advance(&self, points: &Array2<f64>) -> Array2<f64> {
        let h = self.dt / self.substeps as f64;
        let mut out = points.clone();
        for mut row in out.rows_mut() {
            let mut p = (row[0], row[1]);
            for _ in 0..self.substeps {
                p = self.rk(p, h);
            }
            row[0] = p.0;
            row[1] = p.1;
        }
        out
    }
}

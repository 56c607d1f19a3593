//! Small dense LU factorization used by the differentiable linear solve.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Condition-number threshold above which a system is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// LU factorization with partial pivoting, `P A = L U`, packed in one matrix.
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: Array2<f64>,
    perm: Vec<usize>,
    cond: f64,
}

impl LuFactor {
    pub fn new(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::ShapeMismatch {
                op: "lu",
                lhs: a.dim(),
                rhs: (n, n),
            });
        }
        let norm1 = one_norm(a);
        let mut lu = a.as_standard_layout().into_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[[i, k]].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax == 0.0 || !pmax.is_finite() {
                return Err(Error::Singular { cond: f64::INFINITY });
            }
            if p != k {
                for j in 0..n {
                    lu.swap([k, j], [p, j]);
                }
                perm.swap(k, p);
            }
            let s = lu.as_slice_mut().expect("standard layout");
            let pivot = s[k * n + k];
            let (upper, lower) = s.split_at_mut((k + 1) * n);
            let row_k = &upper[k * n + k + 1..];
            for i in k + 1..n {
                let row_i = &mut lower[(i - k - 1) * n..(i - k) * n];
                let f = row_i[k] / pivot;
                row_i[k] = f;
                if f != 0.0 {
                    axpy(&mut row_i[k + 1..], -f, row_k);
                }
            }
        }
        let mut fac = LuFactor {
            lu,
            perm,
            cond: 0.0,
        };
        let inv = fac.solve(Array2::eye(n).view());
        fac.cond = norm1 * one_norm(inv.view());
        if !fac.cond.is_finite() || fac.cond > MAX_CONDITION {
            return Err(Error::Singular { cond: fac.cond });
        }
        Ok(fac)
    }

    /// One-norm condition estimate `‖A‖₁‖A⁻¹‖₁`.
    pub fn condition(&self) -> f64 {
        self.cond
    }

    pub fn solve(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = self.lu.nrows();
        let m = b.ncols();
        let mut x = Array2::zeros(b.dim());
        for (i, &p) in self.perm.iter().enumerate() {
            x.row_mut(i).assign(&b.row(p));
        }
        let lu = self.lu.as_slice().expect("standard layout");
        let xs = x.as_slice_mut().expect("standard layout");
        // Row-oriented substitution keeps the inner loops contiguous.
        for i in 0..n {
            let (done, rest) = xs.split_at_mut(i * m);
            let xi = &mut rest[..m];
            for j in 0..i {
                let f = lu[i * n + j];
                if f != 0.0 {
                    axpy(xi, -f, &done[j * m..(j + 1) * m]);
                }
            }
        }
        for i in (0..n).rev() {
            let (head, tail) = xs.split_at_mut((i + 1) * m);
            let xi = &mut head[i * m..];
            for j in i + 1..n {
                let f = lu[i * n + j];
                if f != 0.0 {
                    axpy(xi, -f, &tail[(j - i - 1) * m..(j - i) * m]);
                }
            }
            let d = 1.0 / lu[i * n + i];
            xi.iter_mut().for_each(|v| *v *= d);
        }
        x
    }

    /// Solves `Aᵀ x = b` with the same factors.
    pub fn solve_transpose(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = self.lu.nrows();
        let m = b.ncols();
        let mut y = b.as_standard_layout().into_owned();
        let lu = self.lu.as_slice().expect("standard layout");
        let ys = y.as_slice_mut().expect("standard layout");
        // Uᵀ z = b, eliminating column by column.
        for i in 0..n {
            let (done, rest) = ys.split_at_mut((i + 1) * m);
            let yi = &mut done[i * m..];
            let d = 1.0 / lu[i * n + i];
            yi.iter_mut().for_each(|v| *v *= d);
            for j in i + 1..n {
                let f = lu[i * n + j];
                if f != 0.0 {
                    axpy(&mut rest[(j - i - 1) * m..(j - i) * m], -f, yi);
                }
            }
        }
        // Lᵀ w = z
        for i in (0..n).rev() {
            let (head, tail) = ys.split_at_mut(i * m);
            let yi = &tail[..m];
            for j in 0..i {
                let f = lu[i * n + j];
                if f != 0.0 {
                    axpy(&mut head[j * m..(j + 1) * m], -f, yi);
                }
            }
        }
        let mut x = Array2::zeros(b.dim());
        for (i, &p) in self.perm.iter().enumerate() {
            x.row_mut(p).assign(&y.row(i));
        }
        x
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

fn one_norm(a: ArrayView2<'_, f64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `A x = b` for a square `A`.
pub fn solve(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if b.nrows() != a.nrows() {
        return Err(Error::ShapeMismatch {
            op: "linear-solve",
            lhs: a.dim(),
            rhs: b.dim(),
        });
    }
    Ok(LuFactor::new(a)?.solve(b))
}

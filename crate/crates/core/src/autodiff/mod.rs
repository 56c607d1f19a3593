//! Reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Graph`] is a dynamic tape: every operation on a [`Tensor`] executes
//! eagerly and appends a node recording its inputs. [`Graph::backward`] walks
//! the tape in reverse and accumulates cotangents into the leaves created with
//! [`Graph::param`]. Every tensor is a matrix; scalars are `1×1` and vectors
//! are single rows or columns.

pub mod check;
pub mod linalg;
mod params;

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{s, Array2, Axis};

pub use self::params::{BoundParams, ParamId, ParamStore};
use crate::error::{Error, Result};

pub type Array = Array2<f64>;

/// Epsilon added to the mean square inside RMS normalization.
pub const RMS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Sin,
    Cos,
    Exp,
    Sigmoid,
    Square,
    Sqrt,
    Silu,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sum(usize),
    SumAxis(usize),
    Broadcast(usize),
    Concat(Vec<usize>, usize),
    Slice {
        src: usize,
        axis: usize,
        start: usize,
    },
    Unary(usize, Unary),
    RmsNorm(usize),
    Solve(usize, usize),
    Regroup {
        src: usize,
        groups: usize,
        inner: usize,
    },
}

struct Node {
    value: Rc<Array>,
    op: Op,
    needs_grad: bool,
}

/// A recorded computation. Tensors borrow the graph they live in.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Tensor<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Cotangents of the leaves reached by a backward pass.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of the root with respect to `t`, if `t` is a trainable leaf
    /// reachable from the root.
    pub fn get(&self, t: Tensor<'_>) -> Option<&Array> {
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

fn reduce_to(mut g: Array, shape: (usize, usize)) -> Array {
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array, op: Op, needs_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Tensor {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Array> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Non-trainable leaf.
    pub fn constant(&self, value: Array) -> Tensor<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Tensor<'_> {
        self.constant(Array::from_elem((1, 1), v))
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn param(&self, value: Array) -> Tensor<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Concatenates tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat<'g>(&'g self, parts: &[Tensor<'g>], axis: usize) -> Result<Tensor<'g>> {
        let values: Vec<Rc<Array>> = parts.iter().map(|t| t.value()).collect();
        let first = values.first().ok_or(Error::Dimension {
            expected: 1,
            got: 0,
        })?;
        for v in &values[1..] {
            let ok = if axis == 0 {
                v.ncols() == first.ncols()
            } else {
                v.nrows() == first.nrows()
            };
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.dim(),
                    rhs: v.dim(),
                });
            }
        }
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views).expect("shapes checked");
        let needs = parts.iter().any(|t| self.needs(t.id));
        Ok(self.push(out, Op::Concat(parts.iter().map(|t| t.id).collect(), axis), needs))
    }

    /// Accumulates gradients of the scalar `root` into every trainable leaf.
    pub fn backward(&self, root: Tensor<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[root.id].value.dim();
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Array>> = vec![None; root.id + 1];
        grads[root.id] = Some(Array::ones((1, 1)));

        fn acc(grads: &mut [Option<Array>], nodes: &[Node], id: usize, g: Array) {
            if !nodes[id].needs_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| &*nodes[i].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *a, reduce_to(g.clone(), val(*a).dim()));
                    acc(&mut grads, &nodes, *b, reduce_to(g, val(*b).dim()));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &nodes, *a, reduce_to(g.clone(), val(*a).dim()));
                    acc(&mut grads, &nodes, *b, reduce_to(-g, val(*b).dim()));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if nodes[*a].needs_grad {
                        acc(&mut grads, &nodes, *a, reduce_to(&g * vb, va.dim()));
                    }
                    if nodes[*b].needs_grad {
                        acc(&mut grads, &nodes, *b, reduce_to(&g * va, vb.dim()));
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let ga = &g / vb;
                    if nodes[*b].needs_grad {
                        let gb = -(&ga * &*node.value);
                        acc(&mut grads, &nodes, *b, reduce_to(gb, vb.dim()));
                    }
                    acc(&mut grads, &nodes, *a, reduce_to(ga, va.dim()));
                }
                Op::Neg(a) => acc(&mut grads, &nodes, *a, -g),
                Op::Scale(a, f) => acc(&mut grads, &nodes, *a, g * *f),
                Op::AddScalar(a) => acc(&mut grads, &nodes, *a, g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if nodes[*a].needs_grad {
                        acc(&mut grads, &nodes, *a, g.dot(&vb.t()));
                    }
                    if nodes[*b].needs_grad {
                        acc(&mut grads, &nodes, *b, va.t().dot(&g));
                    }
                }
                Op::Transpose(a) => acc(&mut grads, &nodes, *a, g.t().to_owned()),
                Op::Sum(a) => {
                    let d = val(*a).dim();
                    acc(&mut grads, &nodes, *a, Array::from_elem(d, g[[0, 0]]));
                }
                Op::SumAxis(a) => {
                    let d = val(*a).dim();
                    let full = g.broadcast(d).expect("reduced axis broadcasts").to_owned();
                    acc(&mut grads, &nodes, *a, full);
                }
                Op::Broadcast(a) => {
                    let d = val(*a).dim();
                    acc(&mut grads, &nodes, *a, reduce_to(g, d));
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let d = val(p).dim();
                        let len = if *axis == 0 { d.0 } else { d.1 };
                        let piece = if *axis == 0 {
                            g.slice(s![offset..offset + len, ..]).to_owned()
                        } else {
                            g.slice(s![.., offset..offset + len]).to_owned()
                        };
                        acc(&mut grads, &nodes, p, piece);
                        offset += len;
                    }
                }
                Op::Slice { src, axis, start } => {
                    let mut full = Array::zeros(val(*src).dim());
                    if *axis == 0 {
                        full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    } else {
                        full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    }
                    acc(&mut grads, &nodes, *src, full);
                }
                Op::Unary(a, kind) => {
                    let x = val(*a);
                    let y = &*node.value;
                    let local = match kind {
                        Unary::Sin => x.mapv(f64::cos),
                        Unary::Cos => x.mapv(|v| -v.sin()),
                        Unary::Exp => y.clone(),
                        Unary::Sigmoid => y.mapv(|s| s * (1.0 - s)),
                        Unary::Square => x * 2.0,
                        Unary::Sqrt => y.mapv(|s| 0.5 / s),
                        Unary::Silu => x.mapv(|v| {
                            let s = sigmoid(v);
                            s * (1.0 + v * (1.0 - s))
                        }),
                        Unary::Tanh => y.mapv(|t| 1.0 - t * t),
                    };
                    acc(&mut grads, &nodes, *a, g * &local);
                }
                Op::RmsNorm(a) => {
                    let x = val(*a);
                    let y = &*node.value;
                    let n = x.ncols() as f64;
                    let mut gx = Array::zeros(x.dim());
                    for ((mut out, xr), (yr, gr)) in gx
                        .rows_mut()
                        .into_iter()
                        .zip(x.rows())
                        .zip(y.rows().into_iter().zip(g.rows()))
                    {
                        let ms = xr.iter().map(|v| v * v).sum::<f64>() / n;
                        let rms = (ms + RMS_EPS).sqrt();
                        let proj = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, &gv), &yv) in out.iter_mut().zip(gr.iter()).zip(yr.iter()) {
                            *o = (gv - yv * proj) / rms;
                        }
                    }
                    acc(&mut grads, &nodes, *a, gx);
                }
                Op::Solve(a, b) => {
                    let x = &*node.value;
                    let fac = linalg::LuFactor::new(val(*a).view())?;
                    let gb = fac.solve_transpose(g.view());
                    if nodes[*a].needs_grad {
                        acc(&mut grads, &nodes, *a, -gb.dot(&x.t()));
                    }
                    acc(&mut grads, &nodes, *b, gb);
                }
                Op::Regroup { src, groups, inner } => {
                    let d = val(*src).dim();
                    let back = regroup_inverse(&g, d, *groups, *inner);
                    acc(&mut grads, &nodes, *src, back);
                }
            }
        }
        // Only leaf gradients survive.
        for (id, slot) in grads.iter_mut().enumerate() {
            if !matches!(nodes[id].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// `(rows, groups·inner)` → `(groups, rows·inner)` with
/// `out[k, j·inner + c] = a[j, k·inner + c]`.
fn regroup_forward(a: &Array, groups: usize, inner: usize) -> Array {
    let rows = a.nrows();
    let mut out = Array::zeros((groups, rows * inner));
    for j in 0..rows {
        for k in 0..groups {
            for c in 0..inner {
                out[[k, j * inner + c]] = a[[j, k * inner + c]];
            }
        }
    }
    out
}

fn regroup_inverse(g: &Array, src: (usize, usize), groups: usize, inner: usize) -> Array {
    let mut out = Array::zeros(src);
    for j in 0..src.0 {
        for k in 0..groups {
            for c in 0..inner {
                out[[j, k * inner + c]] = g[[k, j * inner + c]];
            }
        }
    }
    out
}

impl<'g> Tensor<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Array> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.graph.nodes.borrow()[self.id].value.dim()
    }

    /// The single entry of a `1×1` tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs(self.id)
    }

    fn unary_node(&self, out: Array, op: Op) -> Tensor<'g> {
        self.graph.push(out, op, self.requires_grad())
    }

    fn binary(
        &self,
        other: Tensor<'g>,
        name: &'static str,
        f: impl Fn(&Array, &Array) -> Array,
        op: fn(usize, usize) -> Op,
    ) -> Result<Tensor<'g>> {
        let (a, b) = (self.value(), other.value());
        broadcast_shape(name, a.dim(), b.dim())?;
        let out = f(&a, &b);
        let needs = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(out, op(self.id, other.id), needs))
    }

    pub fn add(&self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(&self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn div(&self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.binary(other, "div", |a, b| a / b, Op::Div)
    }

    pub fn neg(&self) -> Tensor<'g> {
        self.unary_node(-&*self.value(), Op::Neg(self.id))
    }

    pub fn scale(&self, f: f64) -> Tensor<'g> {
        self.unary_node(&*self.value() * f, Op::Scale(self.id, f))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<'g> {
        self.unary_node(&*self.value() + c, Op::AddScalar(self.id))
    }

    pub fn matmul(&self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        let (a, b) = (self.value(), other.value());
        if a.ncols() != b.nrows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.dim(),
                rhs: b.dim(),
            });
        }
        let needs = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(a.dot(&*b), Op::MatMul(self.id, other.id), needs))
    }

    pub fn t(&self) -> Tensor<'g> {
        self.unary_node(self.value().t().to_owned(), Op::Transpose(self.id))
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&self) -> Tensor<'g> {
        let s = self.value().sum();
        self.unary_node(Array::from_elem((1, 1), s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Tensor<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axis`, keeping it with length one.
    pub fn sum_axis(&self, axis: usize) -> Tensor<'g> {
        let out = self.value().sum_axis(Axis(axis)).insert_axis(Axis(axis));
        self.unary_node(out, Op::SumAxis(self.id))
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor<'g> {
        let (r, c) = self.shape();
        let n = if axis == 0 { r } else { c } as f64;
        self.sum_axis(axis).scale(1.0 / n)
    }

    pub fn broadcast_to(&self, shape: (usize, usize)) -> Result<Tensor<'g>> {
        let v = self.value();
        let out = v
            .broadcast(shape)
            .ok_or(Error::ShapeMismatch {
                op: "broadcast",
                lhs: v.dim(),
                rhs: shape,
            })?
            .to_owned();
        Ok(self.unary_node(out, Op::Broadcast(self.id)))
    }

    /// `len` rows (`axis = 0`) or columns (`axis = 1`) starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<'g>> {
        let v = self.value();
        let extent = if axis == 0 { v.nrows() } else { v.ncols() };
        if start + len > extent {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: v.dim(),
                rhs: (start, len),
            });
        }
        let out = if axis == 0 {
            v.slice(s![start..start + len, ..]).to_owned()
        } else {
            v.slice(s![.., start..start + len]).to_owned()
        };
        Ok(self.unary_node(out, Op::Slice { src: self.id, axis, start }))
    }

    fn map(&self, kind: Unary, f: impl Fn(f64) -> f64) -> Tensor<'g> {
        self.unary_node(self.value().mapv(f), Op::Unary(self.id, kind))
    }

    pub fn sin(&self) -> Tensor<'g> {
        self.map(Unary::Sin, f64::sin)
    }

    pub fn cos(&self) -> Tensor<'g> {
        self.map(Unary::Cos, f64::cos)
    }

    pub fn exp(&self) -> Tensor<'g> {
        self.map(Unary::Exp, f64::exp)
    }

    pub fn sigmoid(&self) -> Tensor<'g> {
        self.map(Unary::Sigmoid, sigmoid)
    }

    pub fn square(&self) -> Tensor<'g> {
        self.map(Unary::Square, |v| v * v)
    }

    pub fn sqrt(&self) -> Tensor<'g> {
        self.map(Unary::Sqrt, f64::sqrt)
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&self) -> Tensor<'g> {
        self.map(Unary::Silu, |v| v * sigmoid(v))
    }

    pub fn tanh(&self) -> Tensor<'g> {
        self.map(Unary::Tanh, f64::tanh)
    }

    /// Divides each row by its root mean square (no gain).
    pub fn rms_norm(&self) -> Tensor<'g> {
        let mut out = (*self.value()).clone();
        let n = out.ncols() as f64;
        for mut row in out.rows_mut() {
            let rms = (row.iter().map(|v| v * v).sum::<f64>() / n + RMS_EPS).sqrt();
            row.mapv_inplace(|v| v / rms);
        }
        self.unary_node(out, Op::RmsNorm(self.id))
    }

    /// Solves `self · x = rhs` for square `self`.
    pub fn solve(&self, rhs: Tensor<'g>) -> Result<Tensor<'g>> {
        let x = linalg::solve(self.value().view(), rhs.value().view())?;
        let needs = self.requires_grad() || rhs.requires_grad();
        Ok(self.graph.push(x, Op::Solve(self.id, rhs.id), needs))
    }

    /// Reinterprets `(rows, groups·inner)` as `groups` blocks and lays them
    /// out as `(groups, rows·inner)`; see the channel layout of the
    /// projection field.
    pub fn regroup(&self, groups: usize, inner: usize) -> Result<Tensor<'g>> {
        let v = self.value();
        if v.ncols() != groups * inner {
            return Err(Error::ShapeMismatch {
                op: "regroup",
                lhs: v.dim(),
                rhs: (groups, inner),
            });
        }
        let out = regroup_forward(&v, groups, inner);
        Ok(self.unary_node(
            out,
            Op::Regroup {
                src: self.id,
                groups,
                inner,
            },
        ))
    }

    /// Same value, cut off from the gradient flow.
    pub fn detach(&self) -> Tensor<'g> {
        self.graph.constant((*self.value()).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn silu_values() {
        let g = Graph::new();
        let x = g.constant(array![[0.0, 1.0]]);
        let y = x.silu().value();
        assert_eq!(y[[0, 0]], 0.0);
        assert!((y[[0, 1]] - 0.7310586).abs() < 1e-6);
    }

    #[test]
    fn matmul_identity() {
        let g = Graph::new();
        let a = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let out = g.constant(Array::eye(3)).matmul(g.constant(a.clone())).unwrap();
        assert_eq!(*out.value(), a);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let g = Graph::new();
        let x = g.param(array![[1.0, 2.0, 3.0]]);
        let grads = g.backward(x.square().sum()).unwrap();
        assert_eq!(grads.get(x).unwrap(), &array![[2.0, 4.0, 6.0]]);
    }

    #[test]
    fn sin_gradient_at_zero() {
        let g = Graph::new();
        let x = g.param(array![[0.0]]);
        let grads = g.backward(x.sin()).unwrap();
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let g = Graph::new();
        let x = g.param(array![[1.0, 2.0]]);
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot((1, 2)))));
    }

    #[test]
    fn shape_errors_name_the_operation() {
        let g = Graph::new();
        let a = g.constant(Array::zeros((2, 3)));
        let b = g.constant(Array::zeros((4, 3)));
        let err = a.add(b).unwrap_err();
        assert_eq!(err.to_string(), "shape mismatch in add: (2, 3) vs (4, 3)");
        assert!(matches!(a.matmul(b), Err(Error::ShapeMismatch { op: "matmul", .. })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::new();
        let x = g.param(array![[1.0]]);
        let c = g.constant(array![[2.0]]);
        let grads = g.backward(x.mul(c).unwrap()).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn regroup_layout() {
        let g = Graph::new();
        // two rows (points), two groups, two channels
        let a = g.constant(array![[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]]);
        let r = a.regroup(2, 2).unwrap().value();
        assert_eq!(*r, array![[1.0, 2.0, 5.0, 6.0], [3.0, 4.0, 7.0, 8.0]]);
    }
}

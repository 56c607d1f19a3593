use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{BoundParams, ParamId, ParamStore, Tensor};
use crate::error::Result;

/// Uniform `±1/√fan_in` matrix, scaled by `gain`.
pub fn init_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let a = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || gain * rng.random_range(-a..=a))
}

/// `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.w"), init_uniform(fan_in, fan_out, fan_in, gain, rng));
        let bias = bias.then(|| store.add(format!("{name}.b"), init_uniform(1, fan_out, fan_in, gain, rng)));
        Self { weight, bias }
    }

    pub fn forward<'g>(&self, p: &BoundParams<'g>, x: Tensor<'g>) -> Result<Tensor<'g>> {
        let y = x.matmul(p.get(self.weight))?;
        match self.bias {
            Some(b) => y.add(p.get(b)),
            None => Ok(y),
        }
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).fill(0.0);
        if let Some(b) = self.bias {
            store.get_mut(b).fill(0.0);
        }
    }
}

/// Hidden block `silu(rms_norm(x W + b) ⊙ g)`.
#[derive(Debug, Clone, Copy)]
pub struct NormBlock {
    pub linear: Linear,
    pub gain: ParamId,
}

impl NormBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let linear = Linear::new(store, name, fan_in, fan_out, true, 1.0, rng);
        let gain = store.add(format!("{name}.g"), Array2::ones((1, fan_out)));
        Self { linear, gain }
    }

    pub fn activate<'g>(&self, p: &BoundParams<'g>, pre: Tensor<'g>) -> Result<Tensor<'g>> {
        Ok(pre.rms_norm().mul(p.get(self.gain))?.silu())
    }

    pub fn forward<'g>(&self, p: &BoundParams<'g>, x: Tensor<'g>) -> Result<Tensor<'g>> {
        let pre = self.linear.forward(p, x)?;
        self.activate(p, pre)
    }
}

/// Stack of normalized hidden blocks followed by a linear head.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Vec<NormBlock>,
    pub head: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        widths: &[usize],
        output: usize,
        head_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut fan_in = input;
        let mut hidden = Vec::with_capacity(widths.len());
        for (i, &w) in widths.iter().enumerate() {
            hidden.push(NormBlock::new(store, &format!("{name}.h{i}"), fan_in, w, rng));
            fan_in = w;
        }
        let head = Linear::new(store, &format!("{name}.head"), fan_in, output, true, head_gain, rng);
        Self { hidden, head }
    }

    pub fn forward<'g>(&self, p: &BoundParams<'g>, x: Tensor<'g>) -> Result<Tensor<'g>> {
        let mut h = x;
        for block in &self.hidden {
            h = block.forward(p, h)?;
        }
        self.head.forward(p, h)
    }
}

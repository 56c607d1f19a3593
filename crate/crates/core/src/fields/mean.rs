use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::Linear;
use crate::autodiff::{BoundParams, Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::space::QuadratureSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanFieldConfig {
    pub features: usize,
    pub sigma: f64,
    pub hidden: Vec<usize>,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        Self {
            features: 64,
            sigma: 8.0,
            hidden: vec![128, 128],
        }
    }
}

/// Random-Fourier-feature network `ν_ψ : [0,1]^d → ℝ^C` with its own
/// parameter store.
#[derive(Debug, Clone)]
pub struct MeanField {
    dim: usize,
    channels: usize,
    /// `d × F` Gaussian frequencies, premultiplied by `2π`.
    freqs: Array2<f64>,
    store: ParamStore,
    hidden: Vec<Linear>,
    head: Linear,
}

impl MeanField {
    pub fn new<R: Rng + ?Sized>(dim: usize, channels: usize, config: &MeanFieldConfig, rng: &mut R) -> Result<Self> {
        if config.features == 0 || !(config.sigma > 0.0) {
            return Err(Error::Config("mean field needs features > 0 and sigma > 0".into()));
        }
        let normal = Normal::new(0.0, config.sigma).expect("positive sigma");
        let freqs = Array2::from_shape_simple_fn((dim, config.features), || 2.0 * PI * normal.sample(rng));
        let mut store = ParamStore::new();
        let mut fan_in = 2 * config.features;
        let mut hidden = Vec::new();
        for (i, &w) in config.hidden.iter().enumerate() {
            hidden.push(Linear::new(&mut store, &format!("nu.h{i}"), fan_in, w, true, 1.0, rng));
            fan_in = w;
        }
        let head = Linear::new(&mut store, "nu.head", fan_in, channels, true, 1.0, rng);
        Ok(Self {
            dim,
            channels,
            freqs,
            store,
            hidden,
            head,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn zero_head(&mut self) {
        self.head.zero(&mut self.store);
    }

    pub fn features(&self, points: &QuadratureSet) -> Result<Array2<f64>> {
        if points.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: points.dim(),
            });
        }
        let z = points.points().dot(&self.freqs);
        let f = z.ncols();
        let mut out = Array2::zeros((z.nrows(), 2 * f));
        for ((j, k), &v) in z.indexed_iter() {
            let (s, c) = v.sin_cos();
            out[[j, k]] = s;
            out[[j, f + k]] = c;
        }
        Ok(out)
    }

    /// `ν_ψ` at every point, shaped `D × C`.
    pub fn eval<'g>(&self, graph: &'g Graph, p: &BoundParams<'g>, points: &QuadratureSet) -> Result<Tensor<'g>> {
        let mut h = graph.constant(self.features(points)?);
        for layer in &self.hidden {
            h = layer.forward(p, h)?.silu();
        }
        self.head.forward(p, h)
    }

    /// `ν_ψ` laid out as a single function row, `1 × (D·C)`.
    pub fn eval_row<'g>(&self, graph: &'g Graph, p: &BoundParams<'g>, points: &QuadratureSet) -> Result<Tensor<'g>> {
        self.eval(graph, p, points)?.regroup(1, self.channels)
    }
}

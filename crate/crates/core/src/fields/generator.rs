use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embed::{SpatialFeatures, TimeEmbedding};
use super::mlp::{Linear, Mlp, NormBlock};
use crate::autodiff::{BoundParams, Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::space::fourier::spatial_value;
use crate::space::{FourierIndex, QuadratureSet};

/// Architecture of the generator fields `U_θ` and `M_θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub channels: usize,
    pub rank: usize,
    pub width: usize,
    pub depth: usize,
    pub time_freqs: usize,
    pub feature_levels: usize,
    pub max_freq: f64,
    pub residual_hidden: Vec<usize>,
    pub mix_hidden: Vec<usize>,
    /// Residual bandwidth `K`; `0` picks 9 in 1D and 5 otherwise.
    pub bandwidth: usize,
    pub head_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            channels: 1,
            rank: 16,
            width: 256,
            depth: 4,
            time_freqs: TimeEmbedding::DEFAULT_FREQS,
            feature_levels: 8,
            max_freq: 64.0,
            residual_hidden: vec![64, 64],
            mix_hidden: vec![64, 64],
            bandwidth: 0,
            head_scale: 1e-2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.dim == 0 || self.channels == 0 {
            return bad("dim and channels must be positive");
        }
        if self.rank == 0 {
            return bad("rank must be positive");
        }
        if self.width == 0 || self.depth == 0 {
            return bad("width and depth must be positive");
        }
        if self.time_freqs == 0 || self.feature_levels == 0 || self.max_freq < 1.0 {
            return bad("embedding sizes must be positive and max_freq >= 1");
        }
        Ok(())
    }

    pub fn effective_bandwidth(&self) -> usize {
        match (self.bandwidth, self.dim) {
            (0, 1) => 9,
            (0, _) => 5,
            (k, _) => k,
        }
    }
}

/// Per-quadrature-set inputs that do not depend on `t` or `θ`.
#[derive(Debug, Clone)]
pub struct PointCache {
    /// `[ω, η(ω)]`, `D × (d + |η|)`.
    inputs: Array2<f64>,
    /// Low-pass weighted residual basis, `n_res × (D·C)`.
    basis: Array2<f64>,
    points: usize,
}

impl PointCache {
    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }
}

/// First-layer spatial pre-activation and residual basis on one graph.
#[derive(Clone, Copy)]
pub struct SpatialInputs<'g> {
    pre: Tensor<'g>,
    basis: Tensor<'g>,
}

impl<'g> SpatialInputs<'g> {
    /// The same values as constants on another graph.
    pub fn detached_into<'h>(&self, graph: &'h Graph) -> SpatialInputs<'h> {
        SpatialInputs {
            pre: graph.constant((*self.pre.value()).clone()),
            basis: graph.constant((*self.basis.value()).clone()),
        }
    }
}

/// `U_θ(t, ω)` and `M_θ(t)` with their parameters.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    config: ModelConfig,
    store: ParamStore,
    time: TimeEmbedding,
    features: SpatialFeatures,
    time_in: Linear,
    first: NormBlock,
    base: Mlp,
    residual: Mlp,
    mixing: Mlp,
    residual_indices: Vec<FourierIndex>,
}

impl GeneratorModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let time = TimeEmbedding::new(config.time_freqs);
        let features = SpatialFeatures::new(config.dim, config.feature_levels, config.max_freq, rng);
        let residual_indices = residual_indices(config.dim, config.channels, config.effective_bandwidth());

        let mut store = ParamStore::new();
        let (r, c, w) = (config.rank, config.channels, config.width);
        let x_in = config.dim + features.dim();
        let fan_in = time.dim() + x_in;
        let time_in = Linear {
            weight: store.add("u.in.wt", super::mlp::init_uniform(time.dim(), w, fan_in, 1.0, rng)),
            bias: None,
        };
        let first = NormBlock {
            linear: Linear {
                weight: store.add("u.in.w", super::mlp::init_uniform(x_in, w, fan_in, 1.0, rng)),
                bias: Some(store.add("u.in.b", super::mlp::init_uniform(1, w, fan_in, 1.0, rng))),
            },
            gain: store.add("u.in.g", Array2::ones((1, w))),
        };
        let base = Mlp::new(&mut store, "u", w, &vec![w; config.depth - 1], r * c, config.head_scale, rng);
        let residual = Mlp::new(
            &mut store,
            "res",
            time.dim(),
            &config.residual_hidden,
            r * residual_indices.len(),
            config.head_scale,
            rng,
        );
        let mixing = Mlp::new(&mut store, "mix", time.dim(), &config.mix_hidden, r * r, config.head_scale, rng);
        Ok(Self {
            config,
            store,
            time,
            features,
            time_in,
            first,
            base,
            residual,
            mixing,
            residual_indices,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn rank(&self) -> usize {
        self.config.rank
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn time_embedding(&self) -> &TimeEmbedding {
        &self.time
    }

    pub fn residual_indices(&self) -> &[FourierIndex] {
        &self.residual_indices
    }

    /// Zeroes the final layer of the base network.
    pub fn zero_base_head(&mut self) {
        self.base.head.zero(&mut self.store);
    }

    /// Zeroes the final layer of the residual head.
    pub fn zero_residual_head(&mut self) {
        self.residual.head.zero(&mut self.store);
    }

    /// Zeroes the final layer of the mixing network.
    pub fn zero_mixing_head(&mut self) {
        self.mixing.head.zero(&mut self.store);
    }

    /// Sets the residual head to output the constant coefficient vector
    /// `w` (length `r · n_res`, row-major over rank then index).
    pub fn set_residual_bias(&mut self, w: &[f64]) -> Result<()> {
        let b = self.residual.head.bias.expect("residual head has a bias");
        let target = self.store.get_mut(b);
        if target.len() != w.len() {
            return Err(Error::Dimension {
                expected: target.len(),
                got: w.len(),
            });
        }
        target.iter_mut().zip(w).for_each(|(t, v)| *t = *v);
        Ok(())
    }

    pub fn prepare(&self, points: &QuadratureSet) -> Result<PointCache> {
        if points.dim() != self.config.dim {
            return Err(Error::Dimension {
                expected: self.config.dim,
                got: points.dim(),
            });
        }
        let pts = points.points();
        let d = pts.nrows();
        let eta = self.features.eval(pts);
        let mut inputs = Array2::zeros((d, self.config.dim + eta.ncols()));
        inputs.slice_mut(ndarray::s![.., ..self.config.dim]).assign(pts);
        inputs.slice_mut(ndarray::s![.., self.config.dim..]).assign(&eta);

        let c = self.config.channels;
        let mut basis = Array2::zeros((self.residual_indices.len(), d * c));
        for (row, idx) in self.residual_indices.iter().enumerate() {
            let damp = 1.0 / (1.0 + idx.norm2() as f64);
            for (j, p) in pts.rows().into_iter().enumerate() {
                basis[[row, j * c + idx.channel]] = damp * spatial_value(&idx.spatial, p.as_slice().expect("row-major"));
            }
        }
        Ok(PointCache { inputs, basis, points: d })
    }

    pub fn embed<'g>(&self, graph: &'g Graph, t: f64) -> Tensor<'g> {
        graph.constant(self.time.embed(t))
    }

    /// The `t`-independent part of `U_θ` on the cached points, built once per
    /// graph and shared by every time step.
    pub fn spatial<'g>(&self, graph: &'g Graph, p: &BoundParams<'g>, cache: &PointCache) -> Result<SpatialInputs<'g>> {
        let x = graph.constant(cache.inputs.clone());
        Ok(SpatialInputs {
            pre: self.first.linear.forward(p, x)?,
            basis: graph.constant(cache.basis.clone()),
        })
    }

    /// `U_θ(t, ·)` on the cached points, shaped `r × (D·C)`.
    pub fn eval_u<'g>(
        &self,
        graph: &'g Graph,
        p: &BoundParams<'g>,
        gamma: Tensor<'g>,
        cache: &PointCache,
    ) -> Result<Tensor<'g>> {
        let spatial = self.spatial(graph, p, cache)?;
        self.eval_u_at(p, gamma, &spatial)
    }

    /// [`Self::eval_u`] from precomputed spatial inputs.
    pub fn eval_u_at<'g>(&self, p: &BoundParams<'g>, gamma: Tensor<'g>, spatial: &SpatialInputs<'g>) -> Result<Tensor<'g>> {
        let (r, c) = (self.config.rank, self.config.channels);
        let pre = spatial.pre.add(self.time_in.forward(p, gamma)?)?;
        let mut h = self.first.activate(p, pre)?;
        for block in &self.base.hidden {
            h = block.forward(p, h)?;
        }
        let base = self.base.head.forward(p, h)?.regroup(r, c)?;

        let coeffs = self.residual.forward(p, gamma)?.regroup(r, self.residual_indices.len())?;
        let res = coeffs.matmul(spatial.basis)?;
        base.add(res)
    }

    /// Skew part `M_θ(t) − M_θ(t)ᵀ`, shaped `r × r`.
    pub fn eval_m_skew<'g>(&self, p: &BoundParams<'g>, gamma: Tensor<'g>) -> Result<Tensor<'g>> {
        let r = self.config.rank;
        let m = self.mixing.forward(p, gamma)?.regroup(r, r)?;
        m.sub(m.t())
    }
}

/// Every `(k, c)` with `‖k‖_∞ ≤ K − 1`, ordered by `k` then channel.
fn residual_indices(dim: usize, channels: usize, bandwidth: usize) -> Vec<FourierIndex> {
    let m = bandwidth.saturating_sub(1) as i32;
    let side = (2 * m + 1) as usize;
    let mut out = Vec::with_capacity(side.pow(dim as u32) * channels);
    for flat in 0..side.pow(dim as u32) {
        let mut rest = flat;
        let mut k = vec![0; dim];
        for axis in (0..dim).rev() {
            k[axis] = (rest % side) as i32 - m;
            rest /= side;
        }
        for c in 0..channels {
            out.push(FourierIndex::new(k.clone(), c));
        }
    }
    out
}

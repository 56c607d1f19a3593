//! Stratified-with-tail estimator of expectations over the index prior.
//!
//! `Ê[f] = Σ_{i∈S} p(i) f(i) + (1/N) Σ_k f(i_k)·1[i_k ∉ S]` with the exact
//! stratum `S = {i : p(i) ≥ τ}` and `N` i.i.d. prior draws `i_k`. Draws that
//! land in `S` contribute nothing, which keeps the estimator unbiased.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use super::fourier::FourierIndex;
use super::prior::IndexPrior;
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};

/// The indices an estimate needs and the weight each one carries.
///
/// Stratum entries come first, in ranking order, followed by accepted tail
/// draws (repeated draws of one index are merged into a single weight).
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedDraw {
    pub indices: Vec<FourierIndex>,
    pub weights: Vec<f64>,
    pub stratum_len: usize,
    pub tail_draws: usize,
}

impl StratifiedDraw {
    pub fn new<R: Rng + ?Sized>(prior: &IndexPrior, tau: f64, tail_size: usize, rng: &mut R) -> Result<Self> {
        if tail_size == 0 {
            return Err(Error::Config("tail size must be at least 1".into()));
        }
        let stratum_len = prior.stratum_len(tau)?;
        let mut tail: BTreeMap<usize, usize> = BTreeMap::new();
        for _ in 0..tail_size {
            let e = prior.sample_entry(rng);
            if e >= stratum_len {
                *tail.entry(e).or_default() += 1;
            }
        }
        let mut indices = Vec::with_capacity(stratum_len + tail.len());
        let mut weights = Vec::with_capacity(stratum_len + tail.len());
        for e in 0..stratum_len {
            indices.push(prior.index_at(e));
            weights.push(prior.weight_at(e));
        }
        for (e, count) in tail {
            indices.push(prior.index_at(e));
            weights.push(count as f64 / tail_size as f64);
        }
        Ok(Self {
            indices,
            weights,
            stratum_len,
            tail_draws: tail_size,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Total weight carried by the stratum.
    pub fn stratum_mass(&self) -> f64 {
        self.weights[..self.stratum_len].iter().sum()
    }

    /// Weighted sum `Σ_k w_k v_k` of per-index values, `values` shaped
    /// `n × 1`.
    pub fn combine<'g>(&self, graph: &'g Graph, values: Tensor<'g>) -> Result<Tensor<'g>> {
        if values.shape() != (self.len(), 1) {
            return Err(Error::ShapeMismatch {
                op: "stratified-combine",
                lhs: values.shape(),
                rhs: (self.len(), 1),
            });
        }
        let w = graph.constant(Array2::from_shape_vec((1, self.len()), self.weights.clone()).expect("length"));
        w.matmul(values)
    }
}

/// Stratified-with-tail estimate of `E_p[f]` for a scalar integrand.
pub fn stratified_expectation<R: Rng + ?Sized>(
    prior: &IndexPrior,
    tau: f64,
    tail_size: usize,
    mut f: impl FnMut(&FourierIndex) -> f64,
    rng: &mut R,
) -> Result<f64> {
    let draw = StratifiedDraw::new(prior, tau, tail_size, rng)?;
    Ok(draw.indices.iter().zip(&draw.weights).map(|(i, w)| w * f(i)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_integrand() {
        let p = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draw = StratifiedDraw::new(&p, 1e-3, 16, &mut rng).unwrap();
        let outside: f64 = draw.weights[draw.stratum_len..].iter().sum();
        let est: f64 = draw.weights.iter().sum();
        assert!((est - (draw.stratum_mass() + outside)).abs() < 1e-15);
        assert!((est - 1.0).abs() < 0.1);
    }

    #[test]
    fn stratum_matches_threshold() {
        let p = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        let draw = StratifiedDraw::new(&p, 1e-3, 16, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (i, idx) in draw.indices[..draw.stratum_len].iter().enumerate() {
            assert!(p.probability(idx).unwrap() >= 1e-3, "{i}");
        }
        let k = draw.indices[..draw.stratum_len].iter().map(|i| i.spatial[0].abs()).max().unwrap();
        assert!(p.probability(&FourierIndex::scalar(vec![k + 1])).unwrap() < 1e-3);
    }

    #[test]
    fn weighted_combination() {
        let p = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        let draw = StratifiedDraw::new(&p, 1e-2, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let g = Graph::new();
        let ones = g.constant(Array2::ones((draw.len(), 1)));
        let total = draw.combine(&g, ones).unwrap().item();
        assert!((total - draw.weights.iter().sum::<f64>()).abs() < 1e-15);
        assert!(draw.combine(&g, g.constant(Array2::ones((1, 1)))).is_err());
    }

    #[test]
    fn rejects_bad_threshold() {
        let p = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(stratified_expectation(&p, 0.0, 8, |_| 1.0, &mut rng).is_err());
    }
}

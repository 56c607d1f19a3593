use ndarray::Array2;

use super::flowmap::FlowMap;
use super::kernel::KernelOperator;
use crate::autodiff::{BoundParams, Graph, Tensor};
use crate::error::{Error, Result};
use crate::fields::{GeneratorModel, PointCache};
use crate::flow::{apply_q, Method, TimeGrid};
use crate::space::{eval_fourier_rows, FourierIndex, QuadratureSet, StratifiedDraw};

/// Everything one objective evaluation shares: the points, their cached
/// features, the time grid and the integrator.
#[derive(Debug, Clone, Copy)]
pub struct FlowContext<'a> {
    pub points: &'a QuadratureSet,
    pub cache: &'a PointCache,
    pub grid: &'a TimeGrid,
    pub method: Method,
}

/// `Q_θ φ_i` for every index of the draw, `n × (D·C)`.
pub fn evolve_draw<'g>(
    model: &GeneratorModel,
    graph: &'g Graph,
    params: &BoundParams<'g>,
    draw: &StratifiedDraw,
    ctx: FlowContext<'_>,
) -> Result<Tensor<'g>> {
    apply_q(model, graph, params, &draw.indices, ctx.points, ctx.cache, ctx.grid, ctx.method)
}

/// The two halves of the non-centered PCA objective.
#[derive(Debug, Clone, Copy)]
pub struct PcaTerms<'g> {
    /// Explained variance `Ê_i ⟨X − sg(ν), Q φ_i⟩²`, to maximize.
    pub explained: Tensor<'g>,
    /// Mean fit `‖ν − X‖²`, to minimize.
    pub mean_error: Tensor<'g>,
}

/// PCA terms for one data function `x` (`1 × (D·C)`) given the evolved
/// basis rows and the mean field row.
pub fn pca_terms<'g>(
    evolved: Tensor<'g>,
    draw: &StratifiedDraw,
    x: Tensor<'g>,
    mean: Tensor<'g>,
    num_points: usize,
) -> Result<PcaTerms<'g>> {
    if x.shape() != mean.shape() || x.shape().1 != evolved.shape().1 {
        return Err(Error::ShapeMismatch {
            op: "pca",
            lhs: evolved.shape(),
            rhs: x.shape(),
        });
    }
    let inv_d = 1.0 / num_points as f64;
    let centered = x.sub(mean.detach())?;
    let proj = evolved.matmul(centered.t())?.scale(inv_d);
    let explained = draw.combine(evolved.graph(), proj.square())?;
    let mean_error = mean.sub(x)?.square().sum().scale(inv_d);
    Ok(PcaTerms { explained, mean_error })
}

/// `Ê_i ‖(1/D) Σ_j (Qφ_i)(ω_j) ∇_ξ MLP(ω_j)‖²` from per-point parameter
/// gradients `D × P`. Single channel only.
pub fn ntk_objective<'g>(evolved: Tensor<'g>, draw: &StratifiedDraw, grads: &Array2<f64>) -> Result<Tensor<'g>> {
    let d = grads.nrows();
    if evolved.shape().1 != d {
        return Err(Error::Dimension {
            expected: d,
            got: evolved.shape().1,
        });
    }
    let graph = evolved.graph();
    let v = evolved.matmul(graph.constant(grads.clone()))?.scale(1.0 / d as f64);
    draw.combine(graph, v.square().sum_axis(1))
}

/// `Ê_i ⟨Qφ_i, A Qφ_i⟩`.
pub fn quadratic_objective<'g>(
    evolved: Tensor<'g>,
    draw: &StratifiedDraw,
    op: &KernelOperator,
    points: &QuadratureSet,
) -> Result<Tensor<'g>> {
    let form = op.quadratic_form(evolved, points)?;
    draw.combine(evolved.graph(), form)
}

/// Reference elements composed with the flow, `φ_i ∘ Ψ`, as rows.
pub fn koopman_targets(
    indices: &[FourierIndex],
    points: &QuadratureSet,
    flow: &dyn FlowMap,
    channels: usize,
) -> Result<Array2<f64>> {
    let moved = flow.apply(points)?;
    eval_fourier_rows(indices, &moved, channels)
}

/// `Ê_i (1/D) Σ_{j,c} (Qφ_i − φ_i∘Ψ)²`.
pub fn koopman_objective<'g>(evolved: Tensor<'g>, draw: &StratifiedDraw, targets: &Array2<f64>) -> Result<Tensor<'g>> {
    let graph = evolved.graph();
    let d = evolved.shape().1;
    let diff = evolved.sub(graph.constant(targets.clone()))?;
    draw.combine(graph, diff.square().sum_axis(1).scale(1.0 / d as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{MeanField, MeanFieldConfig, ModelConfig};
    use crate::objectives::flowmap::{IdentityMap, Translation};
    use crate::objectives::kernel::{FrozenNetwork, LinearNetwork};
    use crate::space::IndexPrior;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(rank: usize, head: f64) -> GeneratorModel {
        let cfg = ModelConfig {
            rank,
            width: 16,
            depth: 2,
            time_freqs: 8,
            feature_levels: 4,
            max_freq: 8.0,
            residual_hidden: vec![8],
            mix_hidden: vec![8],
            bandwidth: 3,
            head_scale: head,
            ..ModelConfig::default()
        };
        GeneratorModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn identity_model() -> GeneratorModel {
        let mut m = tiny(4, 1.0);
        m.zero_base_head();
        m.zero_residual_head();
        m
    }

    fn draw(tau: f64, seed: u64) -> StratifiedDraw {
        let prior = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        StratifiedDraw::new(&prior, tau, 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn centered_data_explains_nothing() {
        let model = tiny(3, 1.0);
        let q = QuadratureSet::midpoint_grid(1, 32);
        let cache = model.prepare(&q).unwrap();
        let grid = TimeGrid::uniform(3);
        let ctx = FlowContext { points: &q, cache: &cache, grid: &grid, method: Method::Cayley };
        let dr = draw(1e-2, 0);
        let g = Graph::new();
        let p = model.params().bind(&g);
        let evolved = evolve_draw(&model, &g, &p, &dr, ctx).unwrap();
        let x = g.constant(Array2::from_shape_fn((1, 32), |(_, j)| (j as f64).cos()));
        let terms = pca_terms(evolved, &dr, x, x, 32).unwrap();
        assert_eq!(terms.explained.item(), 0.0);
        assert_eq!(terms.mean_error.item(), 0.0);
    }

    #[test]
    fn basis_element_projects_onto_itself() {
        let model = identity_model();
        let q = QuadratureSet::midpoint_grid(1, 64);
        let cache = model.prepare(&q).unwrap();
        let grid = TimeGrid::uniform(4);
        let ctx = FlowContext { points: &q, cache: &cache, grid: &grid, method: Method::Cayley };
        let prior = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        let dr = StratifiedDraw::new(&prior, 1e-3, 16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let g = Graph::new();
        let p = model.params().bind(&g);
        let evolved = evolve_draw(&model, &g, &p, &dr, ctx).unwrap();
        let x = g.constant(eval_fourier_rows(&[FourierIndex::scalar(vec![1])], &q, 1).unwrap());
        let zero = g.constant(Array2::zeros((1, 64)));
        let j = pca_terms(evolved, &dr, x, zero, 64).unwrap().explained.item();
        let p1 = prior.probability(&FourierIndex::scalar(vec![1])).unwrap();
        assert!((j - p1).abs() < 1e-12, "{j} vs {p1}");
    }

    #[test]
    fn pca_gradients_are_decoupled() {
        let model = tiny(3, 1.0);
        let nu = MeanField::new(1, 1, &MeanFieldConfig { features: 4, sigma: 2.0, hidden: vec![8] }, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let q = QuadratureSet::midpoint_grid(1, 16);
        let cache = model.prepare(&q).unwrap();
        let grid = TimeGrid::uniform(2);
        let ctx = FlowContext { points: &q, cache: &cache, grid: &grid, method: Method::Cayley };
        let dr = draw(1e-2, 1);
        let x = Array2::from_shape_fn((1, 16), |(_, j)| (j as f64 * 0.4).sin() + 0.3);

        let g = Graph::new();
        let p = model.params().bind(&g);
        let pn = nu.params().bind(&g);
        let evolved = evolve_draw(&model, &g, &p, &dr, ctx).unwrap();
        let mean = nu.eval_row(&g, &pn, &q).unwrap();
        let terms = pca_terms(evolved, &dr, g.constant(x.clone()), mean, 16).unwrap();

        let gj = g.backward(terms.explained).unwrap();
        assert!(pn.grads(&gj).iter().all(|a| a.iter().all(|&v| v == 0.0)));
        assert!(p.grads(&gj).iter().any(|a| a.iter().any(|&v| v != 0.0)));
        let gm = g.backward(terms.mean_error).unwrap();
        assert!(p.grads(&gm).iter().all(|a| a.iter().all(|&v| v == 0.0)));
        assert!(pn.grads(&gm).iter().any(|a| a.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn linear_network_ntk_matches_quadrature() {
        // (∫ x f)² with f = x/‖x‖ reaches its maximum ∫ x² = 1/3
        let q = QuadratureSet::stratified(1, 4096, &mut ChaCha8Rng::seed_from_u64(5));
        let net = LinearNetwork { weights: vec![1.3] };
        let grads = net.param_gradients(q.points());
        let f = Array2::from_shape_fn((1, 4096), |(_, j)| q.points()[[j, 0]] * 3f64.sqrt());
        let single = StratifiedDraw {
            indices: vec![FourierIndex::scalar(vec![0])],
            weights: vec![1.0],
            stratum_len: 1,
            tail_draws: 1,
        };
        let g = Graph::new();
        let v = ntk_objective(g.constant(f), &single, &grads).unwrap().item();
        assert!((v - 1.0 / 3.0).abs() < 0.02 / 3.0, "{v}");

        // a sine element: (∫ x √2 sin 2πx)² = 1/(2π²)
        let s = eval_fourier_rows(&[FourierIndex::scalar(vec![-1])], &q, 1).unwrap();
        let v = ntk_objective(g.constant(s), &single, &grads).unwrap().item();
        let exact = 1.0 / (2.0 * std::f64::consts::PI.powi(2));
        assert!((v - exact).abs() < 0.02 * exact, "{v} vs {exact}");
    }

    #[test]
    fn ntk_equals_kernel_double_sum() {
        let q = QuadratureSet::stratified(1, 1024, &mut ChaCha8Rng::seed_from_u64(6));
        let net = std::sync::Arc::new(LinearNetwork { weights: vec![0.4] });
        let grads = net.param_gradients(q.points());
        let dr = draw(1e-2, 2);
        let g = Graph::new();
        let f = g.constant(eval_fourier_rows(&dr.indices, &q, 1).unwrap());
        let a = ntk_objective(f, &dr, &grads).unwrap().item();
        let kx = KernelOperator::kernel(|x, y| x[0] * y[0]);
        let b = quadratic_objective(f, &dr, &kx, &q).unwrap().item();
        assert!((a - b).abs() < 1e-6, "{a} {b}");
    }

    #[test]
    fn koopman_identity_and_bounds() {
        let model = identity_model();
        let q = QuadratureSet::midpoint_grid(1, 64);
        let cache = model.prepare(&q).unwrap();
        let grid = TimeGrid::uniform(3);
        let ctx = FlowContext { points: &q, cache: &cache, grid: &grid, method: Method::Cayley };
        let dr = draw(1e-3, 4);
        let g = Graph::new();
        let p = model.params().bind(&g);
        let evolved = evolve_draw(&model, &g, &p, &dr, ctx).unwrap();
        let t_id = koopman_targets(&dr.indices, &q, &IdentityMap { dim: 1 }, 1).unwrap();
        assert!(koopman_objective(evolved, &dr, &t_id).unwrap().item().abs() < 1e-24);

        // a quarter-turn shift maps cos to −sin: squared distance 2 for |k| = 1
        let t_sh = koopman_targets(&dr.indices, &q, &Translation { shift: vec![0.25] }, 1).unwrap();
        let loss = koopman_objective(evolved, &dr, &t_sh).unwrap().item();
        assert!(loss >= 0.0);
    }

    #[test]
    fn koopman_loss_is_nonnegative_for_random_models() {
        let model = tiny(4, 1.0);
        let q = QuadratureSet::stratified(1, 32, &mut ChaCha8Rng::seed_from_u64(7));
        let cache = model.prepare(&q).unwrap();
        let grid = TimeGrid::uniform(3);
        let ctx = FlowContext { points: &q, cache: &cache, grid: &grid, method: Method::Cayley };
        let dr = draw(1e-2, 5);
        let g = Graph::new();
        let p = model.params().bind_frozen(&g);
        let evolved = evolve_draw(&model, &g, &p, &dr, ctx).unwrap();
        let tgt = koopman_targets(&dr.indices, &q, &Translation { shift: vec![0.1] }, 1).unwrap();
        let per_row = evolved.sub(g.constant(tgt.clone())).unwrap().square().sum_axis(1).scale(1.0 / 32.0).value();
        // lower bound from norm preservation
        let src = eval_fourier_rows(&dr.indices, &q, 1).unwrap();
        for i in 0..dr.len() {
            let n0 = (src.row(i).dot(&src.row(i)) / 32.0).sqrt();
            let nt = (tgt.row(i).dot(&tgt.row(i)) / 32.0).sqrt();
            assert!(per_row[[i, 0]] >= (n0 - nt).powi(2) - 1e-9);
        }
        assert!(koopman_objective(evolved, &dr, &tgt).unwrap().item() >= 0.0);
    }
}

use nalgebra::DMatrix;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::check::probe_gradients;
use crate::autodiff::ParamId;
use crate::fields::ModelConfig;

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn skew(r: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let m = random(r, r, rng);
    &m - &m.t()
}

fn step_value(method: Method, u: &Array2<f64>, s: &Array2<f64>, phi: &Array2<f64>) -> Result<Array2<f64>> {
    let g = Graph::new();
    let d = u.ncols();
    let out = flow_step(method, g.constant(u.clone()), g.constant(s.clone()), g.constant(phi.clone()), d, 0)?;
    Ok((*out.value()).clone())
}

fn gram(phi: &Array2<f64>) -> Array2<f64> {
    phi.dot(&phi.t()) / phi.ncols() as f64
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `exp(A)` by scaling and squaring a truncated Taylor series.
fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a.abs().column_sum().max();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = a / 2f64.powi(squarings as i32);
    let n = a.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn small_model(seed: u64, head_scale: f64) -> GeneratorModel {
    let cfg = ModelConfig {
        dim: 1,
        channels: 1,
        rank: 3,
        width: 16,
        depth: 2,
        time_freqs: 8,
        feature_levels: 4,
        max_freq: 8.0,
        residual_hidden: vec![8],
        mix_hidden: vec![8],
        bandwidth: 3,
        head_scale,
    };
    GeneratorModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("rk4".parse::<Method>().is_err());
}

#[test]
fn zero_generator_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let phi = random(3, 20, &mut rng);
    let s = skew(4, &mut rng);
    for m in Method::ALL {
        assert_eq!(step_value(m, &Array2::zeros((4, 20)), &s, &phi).unwrap(), phi);
    }
}

#[test]
fn woodbury_step_matches_dense_cayley() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for d in [8, 32, 64] {
        let u = random(2, d, &mut rng);
        let s = skew(2, &mut rng);
        let k = to_na(&u).transpose() * to_na(&s) * to_na(&u) / d as f64;
        let id = DMatrix::<f64>::identity(d, d);
        let dense = (&id - &k * 0.5).lu().solve(&(&id + &k * 0.5)).unwrap();
        // one-hot rows: the output rows are the columns of the dense map
        let out = step_value(Method::Cayley, &u, &s, &Array2::eye(d)).unwrap();
        let err = (to_na(&out) - dense.transpose()).norm();
        assert!(err < 1e-10, "D={d}: {err}");
    }
}

#[test]
fn euler_norm_factors() {
    let d = 64;
    let q = crate::space::QuadratureSet::midpoint_grid(1, d);
    let idx = [FourierIndex::scalar(vec![1]), FourierIndex::scalar(vec![-1])];
    let u = eval_fourier_rows(&idx, &q, 1).unwrap();
    let sigma = 0.8;
    let s = array![[0.0, sigma], [-sigma, 0.0]];
    let steps = 10;
    let dt = 1.0 / steps as f64;
    let factor = (1.0 + (dt * sigma).powi(2)).sqrt();
    let g = Graph::new();
    let mut fwd = g.constant(u.slice(ndarray::s![0..1, ..]).to_owned());
    let mut bwd = fwd;
    let norm = |t: Tensor<'_>| gram(&t.value())[[0, 0]].sqrt();
    for l in 0..steps {
        let uh = g.constant(&u * dt.sqrt());
        let sc = g.constant(s.clone());
        let (nf, nb) = (norm(fwd), norm(bwd));
        fwd = flow_step(Method::EulerForward, uh, sc, fwd, d, l).unwrap();
        bwd = flow_step(Method::EulerBackward, uh, sc, bwd, d, l).unwrap();
        assert!((norm(fwd) / nf - factor).abs() < 1e-10);
        assert!((norm(bwd) / nb - 1.0 / factor).abs() < 1e-10);
    }
}

#[test]
fn cayley_converges_at_second_order() {
    let d = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = random(4, d, &mut rng);
    let s = skew(4, &mut rng);
    let k = to_na(&u).transpose() * to_na(&s) * to_na(&u) / d as f64;
    let exact = expm(&k).transpose();
    let err = |steps: usize| {
        let g = Graph::new();
        let grid = TimeGrid::uniform(steps);
        let phi0 = g.constant(Array2::eye(d));
        let out = integrate_with(&grid, phi0, Method::Cayley, d, |_, _| {
            Ok((g.constant(u.clone()), g.constant(s.clone())))
        })
        .unwrap();
        (to_na(&out.value()) - &exact).norm()
    };
    let (e20, e40) = (err(20), err(40));
    assert!(e20 >= 3.5 * e40, "L=20: {e20}, L=40: {e40}");
}

#[test]
fn singular_solve_reports_step() {
    let g = Graph::new();
    let d = 4;
    let u = g.constant(Array2::from_shape_fn((2, d), |(i, j)| if i == 0 { 1.0 } else { (j as f64 - 1.5) * 0.0 }));
    // not skew, so I − ½GS can be singular
    let s = g.constant(array![[2.0, 0.0], [0.0, 0.0]]);
    let phi = g.constant(Array2::ones((1, d)));
    let err = flow_step(Method::Cayley, u, s, phi, d, 3).unwrap_err();
    assert!(matches!(err, Error::Integration { step: 3, .. }), "{err}");
}

#[test]
fn euler_inflates_and_deflates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let u = random(3, 16, &mut rng);
        let s = skew(3, &mut rng);
        let phi = random(1, 16, &mut rng);
        let n0 = gram(&phi)[[0, 0]];
        let nf = gram(&step_value(Method::EulerForward, &u, &s, &phi).unwrap())[[0, 0]];
        let nb = gram(&step_value(Method::EulerBackward, &u, &s, &phi).unwrap())[[0, 0]];
        assert!(nf > n0 && nb < n0, "{nf} {n0} {nb}");
    }
}

#[test]
fn gradient_through_five_cayley_steps() {
    let mut model = small_model(5, 1.0);
    let q = QuadratureSet::stratified(1, 16, &mut ChaCha8Rng::seed_from_u64(6));
    let cache = model.prepare(&q).unwrap();
    let idx: Vec<FourierIndex> = (-2..=2).map(|i| FourierIndex::scalar(vec![i])).collect();
    let target = random(5, 16, &mut ChaCha8Rng::seed_from_u64(7));
    let grid = TimeGrid::random(5, &mut ChaCha8Rng::seed_from_u64(8));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let entries: Vec<(ParamId, usize, usize)> = (0..30)
        .map(|_| {
            let id = ParamId(rng.random_range(0..model.params().len()));
            let (r, c) = model.params().get(id).dim();
            (id, rng.random_range(0..r), rng.random_range(0..c))
        })
        .collect();
    let m2 = model.clone();
    let probes = probe_gradients(model.params_mut(), &entries, 1e-6, |g, p| {
        let out = apply_q(&m2, g, p, &idx, &q, &cache, &grid, Method::Cayley)?;
        Ok(out.mul(g.constant(target.clone()))?.sum())
    })
    .unwrap();
    for pr in probes {
        assert!(pr.relative_error(1e-7) < 1e-3, "{pr:?}");
    }
}

#[test]
fn batched_matches_single() {
    let model = small_model(1, 1.0);
    let q = QuadratureSet::stratified(1, 32, &mut ChaCha8Rng::seed_from_u64(1));
    let grid = TimeGrid::uniform(6);
    let idx = [FourierIndex::scalar(vec![3]), FourierIndex::scalar(vec![-1])];
    let both = apply_q_frozen(&model, &idx, &q, &grid, Method::Cayley).unwrap();
    for (row, i) in idx.iter().enumerate() {
        let one = apply_q_frozen(&model, std::slice::from_ref(i), &q, &grid, Method::Cayley).unwrap();
        assert_eq!(one.row(0), both.row(row));
    }
}

#[test]
fn taped_and_frozen_paths_agree() {
    let model = small_model(2, 1.0);
    let q = QuadratureSet::stratified(1, 24, &mut ChaCha8Rng::seed_from_u64(3));
    let grid = TimeGrid::uniform(4);
    let idx = [FourierIndex::scalar(vec![2])];
    let frozen = apply_q_frozen(&model, &idx, &q, &grid, Method::Cayley).unwrap();
    let g = Graph::new();
    let p = model.params().bind(&g);
    let cache = model.prepare(&q).unwrap();
    let taped = apply_q(&model, &g, &p, &idx, &q, &cache, &grid, Method::Cayley).unwrap();
    assert_eq!(*taped.value(), frozen);
}

#[test]
fn default_model_starts_near_identity_and_stays_orthonormal() {
    let model = GeneratorModel::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let q = QuadratureSet::stratified(1, 4096, &mut ChaCha8Rng::seed_from_u64(1));
    let grid = TimeGrid::uniform(8);
    let idx: Vec<FourierIndex> = [0, 1, -1, 2, -2, 3, -3, 4].iter().map(|&i| FourierIndex::scalar(vec![i])).collect();
    let out = apply_q_frozen(&model, &idx, &q, &grid, Method::Cayley).unwrap();
    let reference = eval_fourier_rows(&idx, &q, 1).unwrap();
    assert!(max_abs(&(&out - &reference)) < 1e-2);
    assert!(max_abs(&(gram(&out) - Array2::<f64>::eye(8))) < 0.05);
    // exact preservation of the discrete Gram matrix
    assert!(max_abs(&(gram(&out) - gram(&reference))) < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cayley_preserves_discrete_inner_products(seed in any::<u64>(), r in 1usize..6, d in 4usize..40, scale in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random(r, d, &mut rng) * scale;
        let s = skew(r, &mut rng) * scale;
        let phi = random(3, d, &mut rng);
        let out = step_value(Method::Cayley, &u, &s, &phi).unwrap();
        let bound = gram(&phi).diag().iter().fold(0.0f64, |m, v| m.max(*v));
        prop_assert!(max_abs(&(gram(&out) - gram(&phi))) <= 1e-8 * bound);
    }

    #[test]
    fn low_rank_step_matches_dense(seed in any::<u64>(), r in 1usize..5, d in 2usize..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random(r, d, &mut rng);
        let s = skew(r, &mut rng);
        let k = to_na(&u).transpose() * to_na(&s) * to_na(&u) / d as f64;
        let id = DMatrix::<f64>::identity(d, d);
        let dense = (&id - &k * 0.5).lu().solve(&(&id + &k * 0.5)).unwrap();
        let out = step_value(Method::Cayley, &u, &s, &Array2::eye(d)).unwrap();
        prop_assert!((to_na(&out) - dense.transpose()).norm() < 1e-10);
    }
}

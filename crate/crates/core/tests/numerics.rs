mod common;

use common::{gradient_error, jacobi_eigen, random_connected_graph, random_matrix, seeded};
use fedni::graphcons::normalize_adjacency;
use fedni::numerics::{
    gcn_layer_forward, spectral_normalize, Activation, Bind, GraphConv, Matrix, Module,
    ParamTensor, Tape,
};
use proptest::prelude::*;

struct Single(GraphConv);

impl Module for Single {
    fn state(&self) -> Vec<(String, &Matrix)> {
        vec![("w".into(), &self.0.weight.value)]
    }
    fn state_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![("w".into(), &mut self.0.weight.value)]
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.0.weight]
    }
}

#[test]
fn gcn_layer_sum_gradient_matches_differences() {
    let mut rng = seeded(11);
    let a = normalize_adjacency(&random_connected_graph(6, 4, &mut rng));
    let z = random_matrix(6, 3, &mut rng);
    for act in [Activation::Identity, Activation::Elu, Activation::Tanh] {
        let mut layer = Single(GraphConv::new(3, 2, act, &mut rng));
        let err = gradient_error(
            &mut layer,
            &mut |m, t| {
                let zv = t.constant(z.clone());
                let av = t.constant(a.clone());
                let out = m.0.forward(t, zv, av, Bind::Train);
                t.sum(out)
            },
            usize::MAX,
            &mut rng,
        );
        assert!(err < 1.0, "{act:?}: {err}");
    }
}

#[test]
fn gcn_layer_matches_explicit_product() {
    let mut rng = seeded(12);
    let a = normalize_adjacency(&random_connected_graph(6, 3, &mut rng));
    let z = random_matrix(6, 3, &mut rng);
    let w = ParamTensor::new(random_matrix(3, 2, &mut rng));
    let out = gcn_layer_forward(&z, &a, &w, Activation::Relu).unwrap();
    for i in 0..6 {
        for c in 0..2 {
            let mut v = 0.0;
            for j in 0..6 {
                for k in 0..3 {
                    v += a.get(i, j) * z.get(j, k) * w.value.get(k, c);
                }
            }
            assert!((out.get(i, c) - v.max(0.0)).abs() < 1e-12);
        }
    }
}

/// Largest singular value as the root of the top eigenvalue of `Wᵀ W`.
fn top_singular(w: &Matrix) -> f64 {
    jacobi_eigen(&w.t_matmul(w)).0[0].max(0.0).sqrt()
}

#[test]
fn spectral_norm_of_random_five_by_four() {
    let mut rng = seeded(13);
    for _ in 0..20 {
        let w = random_matrix(5, 4, &mut rng);
        let mut u = vec![1.0, 0.5, -0.25, 0.125];
        let sn = spectral_normalize(&w, &mut u, 30);
        let s = top_singular(&sn.normalized);
        assert!((0.999..=1.001).contains(&s), "{s}");
    }
}

#[test]
fn spectral_norm_of_diagonal_matches_svd() {
    let w = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]);
    let mut u = vec![0.6, 0.8];
    let sn = spectral_normalize(&w, &mut u, 20);
    let want = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0 / 3.0]]);
    assert!(sn.normalized.max_abs_diff(&want) < 1e-3);
}

#[test]
fn sqrt_and_division_by_scalar_gradients() {
    let mut rng = seeded(14);
    struct P(ParamTensor, ParamTensor);
    impl Module for P {
        fn state(&self) -> Vec<(String, &Matrix)> {
            vec![("x".into(), &self.0.value), ("s".into(), &self.1.value)]
        }
        fn state_mut(&mut self) -> Vec<(String, &mut Matrix)> {
            vec![
                ("x".into(), &mut self.0.value),
                ("s".into(), &mut self.1.value),
            ]
        }
        fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
            vec![&mut self.0, &mut self.1]
        }
    }
    let mut p = P(
        ParamTensor::new(random_matrix(3, 4, &mut rng)),
        ParamTensor::new(Matrix::from_rows(&[vec![1.7]])),
    );
    let weights = random_matrix(3, 4, &mut rng);
    let err = gradient_error(
        &mut p,
        &mut |m, t| {
            let x = t.param(&m.0);
            let s = t.param(&m.1);
            let sq = t.square(x);
            let n = t.sum(sq);
            let norm = t.sqrt(n);
            let scaled = t.div_scalar(x, norm);
            let by_s = t.div_scalar(scaled, s);
            let c = t.constant(weights.clone());
            let prod = t.mul(by_s, c);
            t.sum(prod)
        },
        usize::MAX,
        &mut rng,
    );
    assert!(err < 1.0, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectral_norm_scale_invariant(seed in 0u64..1000, scale in 0.1f64..50.0) {
        let mut rng = seeded(seed);
        let w = random_matrix(4, 3, &mut rng);
        let mut u1 = vec![1.0, 0.0, 0.0];
        let mut u2 = u1.clone();
        let a = spectral_normalize(&w, &mut u1, 50);
        let b = spectral_normalize(&w.scale(scale), &mut u2, 50);
        prop_assert!(a.normalized.max_abs_diff(&b.normalized) < 1e-9);
    }

    #[test]
    fn tape_matmul_agrees_with_matrix(seed in 0u64..1000) {
        let mut rng = seeded(seed);
        let a = random_matrix(3, 5, &mut rng);
        let b = random_matrix(5, 2, &mut rng);
        let mut t = Tape::new();
        let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
        let p = t.matmul(av, bv);
        prop_assert!(t.value(p).max_abs_diff(&a.matmul(&b)) < 1e-12);
    }
}

use airknow::numkit::{
    backward_batch, cosine_sim, forward_batch, grad_check, mlp_backward, mlp_forward, normalize,
    Activation, DenseMatrix, Layer, MlpParams, Optimizer, OptimizerKind, RngState,
};
use airknow::Error;
use proptest::prelude::*;
use rand::Rng;

fn random_net(dims: &[usize], dropout: f64, seed: u64) -> MlpParams {
    let n = dims.len() - 1;
    let mut acts = vec![Activation::Relu; n];
    acts[n - 1] = Activation::Identity;
    let mut rates = vec![dropout; n];
    rates[n - 1] = 0.0;
    MlpParams::init(dims, &acts, &rates, RngState::new(seed, 0)).unwrap()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let v = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    DenseMatrix::from_vec(rows, cols, v).unwrap()
}

#[test]
fn forward_is_bitwise_deterministic() {
    let net = random_net(&[6, 5, 4, 1], 0.3, 3);
    let mut g = RngState::new(9, 1).generator();
    for trial in 0..1000u64 {
        let x: Vec<f64> = (0..6).map(|_| g.random_range(-2.0..2.0)).collect();
        let rng = RngState::new(trial, 7);
        let (a, _) = mlp_forward(&net, &x, true, rng).unwrap();
        let (b, _) = mlp_forward(&net, &x, true, rng).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }
}

#[test]
fn zero_rate_dropout_equals_disabled_path() {
    let net = random_net(&[8, 6, 3], 0.0, 4);
    let x = random_matrix(5, 8, &mut RngState::new(1, 1).generator());
    let (on, _) = forward_batch(&net, &x, true, RngState::new(2, 2)).unwrap();
    let (off, _) = forward_batch(&net, &x, false, RngState::new(3, 3)).unwrap();
    assert_eq!(on, off);
}

#[test]
fn non_finite_input_is_domain_error() {
    let net = random_net(&[2, 2, 1], 0.0, 1);
    let r = mlp_forward(&net, &[f64::NAN, 0.0], false, RngState::new(0, 0));
    assert!(matches!(r, Err(Error::Domain(_))));
    let r = mlp_forward(&net, &[1.0, 2.0, 3.0], false, RngState::new(0, 0));
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn small_net_backward_matches_finite_differences_on_twenty_instances() {
    for seed in 0..20u64 {
        let base = random_net(&[4, 3, 1], 0.0, seed);
        let x = random_matrix(3, 4, &mut RngState::new(seed, 5).generator());
        let f = |flat: &[f64]| {
            let mut net = base.clone();
            net.set_flat(flat)?;
            let (y, cache) = forward_batch(&net, &x, false, RngState::new(0, 0))?;
            let loss: f64 = y.values().iter().map(|v| 0.5 * v * v).sum();
            let (g, _) = backward_batch(&net, &cache, &y)?;
            Ok((loss, g.to_flat()))
        };
        let err = grad_check(f, &base.to_flat(), 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn input_gradient_matches_finite_differences_on_a_fixed_dropout_path() {
    let net = random_net(&[5, 7, 2], 0.4, 11);
    let rng = RngState::new(4, 4);
    let w = [0.7, -1.3];
    let f = |x: &[f64]| {
        let (y, cache) = mlp_forward(&net, x, true, rng)?;
        let (_, dx) = mlp_backward(&net, &cache, &w)?;
        Ok((y[0] * w[0] + y[1] * w[1], dx))
    };
    let err = grad_check(f, &[0.3, -0.2, 0.9, 0.1, -0.6], 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn sigmoid_layer_gradients() {
    let layer = |w: DenseMatrix, act| Layer {
        bias: vec![0.1; w.rows()],
        weight: w,
        activation: act,
        dropout: 0.0,
    };
    let mut g = RngState::new(8, 8).generator();
    let net = MlpParams::new(
        vec![
            layer(random_matrix(4, 3, &mut g), Activation::Relu),
            layer(random_matrix(1, 4, &mut g), Activation::Sigmoid),
        ],
        0.0,
    )
    .unwrap();
    let x = random_matrix(2, 3, &mut g);
    let f = |flat: &[f64]| {
        let mut n = net.clone();
        n.set_flat(flat)?;
        let (y, cache) = forward_batch(&n, &x, false, RngState::new(0, 0))?;
        let (g, _) = backward_batch(&n, &cache, &DenseMatrix::from_vec(2, 1, vec![1.0, 1.0])?)?;
        Ok((y.values().iter().sum(), g.to_flat()))
    };
    assert!(grad_check(f, &net.to_flat(), 1e-5).unwrap() < 1e-4);
}

#[test]
fn sgd_step_moves_against_the_gradient() {
    let mut net = random_net(&[2, 1], 0.0, 2);
    let before = net.to_flat();
    let (_, cache) = mlp_forward(&net, &[1.0, 2.0], false, RngState::new(0, 0)).unwrap();
    let (g, _) = mlp_backward(&net, &cache, &[1.0]).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
    opt.step(&mut net, &g);
    let after = net.to_flat();
    let expected: Vec<f64> = before
        .iter()
        .zip(g.to_flat())
        .map(|(p, d)| p - 0.1 * d)
        .collect();
    for (a, e) in after.iter().zip(expected) {
        assert!((a - e).abs() < 1e-15);
    }
}

#[test]
fn rng_streams_are_reproducible_and_distinct() {
    let draw = |s: RngState| -> Vec<u64> {
        let mut g = s.generator();
        (0..8).map(|_| g.random()).collect()
    };
    let a = RngState::new(42, 3);
    assert_eq!(draw(a), draw(a));
    assert_ne!(draw(a), draw(RngState::new(42, 4)));
    assert_ne!(draw(a.derive(0)), draw(a.derive(1)));
    assert_eq!(draw(a.derive(5)), draw(RngState::new(42, 3).derive(5)));
}

fn nonzero_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #[test]
    fn cosine_is_bounded_symmetric_and_scale_invariant(
        (a, b) in (2usize..12).prop_flat_map(|n| (nonzero_vec(n), nonzero_vec(n))),
        c in 0.01f64..100.0,
    ) {
        let s = cosine_sim(&a, &b).unwrap();
        prop_assert!(s.abs() <= 1.0 + 1e-12);
        prop_assert_eq!(s, cosine_sim(&b, &a).unwrap());
        let scaled: Vec<f64> = a.iter().map(|v| c * v).collect();
        prop_assert!((cosine_sim(&scaled, &b).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn normalize_gives_unit_norm(a in nonzero_vec(7)) {
        let n = normalize(&a).unwrap();
        let len: f64 = n.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((len - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disabled_dropout_ignores_the_rng(seed in 0u64..1000, other in 0u64..1000) {
        let net = random_net(&[3, 4, 1], 0.5, 1);
        let x = [0.5, -0.25, 1.0];
        let (a, _) = mlp_forward(&net, &x, false, RngState::new(seed, 0)).unwrap();
        let (b, _) = mlp_forward(&net, &x, false, RngState::new(other, 1)).unwrap();
        prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
    }
}

#[test]
fn zero_norm_cosine_is_domain_error() {
    assert!(matches!(
        cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
        Err(Error::Domain(_))
    ));
}

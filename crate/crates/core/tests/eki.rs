mod common;

use airknow::dsr::{HeadInit, HeadParams};
use airknow::eki::{
    build_proxy, compose_gdv, dataset_gdvs, eki_loss, elbo_identity_check, elbo_terms,
    infer_confidence, infer_confidence_batch, read_checkpoint, train_eki, write_checkpoint,
    EkiHyper, GdvVariant, OmegaPolicy, ToyPosterior,
};
use airknow::epa::{build_anchor_set, AnchorRecord, ArbiterModel, Verdict};
use airknow::numkit::{
    grad_check, mlp_forward, sigmoid, Activation, DenseMatrix, Layer, MlpParams, RngState,
};
use airknow::world::{generate_splits, Dataset, KindMix, World};
use airknow::Error;
use common::{clean_mask, world};
use proptest::prelude::*;
use rand::Rng;

fn random_toy(n: usize, rng: &mut impl Rng) -> ToyPosterior {
    let mass = |rng: &mut dyn FnMut() -> f64| {
        let raw: Vec<f64> = (0..n).map(|_| rng()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect::<Vec<f64>>()
    };
    let mut draw = || rng.random_range(0.05..1.0);
    let prior = mass(&mut draw);
    let q = mass(&mut draw);
    let log_likelihood = (0..n).map(|_| -draw() * 20.0).collect();
    ToyPosterior {
        prior,
        log_likelihood,
        q,
    }
}

#[test]
fn elbo_identity_on_random_toys() {
    let mut g = RngState::new(5, 0).generator();
    for _ in 0..100 {
        let toy = random_toy(8, &mut g);
        assert!(elbo_identity_check(&toy).unwrap() < 1e-10);
    }
}

#[test]
fn elbo_is_tight_at_the_posterior_and_holds_at_the_prior() {
    let mut g = RngState::new(6, 0).generator();
    let mut toy = random_toy(6, &mut g);
    let joint: Vec<f64> = toy
        .prior
        .iter()
        .zip(&toy.log_likelihood)
        .map(|(p, l)| p * l.exp())
        .collect();
    let z: f64 = joint.iter().sum();
    toy.q = joint.iter().map(|j| j / z).collect();
    let t = elbo_terms(&toy).unwrap();
    assert!(t.kl_posterior.abs() < 1e-12);
    assert!((t.elbo - t.log_evidence).abs() < 1e-12);
    toy.q = toy.prior.clone();
    assert!(elbo_identity_check(&toy).unwrap() < 1e-12);
}

#[test]
fn unnormalized_mass_is_rejected() {
    let toy = ToyPosterior {
        prior: vec![0.5, 0.5],
        log_likelihood: vec![-1.0, -2.0],
        q: vec![0.5, 0.6],
    };
    assert!(matches!(elbo_identity_check(&toy), Err(Error::Input(_))));
}

#[test]
fn proxy_architecture_follows_the_hyperparameters() {
    let hyper = EkiHyper::default();
    let net = build_proxy(GdvVariant::Full.dim(256), &hyper, RngState::new(0, 0)).unwrap();
    assert_eq!(net.arch(), vec![1024, 512, 256, 1]);
    let layers = net.layers();
    assert_eq!(layers[0].activation, Activation::Relu);
    assert_eq!(layers[0].dropout, 0.1);
    assert_eq!(layers[1].dropout, 0.1);
    assert_eq!(layers[2].activation, Activation::Sigmoid);
    assert_eq!(layers[2].dropout, 0.0);
}

#[test]
fn zero_proxy_is_undecided() {
    let mut net = build_proxy(12, &EkiHyper::default(), RngState::new(0, 0)).unwrap();
    for l in net.layers_mut() {
        l.weight.values_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    for (t, p) in [(1, 0.1), (16, 0.5), (7, 0.0)] {
        let c = infer_confidence(&net, &[0.3; 12], t, p, RngState::new(1, 1)).unwrap();
        assert_eq!(c.value, 0.5);
    }
}

#[test]
fn zero_rate_confidence_is_the_deterministic_output() {
    let net = build_proxy(8, &EkiHyper::default(), RngState::new(3, 0)).unwrap();
    let x = [0.1, -0.4, 0.3, 0.9, -0.2, 0.5, 0.0, 0.7];
    let (y, _) = mlp_forward(&net, &x, false, RngState::new(0, 0)).unwrap();
    for t in [1, 4, 16] {
        let c = infer_confidence(&net, &x, t, 0.0, RngState::new(9, t as u64)).unwrap();
        assert_eq!(c.value.to_bits(), y[0].to_bits());
    }
}

#[test]
fn confidence_is_the_mean_of_its_passes() {
    let net = build_proxy(8, &EkiHyper::default(), RngState::new(3, 0)).unwrap();
    let x = [0.1, -0.4, 0.3, 0.9, -0.2, 0.5, 0.0, 0.7];
    let c = infer_confidence(&net, &x, 32, 0.3, RngState::new(4, 0)).unwrap();
    let passes = c.per_pass.unwrap();
    let mean = passes.iter().sum::<f64>() / 32.0;
    assert!((c.value - mean).abs() < 1e-15);
    assert!((0.0..=1.0).contains(&c.value));
}

#[test]
fn monte_carlo_average_converges_to_the_mask_enumeration() {
    let w = [0.8, -1.1, 0.5, 1.7, -0.6, 0.9];
    let x = [0.7, 0.4, -0.9, 0.3, 1.2, -0.5];
    let p = 0.5;
    let net = MlpParams::new(
        vec![Layer {
            weight: DenseMatrix::from_vec(1, 6, w.to_vec()).unwrap(),
            bias: vec![0.1],
            activation: Activation::Sigmoid,
            dropout: 0.0,
        }],
        p,
    )
    .unwrap();
    let outputs: Vec<f64> = (0u32..64)
        .map(|mask| {
            let z: f64 = (0..6)
                .filter(|k| mask >> k & 1 == 1)
                .map(|k| w[k] * x[k] / (1.0 - p))
                .sum();
            sigmoid(z + 0.1)
        })
        .collect();
    let exact = outputs.iter().sum::<f64>() / 64.0;
    let var = outputs.iter().map(|o| (o - exact).powi(2)).sum::<f64>() / 64.0;
    let t = 4096;
    let c = infer_confidence(&net, &x, t, p, RngState::new(8, 0)).unwrap();
    let se = (var / t as f64).sqrt();
    assert!(
        (c.value - exact).abs() < 3.0 * se,
        "{} vs {exact} (se {se})",
        c.value
    );
}

#[test]
fn batch_inference_matches_single_calls() {
    let net = build_proxy(8, &EkiHyper::default(), RngState::new(2, 0)).unwrap();
    let mut g = RngState::new(2, 1).generator();
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..8).map(|_| g.random_range(-1.0..1.0)).collect())
        .collect();
    let m = DenseMatrix::from_rows(&rows).unwrap();
    let rng = RngState::new(7, 7);
    let batch = infer_confidence_batch(&net, &m, 16, 0.1, rng).unwrap();
    for (i, r) in rows.iter().enumerate() {
        let c = infer_confidence(&net, r, 16, 0.1, rng.derive(i as u64)).unwrap();
        assert_eq!(c.value.to_bits(), batch[i].to_bits());
    }
}

#[test]
fn eki_loss_gradients_on_a_four_sample_batch() {
    for seed in 0..20u64 {
        let mut base = build_proxy(
            6,
            &EkiHyper {
                hidden: vec![5, 4],
                ..EkiHyper::default()
            },
            RngState::new(seed, 0),
        )
        .unwrap();
        let mut g = RngState::new(seed, 1).generator();
        // zero biases put whole-layer dead samples exactly on a ReLU kink
        let flat: Vec<f64> = (0..base.param_count())
            .map(|_| g.random_range(-1.0..1.0))
            .collect();
        base.set_flat(&flat).unwrap();
        let x = DenseMatrix::from_vec(4, 6, (0..24).map(|_| g.random_range(-1.0..1.0)).collect())
            .unwrap();
        let y = [1.0, 0.0, 0.0, 1.0];
        let f = |flat: &[f64]| {
            let mut net = base.clone();
            net.set_flat(flat)?;
            let (l, gr) = eki_loss(&net, &x, &y, 1.5, 1e-3, false, RngState::new(0, 0))?;
            Ok((l, gr.to_flat()))
        };
        let err = grad_check(f, &base.to_flat(), 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

fn small_setup(seed: u64) -> (World, Dataset, HeadParams) {
    let w = world(16, 8, 0.05, seed);
    let (train, _) = generate_splits(&w, 1200, 2, 0.5, &KindMix::default(), seed).unwrap();
    let heads = HeadParams::init(
        &w,
        &HeadInit {
            perturbation: 0.0,
            ..HeadInit::default()
        },
        RngState::new(seed, 9),
    )
    .unwrap();
    (w, train, heads)
}

#[test]
fn training_lowers_the_anchor_loss_and_separates_held_out_triplets() {
    let (_, train, heads) = small_setup(42);
    let anchor =
        build_anchor_set(&train, &ArbiterModel::perfect(), 1024, RngState::new(42, 1)).unwrap();
    let hyper = EkiHyper {
        epochs: 30,
        ..EkiHyper::default()
    };
    let out = train_eki(&anchor, &train, &heads, &hyper, 42).unwrap();
    assert!(out.final_loss < out.initial_loss);
    assert_eq!(out.epoch_losses.len(), 30);

    let used: std::collections::HashSet<&str> = anchor.iter().map(|r| r.id.as_str()).collect();
    let mask = clean_mask(&train);
    let held: Vec<usize> = (0..train.len())
        .filter(|&i| !used.contains(train.triplets[i].id.as_str()))
        .collect();
    let ts: Vec<_> = held.iter().map(|&i| &train.triplets[i]).collect();
    let gdv = dataset_gdvs(&ts, &heads, GdvVariant::Full).unwrap();
    let c = infer_confidence_batch(&out.params, &gdv, 16, 0.1, RngState::new(0, 3)).unwrap();
    let hits = held
        .iter()
        .zip(&c)
        .filter(|(&i, &c)| (c > 0.5) == mask[i])
        .count();
    let acc = hits as f64 / held.len() as f64;
    assert!(acc >= 0.85, "{acc}");
}

#[test]
fn training_is_deterministic() {
    let (_, train, heads) = small_setup(3);
    let anchor =
        build_anchor_set(&train, &ArbiterModel::perfect(), 256, RngState::new(3, 1)).unwrap();
    let a = train_eki(&anchor, &train, &heads, &EkiHyper::default(), 3).unwrap();
    let b = train_eki(&anchor, &train, &heads, &EkiHyper::default(), 3).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.epoch_losses, b.epoch_losses);
}

#[test]
fn single_class_anchor_falls_back_to_unit_weight() {
    let (_, train, heads) = small_setup(4);
    let anchor: Vec<AnchorRecord> = train.triplets[..64]
        .iter()
        .map(|t| AnchorRecord {
            id: t.id.clone(),
            verdict: Verdict::clean("all clean"),
        })
        .collect();
    let out = train_eki(&anchor, &train, &heads, &EkiHyper::default(), 4).unwrap();
    assert_eq!(out.omega, 1.0);
    let fixed = EkiHyper {
        omega: OmegaPolicy::Fixed(3.0),
        ..EkiHyper::default()
    };
    assert_eq!(
        train_eki(&anchor, &train, &heads, &fixed, 4).unwrap().omega,
        3.0
    );
}

#[test]
fn empty_or_unknown_anchor_is_rejected() {
    let (_, train, heads) = small_setup(5);
    let r = train_eki(&[], &train, &heads, &EkiHyper::default(), 5);
    assert!(matches!(r, Err(Error::Config(_))));
    let stray = vec![AnchorRecord {
        id: "nope".into(),
        verdict: Verdict::clean(""),
    }];
    assert!(train_eki(&stray, &train, &heads, &EkiHyper::default(), 5).is_err());
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let hyper = EkiHyper::default();
    let net = build_proxy(
        24,
        &EkiHyper {
            hidden: vec![7, 5],
            ..hyper.clone()
        },
        RngState::new(1, 1),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("proxy.json");
    write_checkpoint(&net, &hyper, &path).unwrap();
    let (back, h) = read_checkpoint(&path).unwrap();
    assert_eq!(
        back.to_flat()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>(),
        net.to_flat()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    );
    assert_eq!(back, net);
    assert_eq!(h, hyper);
    let text = std::fs::read_to_string(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema"], "airknow-ckpt-v1");
    assert_eq!(v["arch"], serde_json::json!([24, 7, 5, 1]));
}

fn arb_unit(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
}

proptest! {
    #[test]
    fn gdv_dimensions_match_the_variant(d in 1usize..40, seed in 0u64..100) {
        let mut g = RngState::new(seed, 0).generator();
        let mut v = || (0..d).map(|_| g.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (q, t, r, m) = (v(), v(), v(), v());
        for variant in GdvVariant::ALL {
            let out = compose_gdv(&q, &t, variant, Some(&r), Some(&m)).unwrap();
            prop_assert_eq!(out.values.len(), variant.blocks() * d);
        }
        prop_assert_eq!(GdvVariant::Full.blocks(), 4);
        prop_assert_eq!(GdvVariant::BasicOnly.blocks(), 2);
        prop_assert_eq!(GdvVariant::NoBasic.blocks(), 2);
    }

    #[test]
    fn confidence_stays_in_the_unit_interval(x in arb_unit(6), p in 0.0f64..0.9, t in 1usize..20) {
        let net = build_proxy(6, &EkiHyper { hidden: vec![4], ..EkiHyper::default() }, RngState::new(1, 0)).unwrap();
        let c = infer_confidence(&net, &x, t, p, RngState::new(2, 0)).unwrap();
        prop_assert!((0.0..=1.0).contains(&c.value));
    }
}

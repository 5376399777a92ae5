mod common;

use airknow::dsr::{
    align_loss, compose_query, infonce_loss, recon_loss, total_objective, train_stage2,
    ConfidenceSchedule, DsrHyper, HeadInit, HeadParams, LossMode, ObjectiveSpec, SoloRouting,
};
use airknow::eki::{build_proxy, EkiHyper, GdvVariant};
use airknow::numkit::{grad_check, DenseMatrix, RngState};
use airknow::world::{generate_splits, KindMix};
use airknow::Error;
use common::world;
use proptest::prelude::*;
use rand::Rng;

const LN2: f64 = std::f64::consts::LN_2;

fn m(rows: &[&[f64]]) -> DenseMatrix {
    DenseMatrix::from_rows(rows).unwrap()
}

fn identity2() -> DenseMatrix {
    m(&[&[1.0, 0.0], &[0.0, 1.0]])
}

fn spec(align: bool, recon: bool) -> ObjectiveSpec {
    ObjectiveSpec {
        mode: LossMode::Airknow,
        align,
        recon,
        tau: 0.07,
        alpha: 0.7,
        lambda: 0.5,
        exclusive_denominator: false,
        solo_routing: SoloRouting::Gated,
    }
}

#[test]
fn align_with_equal_similarities_is_ln2() {
    let z = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
    let (l, _) = align_loss(&z, &z, &[1.0, 1.0], 0.07, false).unwrap();
    assert!((l - LN2).abs() < 1e-12, "{l}");
}

#[test]
fn orthogonal_pair_closed_forms() {
    let z = identity2();
    let want = (1.0 + (-2.0f64).exp()).ln();
    let (a, _) = align_loss(&z, &z, &[1.0, 1.0], 0.5, false).unwrap();
    let (n, _) = infonce_loss(&z, &z, 0.5).unwrap();
    assert!((a - want).abs() < 1e-12);
    assert!((n - want).abs() < 1e-12);
    assert!((want - 0.126928).abs() < 1e-6);
}

#[test]
fn recon_hinge_closed_form() {
    let s = 0.84f64;
    let zq = m(&[&[1.0, 0.0]]);
    let zt = m(&[&[s, (1.0 - s * s).sqrt()]]);
    let (l, g) = recon_loss(&zq, &zt, &[0.0], 0.7, 0.07).unwrap();
    assert!((l - 2.0).abs() < 1e-12, "{l}");
    assert!((g.d_zq.get(0, 0) - s / 0.07).abs() < 1e-12);
}

#[test]
fn recon_is_zero_below_the_margin_and_without_noisy_mass() {
    let zq = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let zt = m(&[&[0.6, 0.8], &[0.0, 1.0]]);
    let (below, g) = recon_loss(&zq, &zt, &[0.0, 1.0], 0.7, 0.07).unwrap();
    assert_eq!(below, 0.0);
    assert!(g.d_zq.values().iter().all(|&v| v == 0.0));
    let (clean, _) = recon_loss(&zq, &zt, &[1.0, 1.0], 0.7, 0.07).unwrap();
    assert_eq!(clean, 0.0);
}

#[test]
fn align_scales_linearly_with_confidence() {
    let mut g = RngState::new(1, 0).generator();
    let (zq, zt) = (random(4, 8, &mut g), random(4, 8, &mut g));
    let c = [0.2, 0.9, 0.5, 0.7];
    let (base, _) = align_loss(&zq, &zt, &c, 0.1, false).unwrap();
    let half: Vec<f64> = c.iter().map(|v| v / 2.0).collect();
    let (l, _) = align_loss(&zq, &zt, &half, 0.1, false).unwrap();
    assert!((l - base / 2.0).abs() < 1e-12);
    let (zero, _) = align_loss(&zq, &zt, &[0.0; 4], 0.1, false).unwrap();
    assert_eq!(zero, 0.0);
}

#[test]
fn zero_lambda_total_is_the_align_loss() {
    let mut g = RngState::new(2, 0).generator();
    let (zq, zt) = (random(4, 8, &mut g), random(4, 8, &mut g));
    let c = [0.1, 0.4, 0.8, 1.0];
    let s = ObjectiveSpec {
        lambda: 0.0,
        ..spec(true, true)
    };
    let (parts, grads) = total_objective(&zq, &zt, &c, &s).unwrap();
    let (a, ga) = align_loss(&zq, &zt, &c, 0.07, false).unwrap();
    assert_eq!(parts.total, a);
    assert_eq!(grads.d_zq, ga.d_zq);
}

#[test]
fn solo_routing_sends_every_sample_to_the_remaining_stream() {
    let mut g = RngState::new(3, 0).generator();
    let (zq, zt) = (random(4, 8, &mut g), random(4, 8, &mut g));
    let c = [0.1, 0.4, 0.8, 1.0];
    let all = ObjectiveSpec {
        solo_routing: SoloRouting::All,
        ..spec(true, false)
    };
    let (p, _) = total_objective(&zq, &zt, &c, &all).unwrap();
    assert_eq!(
        p.total,
        align_loss(&zq, &zt, &[1.0; 4], 0.07, false).unwrap().0
    );
    let neither = spec(false, false);
    assert!(matches!(
        total_objective(&zq, &zt, &c, &neither),
        Err(Error::Config(_))
    ));
}

#[test]
fn single_sample_batch_has_no_negatives() {
    let z = m(&[&[1.0, 0.0]]);
    assert!(matches!(infonce_loss(&z, &z, 0.07), Err(Error::Input(_))));
    assert!(align_loss(&z, &z, &[1.0], 0.07, false).is_err());
}

fn random(rows: usize, cols: usize, g: &mut impl Rng) -> DenseMatrix {
    let mut v: Vec<f64> = (0..rows * cols)
        .map(|_| g.random_range(-1.0..1.0))
        .collect();
    for r in v.chunks_mut(cols) {
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        r.iter_mut().for_each(|x| *x /= n);
    }
    DenseMatrix::from_vec(rows, cols, v).unwrap()
}

/// Concatenates `zq` and `zt` into one parameter vector for the checker.
fn pair_check<F>(zq: &DenseMatrix, zt: &DenseMatrix, loss: F) -> f64
where
    F: Fn(&DenseMatrix, &DenseMatrix) -> airknow::Result<(f64, airknow::dsr::PairGrads)>,
{
    let (b, d) = (zq.rows(), zq.cols());
    let mut flat = zq.values().to_vec();
    flat.extend_from_slice(zt.values());
    let f = |p: &[f64]| {
        let q = DenseMatrix::from_vec(b, d, p[..b * d].to_vec())?;
        let t = DenseMatrix::from_vec(b, d, p[b * d..].to_vec())?;
        let (l, g) = loss(&q, &t)?;
        let mut grad = g.d_zq.values().to_vec();
        grad.extend_from_slice(g.d_zt.values());
        Ok((l, grad))
    };
    grad_check(f, &flat, 1e-5).unwrap()
}

/// Targets near the queries so that most positives sit above the margin.
fn instance(seed: u64) -> (DenseMatrix, DenseMatrix, Vec<f64>) {
    let mut g = RngState::new(seed, 0).generator();
    let zq = random(4, 8, &mut g);
    let noise = random(4, 8, &mut g);
    let mut zt = zq.clone();
    zt.add_scaled(&noise, 0.4).unwrap();
    let c = (0..4).map(|_| g.random_range(0.0..1.0)).collect();
    (zq, zt, c)
}

#[test]
fn loss_gradients_match_finite_differences_on_twenty_instances() {
    for seed in 0..20 {
        let (zq, zt, c) = instance(seed);
        let errs = [
            pair_check(&zq, &zt, |q, t| align_loss(q, t, &c, 0.1, false)),
            pair_check(&zq, &zt, |q, t| align_loss(q, t, &c, 0.1, true)),
            pair_check(&zq, &zt, |q, t| recon_loss(q, t, &c, 0.3, 0.07)),
            pair_check(&zq, &zt, |q, t| infonce_loss(q, t, 0.1)),
            pair_check(&zq, &zt, |q, t| {
                let s = ObjectiveSpec {
                    alpha: 0.3,
                    tau: 0.1,
                    ..spec(true, true)
                };
                total_objective(q, t, &c, &s).map(|(p, g)| (p.total, g))
            }),
        ];
        for (k, e) in errs.iter().enumerate() {
            assert!(*e < 1e-4, "seed {seed} loss {k}: {e}");
        }
    }
}

#[test]
fn head_gradients_match_finite_differences() {
    let w = world(6, 4, 0.05, 1);
    let (ds, _) = generate_splits(&w, 4, 2, 0.0, &KindMix::default(), 1).unwrap();
    let heads = HeadParams::random(6, RngState::new(2, 0)).unwrap();
    let batch: Vec<_> = ds.triplets.iter().collect();
    let c = [0.9, 0.2, 0.6, 0.4];
    let s = ObjectiveSpec {
        alpha: -0.5,
        tau: 0.2,
        ..spec(true, true)
    };
    let nq = heads.compose.param_count();
    let mut flat = heads.compose.to_flat();
    flat.extend(heads.project.to_flat());
    let f = |p: &[f64]| {
        let mut h = heads.clone();
        h.compose.set_flat(&p[..nq])?;
        h.project.set_flat(&p[nq..])?;
        let fwd = h.forward(&batch)?;
        let (parts, g) = total_objective(&fwd.zq, &fwd.zt, &c, &s)?;
        let grads = h.backward(&fwd, &g.d_zq, &g.d_zt)?;
        let mut out = grads.compose.to_flat();
        out.extend(grads.project.to_flat());
        Ok((parts.total, out))
    };
    let err = grad_check(f, &flat, 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn composed_queries_are_unit_norm_and_match_the_batch_path() {
    let w = world(8, 8, 0.05, 2);
    let (ds, _) = generate_splits(&w, 10, 2, 0.0, &KindMix::default(), 2).unwrap();
    let heads = HeadParams::init(&w, &HeadInit::default(), RngState::new(1, 1)).unwrap();
    let batch: Vec<_> = ds.triplets.iter().collect();
    let fwd = heads.forward(&batch).unwrap();
    for (i, t) in ds.triplets.iter().enumerate() {
        let q = compose_query(&heads, &t.z_r, &t.z_m).unwrap();
        let n: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        for (a, b) in q.iter().zip(fwd.zq.row(i)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(matches!(
        compose_query(&heads, &[1.0], &[1.0]),
        Err(Error::Shape(_))
    ));
}

struct Setup {
    train: airknow::world::Dataset,
    heads: HeadParams,
    proxy: airknow::numkit::MlpParams,
    eki: EkiHyper,
}

fn setup() -> Setup {
    let w = world(8, 8, 0.05, 4);
    let (train, _) = generate_splits(&w, 200, 2, 0.5, &KindMix::default(), 4).unwrap();
    let heads = HeadParams::init(&w, &HeadInit::default(), RngState::new(4, 1)).unwrap();
    let eki = EkiHyper {
        hidden: vec![16, 8],
        ..EkiHyper::default()
    };
    let proxy = build_proxy(GdvVariant::Full.dim(8), &eki, RngState::new(4, 2)).unwrap();
    Setup {
        train,
        heads,
        proxy,
        eki,
    }
}

fn hyper() -> DsrHyper {
    DsrHyper {
        epochs: 2,
        batch_size: 32,
        ..DsrHyper::default()
    }
}

#[test]
fn stage_two_is_deterministic_and_leaves_the_proxy_alone() {
    let s = setup();
    let before = s.proxy.clone();
    for schedule in [ConfidenceSchedule::Once, ConfidenceSchedule::PerBatch] {
        let h = DsrHyper {
            confidence: schedule,
            ..hyper()
        };
        let a = train_stage2(&s.train, Some(&s.proxy), &s.eki, s.heads.clone(), &h, 7).unwrap();
        let b = train_stage2(&s.train, Some(&s.proxy), &s.eki, s.heads.clone(), &h, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, s.heads);
        assert_eq!(a.1.epochs.len(), 2);
        assert_eq!(a.1.c_hat.len(), 2);
        assert_eq!(a.1.epochs[0].c_hat_histogram.iter().sum::<usize>(), 200);
    }
    assert_eq!(s.proxy, before);
}

#[test]
fn infonce_training_ignores_the_proxy() {
    let s = setup();
    let h = DsrHyper {
        mode: LossMode::Infonce,
        ..hyper()
    };
    let with = train_stage2(&s.train, Some(&s.proxy), &s.eki, s.heads.clone(), &h, 3).unwrap();
    let without = train_stage2(&s.train, None, &s.eki, s.heads.clone(), &h, 3).unwrap();
    assert_eq!(with, without);
    assert!(with.1.c_hat.is_empty());
}

#[test]
fn proxy_problems_are_config_errors() {
    let s = setup();
    let r = train_stage2(&s.train, None, &s.eki, s.heads.clone(), &hyper(), 3);
    assert!(matches!(r, Err(Error::Config(_))));
    let wrong = build_proxy(5, &s.eki, RngState::new(0, 0)).unwrap();
    let r = train_stage2(&s.train, Some(&wrong), &s.eki, s.heads.clone(), &hyper(), 3);
    assert!(matches!(r, Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_finite_and_nonnegative(seed in 0u64..10_000, tau in 0.02f64..1.0) {
        let mut g = RngState::new(seed, 0).generator();
        let (zq, zt) = (random(5, 6, &mut g), random(5, 6, &mut g));
        let c: Vec<f64> = (0..5).map(|_| g.random_range(0.0..=1.0)).collect();
        let s = ObjectiveSpec { tau, ..spec(true, true) };
        let (p, _) = total_objective(&zq, &zt, &c, &s).unwrap();
        prop_assert!(p.align >= 0.0 && p.recon >= 0.0 && p.total.is_finite());
        prop_assert!((p.total - (p.align + 0.5 * p.recon)).abs() < 1e-12);
    }
}

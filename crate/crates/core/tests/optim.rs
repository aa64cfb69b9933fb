mod common;

use common::oracles::{self, cross_entropy_oracle, rel};
use common::rng;
use proptest::prelude::*;
use rand::Rng;
use yelpimg::engine::{ParamStore, Tensor};
use yelpimg::optim::*;

#[test]
fn equations_match_brute_force_oracles() {
    for c in oracles::equation_suite() {
        assert!(c.ok(), "{c:?}");
    }
}

#[test]
fn single_precision_losses_track_the_oracle() {
    let mut r = rng(5);
    for _ in 0..100 {
        let n = r.gen_range(1..10);
        let logits: Vec<f64> = (0..n * 9).map(|_| r.gen_range(-6.0..6.0)).collect();
        let classes: Vec<usize> = (0..n).map(|_| r.gen_range(0..9)).collect();
        let l32: Vec<f32> = logits.iter().map(|v| *v as f32).collect();
        let l64: Vec<f64> = l32.iter().map(|v| *v as f64).collect();
        let got = cross_entropy_loss(&l32, 9, &classes, &ClassWeights::uniform(9)).unwrap();
        let want = cross_entropy_oracle(&l64, 9, &classes, &[1.0; 9]);
        assert!(
            rel(got.value as f64, want) < 1e-5,
            "{} vs {want}",
            got.value
        );
    }
}

#[test]
fn mse_examples() {
    assert_eq!(mse_loss(&[3.0f64, 4.0], &[3.0, 4.0]).unwrap().value, 0.0);
    assert_eq!(mse_loss(&[3.0f64], &[5.0]).unwrap().value, 4.0);
    assert!(mse_loss(&[1.0f64, 2.0], &[1.0]).is_err());
}

#[test]
fn cross_entropy_examples() {
    let out = cross_entropy_loss(&[0.7f64; 3], 3, &[1], &ClassWeights::uniform(3)).unwrap();
    assert!((out.value - 3f64.ln()).abs() < 1e-12);
    assert!((out.value - 1.0986).abs() < 1e-4);
    let w = ClassWeights::new(vec![0.0, 1.0, 1.0]).unwrap();
    assert!(cross_entropy_loss(&[0.1f64, 0.2, 0.3], 3, &[0], &w).is_err());
    assert!(cross_entropy_loss(&[0.1f64, 0.2, 0.3], 3, &[3], &ClassWeights::uniform(3)).is_err());
}

fn store(values: &[f32]) -> ParamStore<f32> {
    let mut s = ParamStore::new();
    s.add_param("p", Tensor::new(&[values.len()], values.to_vec()).unwrap());
    s
}

fn set_grad(s: &mut ParamStore<f32>, g: &[f32]) {
    let id = s.id("p").unwrap();
    s.get_mut(id).grad = Some(Tensor::new(&[g.len()], g.to_vec()).unwrap());
}

fn value(s: &ParamStore<f32>) -> Vec<f32> {
    s.by_name("p").unwrap().tensor.data().to_vec()
}

#[test]
fn sgd_two_step_recurrence() {
    let mut s = store(&[0.0]);
    let mut opt = SgdMomentum::new(SgdConfig {
        lr: 0.1,
        momentum: 0.9,
    });
    set_grad(&mut s, &[1.0]);
    opt.step(&mut s, 0.1).unwrap();
    assert_eq!(opt.velocity(0).unwrap().data(), &[1.0]);
    assert!((value(&s)[0] + 0.1).abs() < 1e-7);
    opt.step(&mut s, 0.1).unwrap();
    assert!((opt.velocity(0).unwrap().data()[0] - 1.9).abs() < 1e-6);
    assert!((value(&s)[0] + 0.29).abs() < 1e-6);
}

#[test]
fn zero_momentum_is_bitwise_plain_descent() {
    let mut r = rng(8);
    let p0: Vec<f32> = (0..50).map(|_| r.gen_range(-2.0..2.0)).collect();
    let mut s = store(&p0);
    let mut opt = SgdMomentum::new(SgdConfig {
        lr: 0.03,
        momentum: 0.0,
    });
    let mut plain = p0.clone();
    for _ in 0..5 {
        let g: Vec<f32> = (0..50).map(|_| r.gen_range(-1.0..1.0)).collect();
        set_grad(&mut s, &g);
        opt.step(&mut s, 0.03).unwrap();
        for (p, gi) in plain.iter_mut().zip(&g) {
            *p -= 0.03f32 * gi;
        }
    }
    let got = value(&s);
    assert!(got
        .iter()
        .zip(&plain)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn optimizers_skip_frozen_parameters() {
    let mut s = store(&[1.0, 2.0]);
    set_grad(&mut s, &[1.0, 1.0]);
    s.set_trainable(|_| false);
    SgdMomentum::new(SgdConfig::default())
        .step(&mut s, 0.5)
        .unwrap();
    Adam::new(AdamConfig::default())
        .unwrap()
        .step(&mut s, 0.5)
        .unwrap();
    assert_eq!(value(&s), vec![1.0, 2.0]);
}

#[test]
fn adam_first_step_examples() {
    let mut s = store(&[0.0]);
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt = Adam::new(cfg).unwrap();
    set_grad(&mut s, &[2.0]);
    opt.step(&mut s, 0.1).unwrap();
    assert_eq!(opt.step_count(), 1);
    let dx = value(&s)[0] as f64;
    assert!((dx - (-0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-7);
}

#[test]
fn adam_descends_quadratic_like_reference_script() {
    let cfg = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let mut s = ParamStore::<f64>::new();
    s.add_param("x", Tensor::new(&[1], vec![1.0]).unwrap());
    let mut opt = Adam::new(cfg).unwrap();
    let mut xs = vec![1.0];
    for _ in 0..10 {
        let x = s.by_name("x").unwrap().tensor.data()[0];
        let id = s.id("x").unwrap();
        s.get_mut(id).grad = Some(Tensor::new(&[1], vec![2.0 * x]).unwrap());
        opt.step(&mut s, cfg.lr).unwrap();
        xs.push(s.by_name("x").unwrap().tensor.data()[0]);
    }
    // Independent loop: same recurrence, gradient 2x re-evaluated each step.
    let (mut x, mut m, mut v) = (1.0f64, 0.0, 0.0);
    for (t, got) in xs.iter().enumerate().skip(1) {
        let g = 2.0 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mt = m / (1.0 - 0.9f64.powi(t as i32));
        let vt = v / (1.0 - 0.999f64.powi(t as i32));
        x -= 0.1 * mt / (vt.sqrt() + 1e-8);
        assert!((got - x).abs() < 1e-6, "step {t}: {got} vs {x}");
    }
    assert!(xs.windows(2).all(|w| w[1] < w[0]), "{xs:?}");
    assert!(xs[10].abs() < 1.0);
}

#[test]
fn step_decay_schedule() {
    let s = LrSchedule::default();
    assert_eq!(apply_lr_schedule(0, &s, 0.01), 0.01);
    assert!((apply_lr_schedule(7, &s, 0.01) - 0.001).abs() < 1e-15);
    assert!((apply_lr_schedule(6, &s, 0.01) - 0.01).abs() < 1e-15);
    let flat = LrSchedule::new(1.0, 7).unwrap();
    assert_eq!(apply_lr_schedule(1000, &flat, 0.3), 0.3);
    assert!(LrSchedule::new(0.0, 7).is_err());
}

fn lr_space() -> SearchSpace {
    SearchSpace::new(vec![Dimension::decades("lr", -8, -1).unwrap()])
}

#[test]
fn search_finds_the_right_decade_and_is_reproducible() {
    let metric = |p: &HpPoint| Ok((p.get("lr").unwrap().log10() + 3.0).powi(2));
    let a = hp_search(&lr_space(), 20, metric, 9).unwrap();
    let coarse_best = a.ranked.iter().find(|t| t.phase == Phase::Coarse).unwrap();
    assert_eq!(coarse_best.values[0], 1e-3);
    let b = hp_search(&lr_space(), 20, metric, 9).unwrap();
    assert_eq!(a.ranked, b.ranked);
    let only = hp_search(&lr_space(), 8, metric, 9).unwrap();
    assert!(only.fine_skipped);
    assert!(hp_search(&lr_space(), 7, metric, 9).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mse_is_nonnegative_and_zero_only_on_equality(x in prop::collection::vec(-100.0f64..100.0, 1..30), shift in -5.0f64..5.0) {
        let y: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let l = mse_loss(&x, &y).unwrap().value;
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, shift == 0.0);
    }

    #[test]
    fn lowering_the_true_logit_raises_the_loss(seed in any::<u64>(), delta in 1e-3f64..5.0) {
        let mut r = rng(seed);
        let logits: Vec<f64> = (0..9).map(|_| r.gen_range(-5.0..5.0)).collect();
        let c = r.gen_range(0..9);
        let w = ClassWeights::uniform(9);
        let base = cross_entropy_loss(&logits, 9, &[c], &w).unwrap().value;
        let mut lower = logits.clone();
        lower[c] -= delta;
        let after = cross_entropy_loss(&lower, 9, &[c], &w).unwrap().value;
        prop_assert!(base >= 0.0);
        prop_assert!(after > base);
    }

    #[test]
    fn stabilized_equals_naive_when_finite(seed in any::<u64>(), scale in 0.1f64..60.0) {
        let mut r = rng(seed);
        let n = r.gen_range(1..6);
        let logits: Vec<f64> = (0..n * 3).map(|_| r.gen_range(-scale..scale)).collect();
        let classes: Vec<usize> = (0..n).map(|_| r.gen_range(0..3)).collect();
        let naive = cross_entropy_oracle(&logits, 3, &classes, &[1.0; 3]);
        prop_assume!(naive.is_finite());
        let got = cross_entropy_loss(&logits, 3, &classes, &ClassWeights::uniform(3)).unwrap().value;
        prop_assert!((got - naive).abs() <= 1e-5 * naive.abs().max(1.0));
    }

    #[test]
    fn adam_first_moment_equals_gradient_at_t1(g in -50.0f32..50.0, b1 in 0.0f64..0.999, b2 in 0.0f64..0.999) {
        let mut s = store(&[0.5]);
        set_grad(&mut s, &[g]);
        let mut opt = Adam::new(AdamConfig { lr: 0.01, beta1: b1, beta2: b2, eps: 1e-8 }).unwrap();
        opt.step(&mut s, 0.01).unwrap();
        let (m, v) = opt.moments(0).unwrap();
        let mt = m.data()[0] as f64 / (1.0 - b1);
        let vt = v.data()[0] as f64 / (1.0 - b2);
        prop_assert!((mt - g as f64).abs() <= 1e-5 * (g.abs() as f64).max(1.0));
        prop_assert!((vt - (g as f64).powi(2)).abs() <= 1e-5 * (g as f64).powi(2).max(1.0));
    }

    #[test]
    fn search_respects_budget_and_returns_minimum(budget in 8usize..30, seed in any::<u64>()) {
        let mut calls = 0usize;
        let out = hp_search(&lr_space(), budget, |p| {
            calls += 1;
            Ok((p.get("lr").unwrap().log10() + 4.2).abs())
        }, seed).unwrap();
        prop_assert!(calls <= budget);
        let min = out.ranked.iter().map(|t| t.metric).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(out.best().metric, min);
        for t in out.ranked.iter().filter(|t| t.phase == Phase::Fine) {
            let e = t.values[0].log10();
            prop_assert!((-4.5..=-3.5).contains(&e), "fine lr {} outside the winning decade", t.values[0]);
        }
    }
}

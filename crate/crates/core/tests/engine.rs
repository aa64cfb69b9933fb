mod common;

use common::gradsuite::{self, contract, normal_tensor, p, store, LINEAR_TOL, MIN_SAMPLES};
use common::rng;
use proptest::prelude::*;
use yelpimg::engine::{
    gradient_check, BatchNorm2d, GradCheckOptions, Graph, Mode, ParamKind, ParamStore, Tensor,
};

#[test]
fn every_op_matches_finite_differences() {
    let mut failures = Vec::new();
    for c in gradsuite::run_all() {
        if !c.ok() {
            failures.push(format!(
                "{} rel {:.3e} (tol {:.0e}) over {} samples",
                c.name, c.max_rel_error, c.tol, c.checked
            ));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn quadratic_loss_on_linear_model_is_near_exact() {
    // L = Σ (x·wᵀ + b − t)², gradient 2(x·wᵀ + b − t)·x in closed form.
    let s = store(&[("w", &[3, 7]), ("b", &[3])], 5);
    let x = normal_tensor(&[4, 7], &mut rng(6));
    let t = normal_tensor(&[4, 3], &mut rng(7));
    let mut s2 = s.clone();
    let c = gradsuite::check("quadratic", LINEAR_TOL, s, |g, s| {
        let xv = g.input(x.clone());
        let tv = g.input(t.clone());
        let (w, b) = (p(g, s, "w"), p(g, s, "b"));
        let y = g.linear(xv, w, Some(b))?;
        let nt = g.neg(tv);
        let d = g.add(y, nt)?;
        let sq = g.mul(d, d)?;
        Ok(g.sum(sq))
    });
    assert!(c.ok(), "{c:?}");

    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let (w, b) = (p(&mut g, &s2, "w"), p(&mut g, &s2, "b"));
    let y = g.linear(xv, w, Some(b)).unwrap();
    let resid: Vec<f64> = g
        .value(y)
        .data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| a - b)
        .collect();
    let tv = g.input(t.clone());
    let nt = g.neg(tv);
    let d = g.add(y, nt).unwrap();
    let sq = g.mul(d, d).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    s2.accumulate_grads(&g, &grads);
    let gw = s2.by_name("w").unwrap().grad.clone().unwrap();
    for o in 0..3 {
        for i in 0..7 {
            let want: f64 = (0..4)
                .map(|nn| 2.0 * resid[nn * 3 + o] * x.data()[nn * 7 + i])
                .sum();
            assert!((gw.data()[o * 7 + i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}

#[test]
fn relu_kinks_at_zero_are_skipped() {
    let mut s = ParamStore::new();
    let mut r = rng(3);
    let data: Vec<f64> = (0..60)
        .map(|i| {
            if i % 3 == 0 {
                0.0
            } else {
                normal_tensor(&[1], &mut r).data()[0]
            }
        })
        .collect();
    s.add_param("x", Tensor::new(&[6, 10], data).unwrap());
    let rep = gradient_check(
        &mut s,
        |g, s| {
            let x = p(g, s, "x");
            let y = g.relu(x);
            contract(g, y, 4)
        },
        &GradCheckOptions {
            samples: 30,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(rep.skipped_kinks > 0);
    assert!(rep.checked >= MIN_SAMPLES);
    assert!(rep.passes(1e-3), "{rep:?}");
}

#[test]
fn simple_forward_examples() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);

    let xs = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.5, 0.25, 9.0, -4.0]).unwrap();
    let x = g.input(xs.clone());
    let w = g.input(Tensor::from_fn(
        &[3, 3],
        |i| if i % 4 == 0 { 1.0 } else { 0.0 },
    ));
    let b = g.input(Tensor::zeros(&[3]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y), &xs);

    let img = Tensor::from_fn(&[2, 1, 4, 5], |i| i as f32 * 0.5 - 3.0);
    let x = g.input(img.clone());
    let k = g.input(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = g.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(g.value(y), &img);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3, 2]));
    let msg = g.add(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    let w = g.input(Tensor::zeros(&[4, 5]));
    let msg = g.linear(a, w, None).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::<f32>::new();
    let x = g.input_with_grad(Tensor::zeros(&[2]));
    let y = g.tanh(x);
    assert!(g.backward(y).is_err());
}

#[test]
fn linear_sum_gradient_is_input() {
    let mut s = ParamStore::<f32>::new();
    let wid = s.add_param(
        "w",
        Tensor::new(&[1, 4], vec![0.3, -0.2, 0.9, 1.1]).unwrap(),
    );
    let mut g = Graph::new();
    let x = Tensor::new(&[1, 4], vec![2.0, -1.0, 0.5, 7.0]).unwrap();
    let xv = g.input(x.clone());
    let w = g.param(&s, wid, true);
    let y = g.linear(xv, w, None).unwrap();
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    s.accumulate_grads(&g, &grads);
    assert_eq!(s.get(wid).grad.as_ref().unwrap().data(), x.data());
}

#[test]
fn frozen_parameters_get_no_gradient_and_stay_put() {
    let mut s = ParamStore::<f32>::new();
    let a = s.add_param("a", Tensor::full(&[2, 2], 0.5));
    let b = s.add_param("b", Tensor::full(&[2, 2], -1.5));
    s.set_trainable(|n| n == "a");
    let before = s.get(b).tensor.clone();
    let mut g = Graph::new();
    let av = g.param(&s, a, true);
    let bv = g.param(&s, b, true);
    let m = g.mul(av, bv).unwrap();
    let l = g.sum(m);
    let grads = g.backward(l).unwrap();
    s.accumulate_grads(&g, &grads);
    assert!(s.get(a).grad.is_some());
    assert!(s.get(b).grad.is_none());
    assert!(s
        .get(b)
        .tensor
        .data()
        .iter()
        .zip(before.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(!s.get(b).requires_grad);
}

#[test]
fn eval_batch_norm_ignores_batch_composition() {
    let mut s = ParamStore::<f32>::new();
    let bn = BatchNorm2d::new(&mut s, "bn", 3);
    // Move the running statistics away from their initial values.
    let mut r = rng(9);
    for _ in 0..3 {
        let mut g = Graph::new();
        let x = g.input(normal_tensor(&[4, 3, 2, 2], &mut r).cast());
        bn.forward(&mut g, &mut s, x, Mode::TRAIN).unwrap();
    }
    assert_eq!(
        s.by_name("bn.running_mean").unwrap().kind,
        ParamKind::Buffer
    );
    let one: Tensor<f32> = normal_tensor(&[1, 3, 2, 2], &mut r).cast();
    let others: Tensor<f32> = normal_tensor(&[5, 3, 2, 2], &mut r).cast();
    let solo = {
        let mut g = Graph::new();
        let x = g.input(one.clone());
        let y = bn.forward(&mut g, &mut s, x, Mode::EVAL).unwrap();
        g.value(y).data().to_vec()
    };
    let mut batch = one.data().to_vec();
    batch.extend_from_slice(others.data());
    let mixed = {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[6, 3, 2, 2], batch).unwrap());
        let y = bn.forward(&mut g, &mut s, x, Mode::EVAL).unwrap();
        g.value(y).data()[..12].to_vec()
    };
    assert_eq!(solo, mixed);
}

#[test]
fn keep_stats_leaves_running_estimates_unchanged() {
    let mut s = ParamStore::<f32>::new();
    let bn = BatchNorm2d::new(&mut s, "bn", 2);
    let before = s.snapshot();
    let mut g = Graph::new();
    let x = g.input(normal_tensor(&[3, 2, 2, 2], &mut rng(1)).cast());
    bn.forward(&mut g, &mut s, x, Mode::TRAIN.keep_stats())
        .unwrap();
    assert_eq!(before, s.snapshot());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, k in 1usize..12, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut g = Graph::<f64>::new();
        let t = normal_tensor(&[rows, k], &mut rng(seed));
        let t = Tensor::from_fn(&[rows, k], |i| t.data()[i] * scale);
        let x = g.input(t);
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(k) {
            prop_assert!(row.iter().all(|v| *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}

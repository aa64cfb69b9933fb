//! Brute-force 64-bit evaluations of the loss and optimizer equations,
//! written independently of the library code.

use rand::Rng;
use yelpimg::engine::{ParamStore, Tensor};
use yelpimg::optim::{
    cross_entropy_loss, mse_loss, Adam, AdamConfig, ClassWeights, Optimizer, SgdConfig, SgdMomentum,
};

use super::rng;

pub const EQUATION_TOL: f64 = 1e-5;
pub const EQUATION_TRIALS: usize = 100;

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn mse_oracle(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        s += (x[i] - y[i]) * (x[i] - y[i]);
    }
    s / x.len() as f64
}

/// `Σ w[c]·(−log(exp(x[c]) / Σ_j exp(x[j]))) / Σ w[c]`, without any
/// stabilization.
pub fn cross_entropy_oracle(logits: &[f64], k: usize, classes: &[usize], w: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (n, &c) in classes.iter().enumerate() {
        let row = &logits[n * k..(n + 1) * k];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        num += w[c] * -(row[c].exp() / z).ln();
        den += w[c];
    }
    num / den
}

/// Returns `(p, v)` after applying `v ← μv + g; p ← p − lr·v` for each `g`.
pub fn sgd_oracle(p0: f64, grads: &[f64], lr: f64, mu: f64) -> (f64, f64) {
    let (mut p, mut v) = (p0, 0.0);
    for g in grads {
        v = mu * v + g;
        p -= lr * v;
    }
    (p, v)
}

/// Returns `(x, m, v)` after the five Adam equations for each `g`.
pub fn adam_oracle(x0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> (f64, f64, f64) {
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    for (i, dx) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        m = b1 * m + (1.0 - b1) * dx;
        let mt = m / (1.0 - b1.powi(t));
        v = b2 * v + (1.0 - b2) * dx * dx;
        let vt = v / (1.0 - b2.powi(t));
        x += -lr * mt / (vt.sqrt() + eps);
    }
    (x, m, v)
}

#[derive(Debug)]
pub struct EqCheck {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
}

impl EqCheck {
    pub fn ok(&self) -> bool {
        self.trials >= EQUATION_TRIALS && self.max_rel_error <= EQUATION_TOL
    }
}

fn random_vec(r: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

pub fn mse_check(seed: u64) -> EqCheck {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..EQUATION_TRIALS {
        let n = r.gen_range(1..40);
        let x = random_vec(&mut r, n, 12.0);
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(2..=10) as f64).collect();
        let got = mse_loss(&x, &y).unwrap();
        worst = worst.max(rel(got.value, mse_oracle(&x, &y)));
        for i in 0..n {
            worst = worst.max(rel(got.grad[i], 2.0 * (x[i] - y[i]) / n as f64));
        }
    }
    EqCheck {
        name: "mse_loss",
        trials: EQUATION_TRIALS,
        max_rel_error: worst,
    }
}

pub fn cross_entropy_check(seed: u64) -> EqCheck {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..EQUATION_TRIALS {
        let k = if r.gen_bool(0.5) { 9 } else { 3 };
        let n = r.gen_range(1..20);
        let logits = random_vec(&mut r, n * k, 8.0);
        let classes: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let w32: Vec<f32> = (0..k).map(|_| r.gen_range(0.05f32..3.0)).collect();
        let w: Vec<f64> = w32.iter().map(|v| *v as f64).collect();
        let got =
            cross_entropy_loss(&logits, k, &classes, &ClassWeights::new(w32).unwrap()).unwrap();
        worst = worst.max(rel(
            got.value,
            cross_entropy_oracle(&logits, k, &classes, &w),
        ));
    }
    EqCheck {
        name: "cross_entropy_loss",
        trials: EQUATION_TRIALS,
        max_rel_error: worst,
    }
}

fn single_param_store(values: &[f64]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add_param("p", Tensor::new(&[values.len()], values.to_vec()).unwrap());
    s
}

fn set_grad(s: &mut ParamStore<f64>, g: &[f64]) {
    let id = s.id("p").unwrap();
    s.get_mut(id).grad = Some(Tensor::new(&[g.len()], g.to_vec()).unwrap());
}

/// Multi-step runs through the optimizer object, element by element against
/// the scalar recurrence.
pub fn sgd_check(seed: u64) -> EqCheck {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..EQUATION_TRIALS {
        let (n, steps) = (r.gen_range(1..8), r.gen_range(1..6));
        let lr = 10f64.powf(r.gen_range(-4.0..0.0));
        let mu = r.gen_range(0.0..0.99);
        let p0 = random_vec(&mut r, n, 3.0);
        let grads: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut r, n, 5.0)).collect();
        let mut s = single_param_store(&p0);
        let mut opt = SgdMomentum::<f64>::new(SgdConfig { lr, momentum: mu });
        for g in &grads {
            set_grad(&mut s, g);
            opt.step(&mut s, lr).unwrap();
        }
        let got = s.by_name("p").unwrap().tensor.data().to_vec();
        let vel = opt.velocity(0).unwrap().data().to_vec();
        for i in 0..n {
            let gi: Vec<f64> = grads.iter().map(|g| g[i]).collect();
            let (p, v) = sgd_oracle(p0[i], &gi, lr, mu);
            worst = worst.max(rel(got[i], p)).max(rel(vel[i], v));
        }
    }
    EqCheck {
        name: "sgd_momentum_step",
        trials: EQUATION_TRIALS,
        max_rel_error: worst,
    }
}

pub fn adam_check(seed: u64) -> EqCheck {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..EQUATION_TRIALS {
        let (n, steps) = (r.gen_range(1..8), r.gen_range(1..6));
        let cfg = AdamConfig {
            lr: 10f64.powf(r.gen_range(-4.0..0.0)),
            beta1: r.gen_range(0.0..0.99),
            beta2: r.gen_range(0.0..0.9999),
            eps: 10f64.powf(r.gen_range(-10.0..-4.0)),
        };
        let p0 = random_vec(&mut r, n, 3.0);
        let grads: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut r, n, 5.0)).collect();
        let mut s = single_param_store(&p0);
        let mut opt = Adam::<f64>::new(cfg).unwrap();
        for g in &grads {
            set_grad(&mut s, g);
            opt.step(&mut s, cfg.lr).unwrap();
        }
        let got = s.by_name("p").unwrap().tensor.data().to_vec();
        let (m, v) = opt.moments(0).unwrap();
        for i in 0..n {
            let gi: Vec<f64> = grads.iter().map(|g| g[i]).collect();
            let (x, om, ov) = adam_oracle(p0[i], &gi, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
            worst = worst
                .max(rel(got[i], x))
                .max(rel(m.data()[i], om))
                .max(rel(v.data()[i], ov));
        }
    }
    EqCheck {
        name: "adam_step",
        trials: EQUATION_TRIALS,
        max_rel_error: worst,
    }
}

pub fn equation_suite() -> Vec<EqCheck> {
    vec![
        mse_check(101),
        cross_entropy_check(102),
        sgd_check(103),
        adam_check(104),
    ]
}

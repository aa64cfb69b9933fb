//! Finite-difference checks for every differentiable engine op and the GAN
//! losses, shared by the engine tests and the acceptance run.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use yelpimg::engine::{gradient_check, GradCheckOptions, Graph, Mode, ParamStore, Tensor, Var};
use yelpimg::gan::{discriminator_loss, generator_loss, GanArch, GanPair};
use yelpimg::optim::ClassWeights;
use yelpimg::Result;

use super::rng;

pub const NONLINEAR_TOL: f64 = 1e-3;
pub const LINEAR_TOL: f64 = 1e-6;
pub const MIN_SAMPLES: usize = 20;

#[derive(Debug)]
pub struct OpCheck {
    pub name: &'static str,
    pub tol: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl OpCheck {
    pub fn ok(&self) -> bool {
        self.checked >= MIN_SAMPLES && self.max_rel_error <= self.tol
    }
}

pub fn normal_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(r))
}

pub fn store(params: &[(&str, &[usize])], seed: u64) -> ParamStore<f64> {
    let mut r = rng(seed);
    let mut s = ParamStore::new();
    for (name, shape) in params {
        s.add_param(name, normal_tensor(shape, &mut r));
    }
    s
}

pub fn p(g: &mut Graph<f64>, s: &ParamStore<f64>, name: &str) -> Var {
    g.param(s, s.id(name).expect("declared parameter"), true)
}

/// `Σ y ⊙ R` for a fixed random `R`, so every output element carries a
/// distinct upstream gradient.
pub fn contract(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = normal_tensor(g.shape(y), &mut rng(seed));
    let rv = g.input(r);
    let m = g.mul(y, rv)?;
    Ok(g.sum(m))
}

pub fn check<F>(name: &'static str, tol: f64, mut s: ParamStore<f64>, f: F) -> OpCheck
where
    F: FnMut(&mut Graph<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    let opts = GradCheckOptions {
        samples: 32,
        ..GradCheckOptions::default()
    };
    let rep = gradient_check(&mut s, f, &opts).unwrap_or_else(|e| panic!("{name}: {e}"));
    OpCheck {
        name,
        tol,
        max_rel_error: rep.max_rel_error,
        checked: rep.checked,
        skipped_kinks: rep.skipped_kinks,
    }
}

fn unary(
    name: &'static str,
    tol: f64,
    seed: u64,
    op: fn(&mut Graph<f64>, Var) -> Result<Var>,
) -> OpCheck {
    check(name, tol, store(&[("x", &[4, 9])], seed), move |g, s| {
        let x = p(g, s, "x");
        let y = op(g, x)?;
        contract(g, y, seed + 1)
    })
}

fn bn(name: &'static str, train: bool, seed: u64) -> OpCheck {
    let s = store(
        &[("x", &[3, 2, 3, 4]), ("gamma", &[2]), ("beta", &[2])],
        seed,
    );
    let mut r = rng(seed + 7);
    let rm = normal_tensor(&[2], &mut r);
    let rv = Tensor::from_fn(&[2], |_| 0.5 + r.gen::<f64>());
    let tol = if train { NONLINEAR_TOL } else { LINEAR_TOL };
    check(name, tol, s, move |g, s| {
        let (x, ga, be) = (p(g, s, "x"), p(g, s, "gamma"), p(g, s, "beta"));
        let (mut m, mut v) = (rm.clone(), rv.clone());
        let y = g.batch_norm2d(x, ga, be, &mut m, &mut v, train, 0.1, 1e-5)?;
        contract(g, y, seed + 1)
    })
}

pub fn tiny_gan_arch() -> GanArch {
    GanArch {
        height: 12,
        width: 16,
        z_dim: 6,
        gen_channels: 4,
        disc_channels: 3,
    }
}

/// Every check in the suite.
pub fn run_all() -> Vec<OpCheck> {
    let l = LINEAR_TOL;
    let n = NONLINEAR_TOL;
    let mut out = vec![
        check(
            "linear",
            l,
            store(&[("x", &[3, 5]), ("w", &[4, 5]), ("b", &[4])], 1),
            |g, s| {
                let (x, w, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
                let y = g.linear(x, w, Some(b))?;
                contract(g, y, 2)
            },
        ),
        check(
            "conv2d",
            l,
            store(
                &[("x", &[2, 2, 5, 6]), ("w", &[3, 2, 3, 3]), ("b", &[3])],
                3,
            ),
            |g, s| {
                let (x, w, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
                let y = g.conv2d(x, w, Some(b), 2, 1)?;
                contract(g, y, 4)
            },
        ),
        check(
            "conv_transpose2d",
            l,
            store(
                &[("x", &[2, 3, 3, 2]), ("w", &[3, 2, 4, 4]), ("b", &[2])],
                5,
            ),
            |g, s| {
                let (x, w, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
                let y = g.conv_transpose2d(x, w, Some(b), 2, 1)?;
                contract(g, y, 6)
            },
        ),
        unary("relu", n, 7, |g, x| Ok(g.relu(x))),
        unary("leaky_relu", n, 9, |g, x| Ok(g.leaky_relu(x, 0.2))),
        unary("tanh", n, 11, |g, x| Ok(g.tanh(x))),
        unary("sigmoid", n, 13, |g, x| Ok(g.sigmoid(x))),
        unary("log_sigmoid", n, 15, |g, x| Ok(g.log_sigmoid(x))),
        unary("softmax", n, 17, |g, x| g.softmax(x)),
        unary("scale", l, 19, |g, x| Ok(g.scale(x, -1.7))),
        unary("neg", l, 21, |g, x| Ok(g.neg(x))),
        unary("flatten", l, 23, |g, x| g.flatten(x)),
        unary("reshape", l, 25, |g, x| g.reshape(x, &[6, 6])),
        unary("mean", l, 27, |g, x| Ok(g.mean(x))),
        unary("sum", l, 29, |g, x| Ok(g.sum(x))),
        check(
            "max_pool2d",
            n,
            store(&[("x", &[2, 2, 6, 7])], 31),
            |g, s| {
                let x = p(g, s, "x");
                let y = g.max_pool2d(x, 3, 2, 1)?;
                contract(g, y, 32)
            },
        ),
        check(
            "avg_pool2d",
            l,
            store(&[("x", &[2, 2, 4, 6])], 33),
            |g, s| {
                let x = p(g, s, "x");
                let y = g.avg_pool2d(x, 2)?;
                contract(g, y, 34)
            },
        ),
        check(
            "global_avg_pool",
            l,
            store(&[("x", &[3, 4, 3, 3])], 35),
            |g, s| {
                let x = p(g, s, "x");
                let y = g.global_avg_pool(x)?;
                contract(g, y, 36)
            },
        ),
        check(
            "minibatch_std",
            n,
            store(&[("x", &[4, 3, 2, 3])], 81),
            |g, s| {
                let x = p(g, s, "x");
                let y = g.minibatch_std(x, 1e-8)?;
                contract(g, y, 82)
            },
        ),
        bn("batch_norm2d_train", true, 37),
        bn("batch_norm2d_eval", false, 39),
        check(
            "residual_add",
            l,
            store(&[("a", &[4, 6]), ("b", &[4, 6])], 41),
            |g, s| {
                let (a, b) = (p(g, s, "a"), p(g, s, "b"));
                let y = g.residual_add(a, b)?;
                contract(g, y, 42)
            },
        ),
        check(
            "mul",
            l,
            store(&[("a", &[4, 6]), ("b", &[4, 6])], 43),
            |g, s| {
                let (a, b) = (p(g, s, "a"), p(g, s, "b"));
                let y = g.mul(a, b)?;
                contract(g, y, 44)
            },
        ),
        check("mse", n, store(&[("x", &[24, 1])], 45), |g, s| {
            let x = p(g, s, "x");
            let t: Vec<f64> = (0..24).map(|i| (2 + i % 9) as f64 / 3.0).collect();
            g.mse(x, &t)
        }),
        check("cross_entropy", n, store(&[("x", &[5, 9])], 47), |g, s| {
            let x = p(g, s, "x");
            let w = ClassWeights::new(vec![1.0, 0.5, 2.0, 1.0, 1.5, 0.25, 1.0, 3.0, 1.0]).unwrap();
            g.cross_entropy(x, &[0, 3, 8, 7, 5], &w)
        }),
        check(
            "discriminator_loss",
            n,
            store(&[("real", &[12, 1]), ("fake", &[12, 1])], 49),
            |g, s| {
                let (r, f) = (p(g, s, "real"), p(g, s, "fake"));
                Ok(discriminator_loss(g, r, f))
            },
        ),
        check(
            "generator_loss",
            n,
            store(&[("fake", &[24, 1])], 51),
            |g, s| {
                let f = p(g, s, "fake");
                Ok(generator_loss(g, f))
            },
        ),
    ];
    out.push(three_layer_convnet());
    out.extend(gan_network_checks());
    out
}

/// conv → relu → maxpool → conv → tanh → linear, cross-entropy on top.
pub fn three_layer_convnet() -> OpCheck {
    let s = store(
        &[
            ("c1.w", &[4, 3, 3, 3]),
            ("c1.b", &[4]),
            ("c2.w", &[4, 4, 3, 3]),
            ("fc.w", &[3, 4 * 2 * 3]),
            ("fc.b", &[3]),
        ],
        61,
    );
    let x = normal_tensor(&[2, 3, 8, 12], &mut rng(62));
    check("convnet_3layer", NONLINEAR_TOL, s, move |g, s| {
        let xv = g.input(x.clone());
        let (w1, b1) = (p(g, s, "c1.w"), p(g, s, "c1.b"));
        let h = g.conv2d(xv, w1, Some(b1), 1, 1)?;
        let h = g.relu(h);
        let h = g.max_pool2d(h, 2, 2, 0)?;
        let w2 = p(g, s, "c2.w");
        let h = g.conv2d(h, w2, None, 2, 1)?;
        let h = g.tanh(h);
        let h = g.flatten(h)?;
        let (wf, bf) = (p(g, s, "fc.w"), p(g, s, "fc.b"));
        let y = g.linear(h, wf, Some(bf))?;
        g.cross_entropy(y, &[2, 0], &ClassWeights::uniform(3))
    })
}

/// D gradients through its loss, and G gradients through a frozen D.
pub fn gan_network_checks() -> Vec<OpCheck> {
    let arch = tiny_gan_arch();
    let pair = GanPair::<f64>::new(arch, 71).unwrap();
    let mut r = rng(72);
    let real = Tensor::from_fn(&[4, 3, arch.height, arch.width], |_| r.gen_range(-1.0..1.0));
    let fake = Tensor::from_fn(&[4, 3, arch.height, arch.width], |_| r.gen_range(-1.0..1.0));
    let z = normal_tensor(&[4, arch.z_dim], &mut r);

    let GanPair {
        gen,
        gstore,
        disc,
        dstore,
        ..
    } = pair;
    let d = {
        let disc = disc.clone();
        check(
            "gan_discriminator_net",
            NONLINEAR_TOL,
            dstore.clone(),
            move |g, s| {
                let rv = g.input(real.clone());
                let fv = g.input(fake.clone());
                let rl = disc.forward(g, s, rv, Mode::TRAIN)?;
                let fl = disc.forward(g, s, fv, Mode::TRAIN)?;
                Ok(discriminator_loss(g, rl, fl))
            },
        )
    };
    let gch = check("gan_generator_net", NONLINEAR_TOL, gstore, move |g, s| {
        let zv = g.input(z.clone());
        let img = gen.forward(g, s, zv, Mode::TRAIN.keep_stats())?;
        let fl = disc.forward(g, &dstore, img, Mode::EVAL.frozen())?;
        Ok(generator_loss(g, fl))
    });
    vec![d, gch]
}

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::Result;

/// How a forward pass treats batch norm and parameter tracking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    /// Batch statistics (and running-stat updates) instead of running stats.
    pub train: bool,
    /// Record parameters as differentiable leaves.
    pub track: bool,
    /// In train mode, move batch-norm running statistics.
    pub update_stats: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        train: true,
        track: true,
        update_stats: true,
    };
    pub const EVAL: Mode = Mode {
        train: false,
        track: false,
        update_stats: false,
    };

    /// Same batch-norm behavior, parameters entered as constants.
    pub fn frozen(self) -> Mode {
        Mode {
            track: false,
            ..self
        }
    }

    /// Batch statistics are used but running estimates stay put.
    pub fn keep_stats(self) -> Mode {
        Mode {
            update_stats: false,
            ..self
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// `U(−b, b)` with `b = sqrt(6 / fan_in)`.
    HeUniform,
    Normal(f64),
    Uniform(f64),
    Zeros,
}

fn init_tensor<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    init: Init,
    rng: &mut impl Rng,
) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::HeUniform => {
            let b = (6.0 / fan_in.max(1) as f64).sqrt();
            let d = Uniform::new_inclusive(-b, b);
            Tensor::from_fn(shape, |_| T::lit(d.sample(rng)))
        }
        Init::Uniform(b) => {
            let d = Uniform::new_inclusive(-b, b);
            Tensor::from_fn(shape, |_| T::lit(d.sample(rng)))
        }
        Init::Normal(std) => {
            let d = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(shape, |_| T::lit(d.sample(rng)))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_param(
            &format!("{name}.weight"),
            init_tensor(&[dout, din], din, init, rng),
        );
        let bias = bias.then(|| store.add_param(&format!("{name}.bias"), Tensor::zeros(&[dout])));
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let w = g.param(store, self.weight, mode.track);
        let b = self.bias.map(|b| g.param(store, b, mode.track));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = [cout, cin, kernel, kernel];
        let weight = store.add_param(
            &format!("{name}.weight"),
            init_tensor(&shape, cin * kernel * kernel, init, rng),
        );
        let bias = bias.then(|| store.add_param(&format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let w = g.param(store, self.weight, mode.track);
        let b = self.bias.map(|b| g.param(store, b, mode.track));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = [cin, cout, kernel, kernel];
        let weight = store.add_param(
            &format!("{name}.weight"),
            init_tensor(&shape, cin * kernel * kernel, init, rng),
        );
        let bias = bias.then(|| store.add_param(&format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let w = g.param(store, self.weight, mode.track);
        let b = self.bias.map(|b| g.param(store, b, mode.track));
        g.conv_transpose2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(
                &format!("{name}.weight"),
                Tensor::full(&[channels], T::one()),
            ),
            beta: store.add_param(&format!("{name}.bias"), Tensor::zeros(&[channels])),
            running_mean: store
                .add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(
                &format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
            ),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma, mode.track);
        let beta = g.param(store, self.beta, mode.track);
        let (rm, rv) = store.pair_mut(self.running_mean, self.running_var);
        let momentum = if mode.update_stats {
            self.momentum
        } else {
            0.0
        };
        g.batch_norm2d(x, gamma, beta, rm, rv, mode.train, momentum, self.eps)
    }
}

use rand::Rng;

use crate::engine::{
    BatchNorm2d, Conv2d, ConvTranspose2d, Graph, Init, Linear, Mode, ParamStore, Scalar, Var,
};
use crate::{Error, Result};

/// Largest `k ≤ 4` with `h` and `w` divisible by `2^k` and both base extents
/// at least 3. Returns `(h0, w0, k)`.
pub fn resolution_plan(h: usize, w: usize) -> Result<(usize, usize, usize)> {
    let mut best = None;
    for k in 1..=4 {
        let f = 1 << k;
        if h.is_multiple_of(f) && w.is_multiple_of(f) && h / f >= 3 && w / f >= 3 {
            best = Some((h / f, w / f, k));
        }
    }
    best.ok_or_else(|| {
        Error::Config(format!(
            "GAN resolution {h}×{w} must be a multiple of 2 with both sides at least 6"
        ))
    })
}

/// Network widths and resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GanArch {
    pub height: usize,
    pub width: usize,
    pub z_dim: usize,
    /// Generator width at the last upsampling stage; doubles per stage towards the input.
    pub gen_channels: usize,
    /// Discriminator width at the first stage; doubles per stage.
    pub disc_channels: usize,
}

/// DCGAN-style generator: linear projection to a `h0 × w0` map, then
/// stride-2 transposed convolutions up to `3 × H × W` with a tanh output.
#[derive(Clone, Debug)]
pub struct Generator {
    fc: Linear,
    bn0: BatchNorm2d,
    ups: Vec<(ConvTranspose2d, Option<BatchNorm2d>)>,
    c0: usize,
    h0: usize,
    w0: usize,
}

impl Generator {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        arch: &GanArch,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (h0, w0, k) = resolution_plan(arch.height, arch.width)?;
        let init = Init::Normal(0.02);
        let c0 = arch.gen_channels << (k - 1);
        let fc = Linear::new(store, "fc", arch.z_dim, c0 * h0 * w0, true, init, rng);
        let bn0 = BatchNorm2d::new(store, "bn0", c0);
        let mut ups = Vec::new();
        let mut cin = c0;
        for i in 0..k {
            let last = i + 1 == k;
            let cout = if last { 3 } else { cin / 2 };
            let conv = ConvTranspose2d::new(
                store,
                &format!("up{i}.conv"),
                cin,
                cout,
                4,
                2,
                1,
                last,
                init,
                rng,
            );
            let bn = (!last).then(|| BatchNorm2d::new(store, &format!("up{i}.bn"), cout));
            ups.push((conv, bn));
            cin = cout;
        }
        Ok(Generator {
            fc,
            bn0,
            ups,
            c0,
            h0,
            w0,
        })
    }

    /// `z: [N, z_dim]` to images `[N, 3, H, W]` in `[−1, 1]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &mut ParamStore<T>,
        z: Var,
        mode: Mode,
    ) -> Result<Var> {
        let n = g.shape(z)[0];
        let h = self.fc.forward(g, s, z, mode)?;
        let h = g.reshape(h, &[n, self.c0, self.h0, self.w0])?;
        let h = self.bn0.forward(g, s, h, mode)?;
        let mut h = g.relu(h);
        for (conv, bn) in &self.ups {
            h = conv.forward(g, s, h, mode)?;
            if let Some(bn) = bn {
                h = bn.forward(g, s, h, mode)?;
                h = g.relu(h);
            }
        }
        Ok(g.tanh(h))
    }
}

/// Strided-convolution discriminator with leaky-relu activations, a
/// minibatch standard-deviation channel and one output logit per image.
/// The logits depend on which images share a batch.
#[derive(Clone, Debug)]
pub struct Discriminator {
    convs: Vec<Conv2d>,
    fc: Linear,
}

pub const LEAKY_SLOPE: f64 = 0.2;
/// Variance floor of the minibatch standard-deviation feature.
pub const MBSTD_EPS: f64 = 1e-8;

impl Discriminator {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        arch: &GanArch,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (h0, w0, k) = resolution_plan(arch.height, arch.width)?;
        let init = Init::Normal(0.02);
        let mut convs = Vec::new();
        let mut cin = 3;
        for i in 0..k {
            let cout = arch.disc_channels << i;
            convs.push(Conv2d::new(
                store,
                &format!("down{i}.conv"),
                cin,
                cout,
                4,
                2,
                1,
                true,
                init,
                rng,
            ));
            cin = cout;
        }
        let fc = Linear::new(store, "fc", (cin + 1) * h0 * w0, 1, true, init, rng);
        Ok(Discriminator { convs, fc })
    }

    /// Images `[N, 3, H, W]` to logits `[N, 1]`; `D(x) = sigmoid(logit)`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, s, h, mode)?;
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        // Lets D see a batch's spread, so a generator collapsed onto one mode is penalized.
        let h = g.minibatch_std(h, MBSTD_EPS)?;
        let h = g.flatten(h)?;
        self.fc.forward(g, s, h, mode)
    }

    /// Zeroes the output layer so `D ≡ 1/2`.
    pub fn make_constant_half<T: Scalar>(&self, s: &mut ParamStore<T>) {
        for id in std::iter::once(self.fc.weight).chain(self.fc.bias) {
            s.get_mut(id).tensor.data_mut().fill(T::zero());
        }
    }
}

/// Negated discriminator objective,
/// `−(mean log D(x) + mean log(1 − D(G(z))))`, from logits.
/// `log(1 − sigmoid(l)) = log sigmoid(−l)`.
pub fn discriminator_loss<T: Scalar>(g: &mut Graph<T>, real_logits: Var, fake_logits: Var) -> Var {
    let a = g.log_sigmoid(real_logits);
    let a = g.mean(a);
    let nf = g.neg(fake_logits);
    let b = g.log_sigmoid(nf);
    let b = g.mean(b);
    let s = g.add(a, b).expect("scalar shapes match");
    g.neg(s)
}

/// Non-saturating generator loss `−mean log D(G(z))`.
pub fn generator_loss<T: Scalar>(g: &mut Graph<T>, fake_logits: Var) -> Var {
    let a = g.log_sigmoid(fake_logits);
    let a = g.mean(a);
    g.neg(a)
}

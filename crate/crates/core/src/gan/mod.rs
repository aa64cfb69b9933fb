//! Small convolutional GAN trained per (label, star) partition.

mod net;

use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

pub use net::{
    discriminator_loss, generator_loss, resolution_plan, Discriminator, GanArch, Generator,
    LEAKY_SLOPE, MBSTD_EPS,
};

use crate::engine::weights::{load_weights, save_weights};
use crate::engine::{Graph, Mode, ParamStore, Scalar, Tensor};
use crate::imageprep::{resize_signed, StoreReader, HEIGHT, WIDTH};
use crate::optim::{Adam, AdamConfig, Optimizer};
use crate::plot::{self, Chart, Series};
use crate::util;
use crate::{Error, Result};

/// Generator and discriminator with their parameters.
#[derive(Clone, Debug)]
pub struct GanPair<T: Scalar = f32> {
    pub arch: GanArch,
    pub gen: Generator,
    pub gstore: ParamStore<T>,
    pub disc: Discriminator,
    pub dstore: ParamStore<T>,
}

impl<T: Scalar> GanPair<T> {
    pub fn new(arch: GanArch, seed: u64) -> Result<Self> {
        let mut rng = util::rng(seed);
        let mut gstore = ParamStore::new();
        let gen = Generator::new(&mut gstore, &arch, &mut rng)?;
        let mut dstore = ParamStore::new();
        let disc = Discriminator::new(&mut dstore, &arch, &mut rng)?;
        Ok(GanPair {
            arch,
            gen,
            gstore,
            disc,
            dstore,
        })
    }

    /// Generator output for `z: [N, z_dim]`; eval mode uses running batch-norm statistics.
    pub fn generate(&mut self, z: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let mode = if train {
            Mode::TRAIN.frozen().keep_stats()
        } else {
            Mode::EVAL
        };
        let mut g = Graph::new();
        let zv = g.input(z);
        let out = self.gen.forward(&mut g, &mut self.gstore, zv, mode)?;
        Ok(g.value(out).clone())
    }

    /// `D(x)` probabilities for a batch of images.
    pub fn discriminate(&self, x: Tensor<T>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let xv = g.input(x);
        let l = self.disc.forward(&mut g, &self.dstore, xv, Mode::EVAL)?;
        Ok(g.value(l)
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v.as_f64()).exp()))
            .collect())
    }

    /// `(d_loss, g_loss)` on a batch without updating anything.
    pub fn losses(&mut self, real: Tensor<T>, z: Tensor<T>) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let zv = g.input(z);
        let fake = self.gen.forward(
            &mut g,
            &mut self.gstore,
            zv,
            Mode::TRAIN.frozen().keep_stats(),
        )?;
        let xv = g.input(real);
        let rl = self.disc.forward(&mut g, &self.dstore, xv, Mode::EVAL)?;
        let fl = self.disc.forward(&mut g, &self.dstore, fake, Mode::EVAL)?;
        let d = discriminator_loss(&mut g, rl, fl);
        let gl = generator_loss(&mut g, fl);
        Ok((g.value(d).item().as_f64(), g.value(gl).item().as_f64()))
    }
}

fn check_batch<T: Scalar>(
    pair: &GanPair<T>,
    real: Option<&Tensor<T>>,
    z: &Tensor<T>,
) -> Result<()> {
    let a = &pair.arch;
    if z.shape().len() != 2 || z.shape()[1] != a.z_dim {
        return Err(Error::Shape(format!(
            "noise batch {:?}, expected [N, {}]",
            z.shape(),
            a.z_dim
        )));
    }
    if let Some(r) = real {
        let want = [z.shape()[0], 3, a.height, a.width];
        if r.shape() != want {
            return Err(Error::Shape(format!(
                "real batch {:?}, expected {want:?}",
                r.shape()
            )));
        }
    }
    Ok(())
}

/// One discriminator update descending the negated objective. The generator
/// runs without tracking or running-statistic updates, so it is untouched.
pub fn discriminator_step<T: Scalar>(
    pair: &mut GanPair<T>,
    opt: &mut dyn Optimizer<T>,
    real: Tensor<T>,
    z: Tensor<T>,
    lr: f64,
) -> Result<f64> {
    check_batch(pair, Some(&real), &z)?;
    let mut g = Graph::new();
    let zv = g.input(z);
    let fake = pair.gen.forward(
        &mut g,
        &mut pair.gstore,
        zv,
        Mode::TRAIN.frozen().keep_stats(),
    )?;
    let xv = g.input(real);
    let rl = pair.disc.forward(&mut g, &pair.dstore, xv, Mode::TRAIN)?;
    let fl = pair.disc.forward(&mut g, &pair.dstore, fake, Mode::TRAIN)?;
    let loss = discriminator_loss(&mut g, rl, fl);
    let v = g.value(loss).item().as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("discriminator loss {v}")));
    }
    let grads = g.backward(loss)?;
    pair.dstore.zero_grad();
    pair.dstore.accumulate_grads(&g, &grads);
    opt.step(&mut pair.dstore, lr)?;
    Ok(v)
}

/// One generator update on the non-saturating loss through a frozen discriminator.
pub fn generator_step<T: Scalar>(
    pair: &mut GanPair<T>,
    opt: &mut dyn Optimizer<T>,
    z: Tensor<T>,
    lr: f64,
) -> Result<f64> {
    check_batch(pair, None, &z)?;
    let mut g = Graph::new();
    let zv = g.input(z);
    let fake = pair
        .gen
        .forward(&mut g, &mut pair.gstore, zv, Mode::TRAIN)?;
    let fl = pair
        .disc
        .forward(&mut g, &pair.dstore, fake, Mode::TRAIN.frozen())?;
    let loss = generator_loss(&mut g, fl);
    let v = g.value(loss).item().as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("generator loss {v}")));
    }
    let grads = g.backward(loss)?;
    pair.gstore.zero_grad();
    pair.gstore.accumulate_grads(&g, &grads);
    opt.step(&mut pair.gstore, lr)?;
    Ok(v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub arch: GanArch,
    pub batch_size: usize,
    pub steps: usize,
    pub checkpoint_every: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Samples in each checkpoint grid.
    pub grid_count: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            arch: GanArch {
                height: 48,
                width: 64,
                z_dim: 64,
                gen_channels: 32,
                disc_channels: 32,
            },
            batch_size: 16,
            steps: 2000,
            checkpoint_every: 500,
            d_steps: 1,
            adam: AdamConfig {
                lr: 2e-4,
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
            },
            seed: 0,
            grid_count: 64,
        }
    }
}

impl GanConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{k}: cannot parse {v:?}")))
        }
        match key {
            "height" => self.arch.height = p(key, v)?,
            "width" => self.arch.width = p(key, v)?,
            "z_dim" => self.arch.z_dim = p(key, v)?,
            "gen_channels" => self.arch.gen_channels = p(key, v)?,
            "disc_channels" => self.arch.disc_channels = p(key, v)?,
            "batch_size" => self.batch_size = p(key, v)?,
            "steps" => self.steps = p(key, v)?,
            "checkpoint_every" => self.checkpoint_every = p(key, v)?,
            "d_steps" => self.d_steps = p(key, v)?,
            "lr" => self.adam.lr = p(key, v)?,
            "beta1" => self.adam.beta1 = p(key, v)?,
            "beta2" => self.adam.beta2 = p(key, v)?,
            "eps" => self.adam.eps = p(key, v)?,
            "seed" => self.seed = p(key, v)?,
            "grid_count" => self.grid_count = p(key, v)?,
            _ => return Err(Error::Config(format!("unknown GAN config key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut c = GanConfig::default();
        for (k, v) in util::parse_kv(text)? {
            c.set(&k, &v)?;
        }
        Ok(c)
    }

    pub fn to_kv_text(&self) -> String {
        let a = &self.arch;
        [
            ("height", a.height.to_string()),
            ("width", a.width.to_string()),
            ("z_dim", a.z_dim.to_string()),
            ("gen_channels", a.gen_channels.to_string()),
            ("disc_channels", a.disc_channels.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("steps", self.steps.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("d_steps", self.d_steps.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("eps", self.adam.eps.to_string()),
            ("seed", self.seed.to_string()),
            ("grid_count", self.grid_count.to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        resolution_plan(self.arch.height, self.arch.width)?;
        if self.batch_size == 0
            || self.d_steps == 0
            || self.checkpoint_every == 0
            || self.arch.z_dim == 0
        {
            return Err(Error::Config(
                "batch_size, d_steps, checkpoint_every and z_dim must be at least 1".into(),
            ));
        }
        if self.arch.gen_channels == 0 || self.arch.disc_channels == 0 {
            return Err(Error::Config("network widths must be at least 1".into()));
        }
        self.adam.validate()
    }
}

/// Maps a signed pixel to `[−1, 1]`.
pub fn pixel_to_unit(v: i8) -> f32 {
    (v as f32 + 0.5) / 127.5
}

/// Maps a `[−1, 1]` value back to an unsigned byte.
pub fn unit_to_byte(x: f32) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Reads a YIMG store and resizes every image to `height × width`, scaled to `[−1, 1]`.
pub fn load_gan_images(path: &Path, height: usize, width: usize) -> Result<Vec<Vec<f32>>> {
    StoreReader::open(path)?
        .map(|r| {
            let r = r?;
            let px = if (height, width) == (HEIGHT, WIDTH) {
                r.pixels
            } else {
                resize_signed(&r.pixels, HEIGHT, WIDTH, height, width)
            };
            Ok(px.into_iter().map(pixel_to_unit).collect())
        })
        .collect()
}

fn noise<T: Scalar>(n: usize, z_dim: usize, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(&[n, z_dim], |_| {
        T::lit(rng.sample::<f64, _>(StandardNormal))
    })
}

/// Tiles generator outputs `[N, 3, H, W]` row-major into a grid with
/// `ceil(sqrt(N))` columns.
pub fn tile_grid(images: &Tensor<f32>) -> RgbImage {
    let s = images.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols).max(1);
    let mut img = RgbImage::new((cols * w) as u32, (rows * h) as u32);
    let d = images.data();
    for k in 0..n {
        let (gy, gx) = (k / cols, k % cols);
        for y in 0..h {
            for x in 0..w {
                let px = |c: usize| unit_to_byte(d[((k * 3 + c) * h + y) * w + x]);
                img.put_pixel(
                    (gx * w + x) as u32,
                    (gy * h + y) as u32,
                    image::Rgb([px(0), px(1), px(2)]),
                );
            }
        }
    }
    img
}

/// `count` eval-mode samples from noise seeded by `seed`, tiled into a grid.
pub fn sample_grid(pair: &mut GanPair<f32>, count: usize, seed: u64) -> Result<RgbImage> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let z = noise(count, pair.arch.z_dim, &mut util::rng(seed));
    Ok(tile_grid(&pair.generate(z, false)?))
}

/// Metadata of one saved checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct GanCheckpoint {
    /// Strictly increasing from 1.
    pub serial: usize,
    pub step: usize,
    /// Mean losses since the previous checkpoint.
    pub d_loss: f64,
    pub g_loss: f64,
    pub weights: Option<PathBuf>,
    pub grid: Option<PathBuf>,
}

/// Per-step losses and checkpoints of a run.
pub struct GanRun {
    pub pair: GanPair<f32>,
    pub losses: Vec<(f64, f64)>,
    pub checkpoints: Vec<GanCheckpoint>,
}

fn checkpoint_stem(out_dir: &Path, serial: usize) -> PathBuf {
    out_dir.join(format!("ckpt_{serial:04}"))
}

fn save_gan_checkpoint(
    out_dir: &Path,
    pair: &mut GanPair<f32>,
    config: &GanConfig,
    ck: &mut GanCheckpoint,
) -> Result<()> {
    let stem = checkpoint_stem(out_dir, ck.serial);
    let weights = stem.with_extension("ywts");
    let g: Vec<(String, &Tensor<f32>)> = pair
        .gstore
        .named_tensors()
        .map(|(n, t)| (format!("g.{n}"), t))
        .collect();
    let d: Vec<(String, &Tensor<f32>)> = pair
        .dstore
        .named_tensors()
        .map(|(n, t)| (format!("d.{n}"), t))
        .collect();
    save_weights(&weights, g.iter().chain(&d).map(|(n, t)| (n.as_str(), *t)))?;
    let meta = stem.with_extension("meta");
    let text = format!(
        "serial = {}\nstep = {}\nd_loss = {}\ng_loss = {}\n{}",
        ck.serial,
        ck.step,
        ck.d_loss,
        ck.g_loss,
        config.to_kv_text()
    );
    std::fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
    let grid = stem.with_extension("png");
    plot::save_png(
        &sample_grid(pair, config.grid_count, config.seed ^ 0x6a1d)?,
        &grid,
    )?;
    ck.weights = Some(weights);
    ck.grid = Some(grid);
    Ok(())
}

/// Loads a checkpoint written by [`train_gan`]; returns the pair and the
/// checkpoint's metadata.
pub fn load_gan_checkpoint(path: &Path) -> Result<(GanPair<f32>, GanCheckpoint)> {
    let meta = path.with_extension("meta");
    let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let mut config = GanConfig::default();
    let mut ck = GanCheckpoint {
        serial: 0,
        step: 0,
        d_loss: f64::NAN,
        g_loss: f64::NAN,
        weights: Some(path.to_path_buf()),
        grid: None,
    };
    let bad = |k: &str| Error::Format(format!("{}: bad {k}", meta.display()));
    for (k, v) in util::parse_kv(&text)? {
        match k.as_str() {
            "serial" => ck.serial = v.parse().map_err(|_| bad(&k))?,
            "step" => ck.step = v.parse().map_err(|_| bad(&k))?,
            "d_loss" => ck.d_loss = v.parse().map_err(|_| bad(&k))?,
            "g_loss" => ck.g_loss = v.parse().map_err(|_| bad(&k))?,
            _ => config.set(&k, &v)?,
        }
    }
    let mut pair = GanPair::new(config.arch, config.seed)?;
    let entries = load_weights(path)?;
    let mut g = Vec::new();
    let mut d = Vec::new();
    for (n, t) in &entries {
        if let Some(x) = n.strip_prefix("g.") {
            g.push((x, t));
        } else if let Some(x) = n.strip_prefix("d.") {
            d.push((x, t));
        } else {
            return Err(Error::Format(format!(
                "{}: unexpected tensor {n}",
                path.display()
            )));
        }
    }
    let (ng, nd) = (pair.gstore.load_named(g)?, pair.dstore.load_named(d)?);
    if ng != pair.gstore.len() || nd != pair.dstore.len() {
        return Err(Error::Format(format!(
            "{}: incomplete GAN checkpoint",
            path.display()
        )));
    }
    Ok((pair, ck))
}

/// Trains on in-memory images (`3·H·W` values in `[−1, 1]` each). When
/// `out_dir` is given, checkpoints, `losses.csv` and `gan_loss.png` are
/// written there.
pub fn train_gan_images(
    images: &[Vec<f32>],
    config: &GanConfig,
    out_dir: Option<&Path>,
) -> Result<GanRun> {
    config.validate()?;
    let a = config.arch;
    let per = 3 * a.height * a.width;
    if images.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{} training images is fewer than the batch size {}",
            images.len(),
            config.batch_size
        )));
    }
    if let Some(bad) = images.iter().position(|im| im.len() != per) {
        return Err(Error::Shape(format!(
            "image {bad} does not have 3×{}×{} values",
            a.height, a.width
        )));
    }
    let mut pair = GanPair::<f32>::new(a, config.seed)?;
    let mut opt_d = Adam::new(config.adam)?;
    let mut opt_g = Adam::new(config.adam)?;
    let mut rng = util::rng(config.seed ^ 0x9a17);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut cursor = order.len();
    let mut next_batch = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(config.batch_size * per);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            data.extend_from_slice(&images[order[cursor]]);
            cursor += 1;
        }
        Tensor::new(&[config.batch_size, 3, a.height, a.width], data)
    };

    let mut losses = Vec::with_capacity(config.steps);
    let mut checkpoints = Vec::new();
    let (mut d_acc, mut g_acc, mut since) = (0.0, 0.0, 0usize);
    for step in 1..=config.steps {
        let mut d_loss = 0.0;
        for _ in 0..config.d_steps {
            let real = next_batch(&mut rng)?;
            let z = noise(config.batch_size, a.z_dim, &mut rng);
            d_loss = discriminator_step(&mut pair, &mut opt_d, real, z, config.adam.lr)
                .map_err(|e| Error::NonFinite(format!("step {step}: {e}")))?;
        }
        let z = noise(config.batch_size, a.z_dim, &mut rng);
        let g_loss = generator_step(&mut pair, &mut opt_g, z, config.adam.lr)
            .map_err(|e| Error::NonFinite(format!("step {step}: {e}")))?;
        losses.push((d_loss, g_loss));
        d_acc += d_loss;
        g_acc += g_loss;
        since += 1;
        if step % config.checkpoint_every == 0 || step == config.steps {
            let mut ck = GanCheckpoint {
                serial: checkpoints.len() + 1,
                step,
                d_loss: d_acc / since as f64,
                g_loss: g_acc / since as f64,
                weights: None,
                grid: None,
            };
            log::info!(
                "gan step {step}: d_loss {:.4} g_loss {:.4}",
                ck.d_loss,
                ck.g_loss
            );
            if let Some(dir) = out_dir {
                save_gan_checkpoint(dir, &mut pair, config, &mut ck)?;
            }
            checkpoints.push(ck);
            (d_acc, g_acc, since) = (0.0, 0.0, 0);
        }
    }
    if let Some(dir) = out_dir {
        write_losses(dir, &losses)?;
    }
    Ok(GanRun {
        pair,
        losses,
        checkpoints,
    })
}

fn write_losses(dir: &Path, losses: &[(f64, f64)]) -> Result<()> {
    let path = dir.join("losses.csv");
    let mut w = util::create(&path)?;
    let mut text = String::from("step,d_loss,g_loss\n");
    for (i, (d, g)) in losses.iter().enumerate() {
        text.push_str(&format!("{},{d},{g}\n", i + 1));
    }
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    let pts = |f: fn(&(f64, f64)) -> f64| {
        losses
            .iter()
            .enumerate()
            .map(|(i, l)| ((i + 1) as f64, f(l)))
            .collect()
    };
    let chart = Chart {
        title: "gan losses",
        x_label: "step",
        y_label: "loss",
        series: vec![
            Series {
                name: "d",
                points: pts(|l| l.0),
            },
            Series {
                name: "g",
                points: pts(|l| l.1),
            },
        ],
    };
    plot::save_png(&plot::render(&chart), &dir.join("gan_loss.png"))
}

/// Trains on a YIMG partition store, e.g. `gan/outside/4.0.yimg`.
pub fn train_gan(store: &Path, config: &GanConfig, out_dir: &Path) -> Result<Vec<GanCheckpoint>> {
    config.validate()?;
    let images = load_gan_images(store, config.arch.height, config.arch.width)?;
    log::info!(
        "{}: {} images at {}×{}",
        store.display(),
        images.len(),
        config.arch.height,
        config.arch.width
    );
    Ok(train_gan_images(&images, config, Some(out_dir))?.checkpoints)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_plans() {
        assert_eq!(resolution_plan(48, 64).unwrap(), (3, 4, 4));
        assert_eq!(resolution_plan(144, 200).unwrap(), (18, 25, 3));
        assert_eq!(resolution_plan(12, 16).unwrap(), (3, 4, 2));
        assert!(resolution_plan(5, 7).is_err());
    }

    #[test]
    fn generator_matches_resolution() {
        let arch = GanArch {
            height: 12,
            width: 16,
            z_dim: 4,
            gen_channels: 4,
            disc_channels: 4,
        };
        let mut pair = GanPair::<f32>::new(arch, 3).unwrap();
        let out = pair.generate(Tensor::zeros(&[2, 4]), true).unwrap();
        assert_eq!(out.shape(), &[2, 3, 12, 16]);
        assert!(out.data().iter().all(|v| v.abs() <= 1.0));
        let p = pair.discriminate(out).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn pixel_mapping_round_trips() {
        for v in i8::MIN..=i8::MAX {
            assert_eq!(unit_to_byte(pixel_to_unit(v)), (v as i16 + 128) as u8);
        }
    }

    #[test]
    fn config_kv_round_trip() {
        let mut c = GanConfig::default();
        c.set("lr", "0.001").unwrap();
        c.set("height", "12").unwrap();
        assert_eq!(GanConfig::from_kv_text(&c.to_kv_text()).unwrap(), c);
        assert!(c.set("depth", "3").is_err());
    }
}

#![allow(dead_code)]

pub mod gradsuite;
pub mod ingest;
pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yelpimg::imageprep::{StoreRecord, CHANNELS, HEIGHT, PIXELS, WIDTH};
use yelpimg::ingest::{Bucket, StarClass};
use yelpimg::optim::LrSchedule;
use yelpimg::trainer::{Head, LossKind, OptimizerKind, TrainConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A star class in `bucket`, chosen at random.
pub fn star_in_bucket(bucket: Bucket, rng: &mut impl Rng) -> StarClass {
    let choices: Vec<StarClass> = StarClass::all().filter(|s| s.bucket() == bucket).collect();
    choices[rng.gen_range(0..choices.len())]
}

/// Separable three-bucket images: each bucket has a dominant color channel
/// and a stripe orientation, plus per-pixel noise.
pub fn separable_bucket_set(per_class: usize, seed: u64) -> Vec<StoreRecord> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for (ci, bucket) in Bucket::ALL.into_iter().enumerate() {
        for _ in 0..per_class {
            let mut px = vec![0i8; PIXELS];
            let phase = r.gen_range(0..8);
            for c in 0..CHANNELS {
                for y in 0..HEIGHT {
                    for x in 0..WIDTH {
                        let stripe = match ci {
                            0 => (x + phase) / 8 % 2,
                            1 => (y + phase) / 8 % 2,
                            _ => (x + y + phase) / 8 % 2,
                        } as i32;
                        let base = if c == ci { 70 } else { -40 };
                        let v = base + stripe * 30 + r.gen_range(-20..=20);
                        px[(c * HEIGHT + y) * WIDTH + x] = v.clamp(-128, 127) as i8;
                    }
                }
            }
            out.push(StoreRecord {
                pixels: px,
                stars: star_in_bucket(bucket, &mut r),
            });
        }
    }
    out
}

/// Cross-entropy, SGD with momentum, batch 16, up to 200 epochs on the
/// three-bucket head; stops once train top-1 reaches 0.95.
pub fn overfit_config() -> TrainConfig {
    TrainConfig {
        head: Head::ThreeBucket,
        loss: LossKind::CrossEntropy,
        optimizer: OptimizerKind::SgdMomentum,
        batch_size: 16,
        epochs: 200,
        lr: 0.01,
        momentum: 0.9,
        schedule: LrSchedule::constant(),
        target_train_top1: Some(0.95),
        seed: 0,
        ..TrainConfig::default()
    }
}

/// Images with independent random pixels and the given star classes.
pub fn noise_records(stars: &[StarClass], seed: u64) -> Vec<StoreRecord> {
    let mut r = rng(seed);
    stars
        .iter()
        .map(|s| StoreRecord {
            pixels: (0..PIXELS).map(|_| r.gen::<i8>()).collect(),
            stars: *s,
        })
        .collect()
}

/// Small GAN setup for toy datasets at 12×16.
pub fn toy_gan_config(steps: usize) -> yelpimg::gan::GanConfig {
    yelpimg::gan::GanConfig {
        arch: yelpimg::gan::GanArch {
            height: 12,
            width: 16,
            z_dim: 8,
            gen_channels: 8,
            disc_channels: 8,
        },
        steps,
        checkpoint_every: steps.max(1),
        grid_count: 16,
        ..Default::default()
    }
}

/// `n` solid images cycling through `colors` (values in [−1, 1]).
pub fn solid_images(colors: &[f32], n: usize, arch: &yelpimg::gan::GanArch) -> Vec<Vec<f32>> {
    (0..n)
        .map(|i| vec![colors[i % colors.len()]; 3 * arch.height * arch.width])
        .collect()
}

/// Per-sample mean pixel of `count` eval-mode generator outputs.
pub fn sample_means(pair: &mut yelpimg::gan::GanPair<f32>, count: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let z = yelpimg::engine::Tensor::from_fn(&[count, pair.arch.z_dim], |_| {
        rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut r) as f32
    });
    let out = pair.generate(z, false).unwrap();
    out.data()
        .chunks(out.numel() / count)
        .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / c.len() as f64)
        .collect()
}

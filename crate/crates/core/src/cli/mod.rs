//! The `yelpimg` command line.
//!
//! Exit codes: 0 on success (including `--help`), 1 on usage errors, 2 on
//! runtime failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::gan::{self, GanConfig};
use crate::imageprep;
use crate::ingest::{self, Label, StarClass};
use crate::optim::search::write_trials_csv;
use crate::optim::{Dimension, SearchSpace};
use crate::plot::{self, Chart, Series};
use crate::trainer::{self, StoreDataset, TrainConfig};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "yelpimg", version, about = "Yelp photo star-rating pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse business/photo JSON, join, and write per-label split manifests.
    Ingest(IngestArgs),
    /// Normalize the photos of a manifest into YIMG stores.
    Preprocess(PreprocessArgs),
    /// Train a classifier from a key = value config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a YIMG store.
    Eval(EvalArgs),
    /// Coarse-then-fine hyperparameter search over training runs.
    Hpsearch(HpsearchArgs),
    /// Train a GAN on one (label, star) partition store.
    GanTrain(GanTrainArgs),
    /// Write a sample grid from a GAN checkpoint.
    GanSample(GanSampleArgs),
    /// Render loss/accuracy (and optionally star-histogram) figures.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub business: PathBuf,
    #[arg(long)]
    pub photos: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<photo_id>.jpg` files.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one store per star value under `<out>/gan/<label>/`.
    #[arg(long)]
    pub gan_partition: bool,
}

/// Config overrides shared by `train` and `hpsearch`.
#[derive(Args, Debug, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_store: Option<PathBuf>,
    #[arg(long)]
    pub val_store: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Any other config field, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl TrainOverrides {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::from_file(p)?,
            None => TrainConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            c.set(k.trim(), v)?;
        }
        let s = |o: Option<String>, key: &str, c: &mut TrainConfig| {
            o.map_or(Ok(()), |v| c.set(key, &v))
        };
        s(
            self.train_store.as_ref().map(|p| p.display().to_string()),
            "train_store",
            &mut c,
        )?;
        s(
            self.val_store.as_ref().map(|p| p.display().to_string()),
            "val_store",
            &mut c,
        )?;
        s(
            self.out.as_ref().map(|p| p.display().to_string()),
            "out_dir",
            &mut c,
        )?;
        s(self.epochs.map(|v| v.to_string()), "epochs", &mut c)?;
        s(self.lr.map(|v| v.to_string()), "lr", &mut c)?;
        s(self.seed.map(|v| v.to_string()), "seed", &mut c)?;
        s(self.batch_size.map(|v| v.to_string()), "batch_size", &mut c)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// A `best.ywts` written by `train` (its `.meta` sidecar must sit next to it).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
}

#[derive(Args, Debug)]
pub struct HpsearchArgs {
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Total number of training runs.
    #[arg(long)]
    pub budget: usize,
    /// `NAME:log:LO_EXP:HI_EXP` or `NAME:lin:V1,V2,..:LO:HI`; may be repeated.
    /// Defaults to `lr:log:-8:-1`.
    #[arg(long = "dim")]
    pub dims: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub search_seed: u64,
}

#[derive(Args, Debug)]
pub struct GanTrainArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct GanSampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PNG; defaults to `<checkpoint>_samples.png`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// `histogram.csv` written by `ingest`.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (including the program name), runs the command, and
/// returns the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    log::info!("resolved arguments: {cmd:?}");
    match cmd {
        Command::Ingest(a) => {
            let s = ingest::run_ingest(&a.business, &a.photos, &a.out, a.seed)?;
            for (label, count) in s.label_counts() {
                let median = ingest::histogram_median(&s.histogram[&label])
                    .map_or("-".into(), |m| m.to_string());
                println!("{label}\t{count} photos\tmedian {median}");
            }
            Ok(())
        }
        Command::Preprocess(a) => {
            let s = imageprep::run_preprocess(&a.manifest, &a.images, &a.out, a.gan_partition)?;
            println!(
                "written {:?}; {} missing, {} undecodable",
                s.written, s.missing, s.undecodable
            );
            Ok(())
        }
        Command::Train(a) => {
            let c = a.overrides.resolve()?;
            log::info!("resolved config:\n{}", c.to_kv_text());
            let (mut tr, mut va) = open_stores(&c)?;
            let out = trainer::train(&c, &mut tr, &mut va)?;
            if let Some(b) = out.best_metrics() {
                println!(
                    "best epoch {}: val loss {} val top1 {}",
                    b.epoch, b.val_loss, b.val_top1
                );
            }
            Ok(())
        }
        Command::Eval(a) => {
            let mut ck = trainer::load_checkpoint(&a.checkpoint)?;
            log::info!("checkpoint config:\n{}", ck.config.to_kv_text());
            let mut data = StoreDataset::open(&a.store)?;
            let r = trainer::evaluate(&mut ck.model, &mut data, &ck.config.class_weights)?;
            println!("loss {}\ttop1 {}\tcount {}", r.loss, r.top1, r.count);
            Ok(())
        }
        Command::Hpsearch(a) => {
            let c = a.overrides.resolve()?;
            log::info!("resolved base config:\n{}", c.to_kv_text());
            let dims = if a.dims.is_empty() {
                vec!["lr:log:-8:-1".to_string()]
            } else {
                a.dims.clone()
            };
            let space = SearchSpace::new(dims.iter().map(|d| parse_dim(d)).collect::<Result<_>>()?);
            let (mut tr, mut va) = open_stores(&c)?;
            let outcome = trainer::search_hyperparameters(
                &c,
                &space,
                a.budget,
                a.search_seed,
                &mut tr,
                &mut va,
            )?;
            let dir = c.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            let csv = dir.join("trials.csv");
            write_trials_csv(&csv, &space, &outcome)?;
            let best = outcome.best();
            println!(
                "best trial {} {:?} metric {} -> {}",
                best.index,
                best.values,
                best.metric,
                csv.display()
            );
            Ok(())
        }
        Command::GanTrain(a) => {
            let mut c = match &a.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    GanConfig::from_kv_text(&text)?
                }
                None => GanConfig::default(),
            };
            for kv in &a.set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
                c.set(k.trim(), v)?;
            }
            if let Some(n) = a.checkpoint_every {
                c.checkpoint_every = n;
            }
            if let Some(n) = a.steps {
                c.steps = n;
            }
            if let Some(s) = a.seed {
                c.seed = s;
            }
            c.validate()?;
            log::info!("resolved GAN config:\n{}", c.to_kv_text());
            for ck in gan::train_gan(&a.store, &c, &a.out)? {
                println!(
                    "checkpoint {} step {} d_loss {} g_loss {}",
                    ck.serial, ck.step, ck.d_loss, ck.g_loss
                );
            }
            Ok(())
        }
        Command::GanSample(a) => {
            let (mut pair, _) = gan::load_gan_checkpoint(&a.checkpoint)?;
            let img = gan::sample_grid(&mut pair, a.count, a.seed)?;
            let out = a.out.clone().unwrap_or_else(|| {
                let stem = a
                    .checkpoint
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned();
                a.checkpoint.with_file_name(format!("{stem}_samples.png"))
            });
            plot::save_png(&img, &out)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Plot(a) => {
            if a.metrics.is_none() && a.histogram.is_none() {
                return Err(Error::InvalidArgument(
                    "plot needs --metrics and/or --histogram".into(),
                ));
            }
            if let Some(m) = &a.metrics {
                let history = trainer::read_metrics_csv(m)?;
                if history.is_empty() {
                    return Err(Error::Format(format!("{}: no data rows", m.display())));
                }
                for p in trainer::plot_history(&history, &a.out)? {
                    println!("{}", p.display());
                }
            }
            if let Some(h) = &a.histogram {
                let p = plot_histogram(h, &a.out)?;
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn open_stores(c: &TrainConfig) -> Result<(StoreDataset, StoreDataset)> {
    let need = |p: &Option<PathBuf>, k: &str| {
        p.clone().ok_or_else(|| {
            Error::Config(format!(
                "{k} is not set (config key or --{})",
                k.replace('_', "-")
            ))
        })
    };
    let tr = StoreDataset::open(&need(&c.train_store, "train_store")?)?;
    let va = StoreDataset::open(&need(&c.val_store, "val_store")?)?;
    Ok((tr, va))
}

/// Parses a `--dim` specification.
pub fn parse_dim(spec: &str) -> Result<Dimension> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || {
        Error::Config(format!(
            "bad --dim {spec:?}; use NAME:log:LO:HI or NAME:lin:V1,V2:LO:HI"
        ))
    };
    match parts.as_slice() {
        [name, "log", lo, hi] => Dimension::decades(
            name,
            lo.parse().map_err(|_| bad())?,
            hi.parse().map_err(|_| bad())?,
        ),
        [name, "lin", coarse, lo, hi] => {
            let pts = coarse
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| bad()))
                .collect::<Result<Vec<f64>>>()?;
            Dimension::uniform(
                name,
                pts,
                lo.parse().map_err(|_| bad())?,
                hi.parse().map_err(|_| bad())?,
            )
        }
        _ => Err(bad()),
    }
}

/// Renders per-label star distributions (fraction of photos per rating).
pub fn plot_histogram(csv: &Path, out_dir: &Path) -> Result<PathBuf> {
    let hist = ingest::read_histogram_csv(csv)?;
    let names: Vec<(Label, String)> = hist.keys().map(|l| (*l, l.to_string())).collect();
    let series = names
        .iter()
        .map(|(l, name)| {
            let counts = &hist[l];
            let total = counts.iter().sum::<u64>().max(1) as f64;
            Series {
                name,
                points: StarClass::all()
                    .zip(counts)
                    .map(|(s, &c)| (s.raw(), c as f64 / total))
                    .collect(),
            }
        })
        .collect();
    let chart = Chart {
        title: "star rating by label",
        x_label: "stars",
        y_label: "fraction",
        series,
    };
    let path = out_dir.join("histogram.png");
    plot::save_png(&plot::render(&chart), &path)?;
    Ok(path)
}

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::ingest::Label;
use crate::optim::{AdamConfig, LrSchedule, SgdConfig};
use crate::util;
use crate::{Error, Result};

macro_rules! keyword_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $kw:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $kw),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($kw => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}; expected one of: ", $($kw, " "),+),
                        other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(
    /// Output head of the classifier.
    Head { NineClass => "nine", ThreeBucket => "bucket", Regression => "regression" }
);
keyword_enum!(
    /// Which parameters are trained.
    Regime { FineTune => "finetune", FeatureExtract => "feature" }
);
keyword_enum!(LossKind { CrossEntropy => "crossentropy", Mse => "mse" });
keyword_enum!(OptimizerKind { SgdMomentum => "sgd", Adam => "adam" });
keyword_enum!(
    /// Backbone size: a scaled-down residual network or full ResNet-18.
    Arch { Desk => "desk", ResNet18 => "resnet18" }
);

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::NineClass => 9,
            Head::ThreeBucket => 3,
            Head::Regression => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub label: Label,
    pub head: Head,
    pub regime: Regime,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub arch: Arch,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Per-class loss weights; uniform when empty.
    pub class_weights: Vec<f32>,
    /// Stop once an epoch's train top-1 reaches this value.
    pub target_train_top1: Option<f64>,
    pub train_store: Option<PathBuf>,
    pub val_store: Option<PathBuf>,
    /// Optional YWTS backbone initialization (head entries are ignored).
    pub backbone_weights: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        let adam = AdamConfig::default();
        TrainConfig {
            label: Label::Food,
            head: Head::NineClass,
            regime: Regime::FineTune,
            loss: LossKind::CrossEntropy,
            optimizer: OptimizerKind::SgdMomentum,
            arch: Arch::Desk,
            batch_size: 16,
            epochs: 25,
            lr: sgd.lr,
            momentum: sgd.momentum,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            schedule: LrSchedule::default(),
            seed: 0,
            class_weights: Vec::new(),
            target_train_top1: None,
            train_store: None,
            val_store: None,
            backbone_weights: None,
            out_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

impl TrainConfig {
    /// Field names accepted by [`TrainConfig::set`].
    pub const KEYS: [&'static str; 21] = [
        "label",
        "head",
        "regime",
        "loss",
        "optimizer",
        "arch",
        "batch_size",
        "epochs",
        "lr",
        "momentum",
        "beta1",
        "beta2",
        "eps",
        "lr_gamma",
        "lr_step",
        "seed",
        "class_weights",
        "target_train_top1",
        "train_store",
        "val_store",
        "backbone_weights",
    ];

    /// Sets one field from its textual form. `out_dir` is also accepted.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "label" => {
                self.label = v
                    .parse()
                    .map_err(|_| Error::Config(format!("label: unknown {v:?}")))?
            }
            "head" => {
                self.head = v.parse()?;
                // Keep the loss consistent unless it is set explicitly afterwards.
                self.loss = if self.head == Head::Regression {
                    LossKind::Mse
                } else {
                    LossKind::CrossEntropy
                };
            }
            "regime" => self.regime = v.parse()?,
            "loss" => self.loss = v.parse()?,
            "optimizer" => self.optimizer = v.parse()?,
            "arch" => self.arch = v.parse()?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "lr_gamma" => self.schedule.gamma = parse(key, v)?,
            "lr_step" => self.schedule.step_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "class_weights" => {
                self.class_weights = if v.is_empty() || v == "none" {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|w| parse(key, w.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "target_train_top1" => {
                self.target_train_top1 = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "train_store" => self.train_store = opt_path(v),
            "val_store" => self.val_store = opt_path(v),
            "backbone_weights" => self.backbone_weights = opt_path(v),
            "out_dir" => self.out_dir = opt_path(v),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` text on top of the defaults.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (k, v) in util::parse_kv(text)? {
            c.set(&k, &v)?;
        }
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Canonical `key = value` rendering; parsing it back yields `self`.
    pub fn to_kv_text(&self) -> String {
        let p = |o: &Option<PathBuf>| {
            o.as_ref()
                .map_or("none".to_string(), |p| p.display().to_string())
        };
        let weights = if self.class_weights.is_empty() {
            "none".to_string()
        } else {
            self.class_weights
                .iter()
                .map(f32::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        let target = self
            .target_train_top1
            .map_or("none".to_string(), |t| t.to_string());
        let lines = [
            ("label", self.label.to_string()),
            ("head", self.head.to_string()),
            ("regime", self.regime.to_string()),
            ("loss", self.loss.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("arch", self.arch.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("lr_gamma", self.schedule.gamma.to_string()),
            ("lr_step", self.schedule.step_size.to_string()),
            ("seed", self.seed.to_string()),
            ("class_weights", weights),
            ("target_train_top1", target),
            ("train_store", p(&self.train_store)),
            ("val_store", p(&self.val_store)),
            ("backbone_weights", p(&self.backbone_weights)),
            ("out_dir", p(&self.out_dir)),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical rendering, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_kv_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if (self.head == Head::Regression) != (self.loss == LossKind::Mse) {
            return Err(Error::Config(format!(
                "head {} requires loss {}",
                self.head,
                if self.head == Head::Regression {
                    "mse"
                } else {
                    "crossentropy"
                }
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr = {} must be finite and non-negative",
                self.lr
            )));
        }
        LrSchedule::new(self.schedule.gamma, self.schedule.step_size)?;
        if self.optimizer == OptimizerKind::Adam {
            self.adam().validate()?;
        }
        if !self.class_weights.is_empty() && self.class_weights.len() != self.head.outputs() {
            return Err(Error::Config(format!(
                "{} class weights for a {}-way head",
                self.class_weights.len(),
                self.head.outputs()
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
        }
    }
}

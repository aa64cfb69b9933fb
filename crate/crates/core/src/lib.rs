//! Star-rating pipeline for Yelp business photos.
//!
//! The crate covers the whole path from the raw Yelp JSON dumps to trained
//! models:
//!
//! - [`ingest`] streams `business.json` / `photos.json`, joins photos to
//!   their business star rating, partitions by photo label and writes
//!   deterministic train/val/test manifests.
//! - [`imageprep`] turns decoded photos into fixed `(3, 144, 200)` signed
//!   8-bit tensors and persists them in the `YIMG` container.
//! - [`engine`] is a small reverse-mode autodiff engine over dense tensors,
//!   with a finite-difference gradient checker.
//! - [`optim`] holds the losses, SGD with momentum, Adam, learning-rate
//!   decay and the coarse-then-fine hyperparameter search.
//! - [`trainer`] assembles residual classifiers with 9-class, 3-bucket or
//!   regression heads and runs the training/evaluation loops.
//! - [`gan`] trains a small convolutional GAN per (label, star) partition.
//! - [`cli`] exposes all of the above as subcommands of the `yelpimg` binary.

pub mod cli;
pub mod engine;
pub mod error;
pub mod gan;
pub mod imageprep;
pub mod ingest;
pub mod optim;
pub mod plot;
pub mod trainer;
mod util;

pub use error::{Error, Result};

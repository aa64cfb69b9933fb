use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::plot::{self, Chart, Series};
use crate::util;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
}

pub const METRICS_COLUMNS: [&str; 5] =
    ["epoch", "train_loss", "val_loss", "train_top1", "val_top1"];

/// Writes the metrics CSV. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut text = METRICS_COLUMNS.join(",");
    text.push('\n');
    for m in history {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch, m.train_loss, m.val_loss, m.train_top1, m.val_top1
        ));
    }
    let mut w = util::create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads a metrics CSV. Columns may appear in any order; extra columns are
/// ignored and a missing one is reported by name.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .unwrap_or_default()
        .split(',')
        .map(str::trim)
        .collect();
    let mut col = [0usize; 5];
    for (slot, name) in col.iter_mut().zip(METRICS_COLUMNS) {
        *slot = header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Format(format!("metrics CSV is missing column {name:?}")))?;
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let cell = |k: usize| -> Result<&str> {
            cells.get(col[k]).copied().ok_or_else(|| {
                Error::Format(format!(
                    "row {}: no value for {}",
                    i + 2,
                    METRICS_COLUMNS[k]
                ))
            })
        };
        let num = |k: usize| -> Result<f64> {
            cell(k)?.parse().map_err(|_| {
                Error::Format(format!("row {}: bad {} value", i + 2, METRICS_COLUMNS[k]))
            })
        };
        out.push(EpochMetrics {
            epoch: cell(0)?
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad epoch", i + 2)))?,
            train_loss: num(1)?,
            val_loss: num(2)?,
            train_top1: num(3)?,
            val_top1: num(4)?,
        });
    }
    Ok(out)
}

/// Renders `loss.png` and `accuracy.png` for a history.
pub fn plot_history(history: &[EpochMetrics], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let pts = |f: fn(&EpochMetrics) -> f64| {
        history
            .iter()
            .map(|m| (m.epoch as f64, f(m)))
            .collect::<Vec<_>>()
    };
    let charts = [
        (
            "loss.png",
            Chart {
                title: "loss",
                x_label: "epoch",
                y_label: "value",
                series: vec![
                    Series {
                        name: "train",
                        points: pts(|m| m.train_loss),
                    },
                    Series {
                        name: "val",
                        points: pts(|m| m.val_loss),
                    },
                ],
            },
        ),
        (
            "accuracy.png",
            Chart {
                title: "top-1 accuracy",
                x_label: "epoch",
                y_label: "value",
                series: vec![
                    Series {
                        name: "train",
                        points: pts(|m| m.train_top1),
                    },
                    Series {
                        name: "val",
                        points: pts(|m| m.val_top1),
                    },
                ],
            },
        ),
    ];
    let mut paths = Vec::new();
    for (file, chart) in charts {
        let p = out_dir.join(file);
        plot::save_png(&plot::render(&chart), &p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Writes `metrics.csv` plus the loss and accuracy figures into `out_dir`.
pub fn emit_curves(history: &[EpochMetrics], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("emit_curves: empty history".into()));
    }
    let csv = out_dir.join("metrics.csv");
    write_metrics_csv(&csv, history)?;
    let mut paths = vec![csv];
    paths.extend(plot_history(history, out_dir)?);
    Ok(paths)
}

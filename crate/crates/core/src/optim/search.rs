//! Coarse-then-fine hyperparameter search.
//!
//! Phase one evaluates the Cartesian product of every dimension's coarse
//! grid (powers of ten for learning-rate-like dimensions). Phase two spends
//! the rest of the budget on random samples around the best coarse point:
//! log-uniform within one decade centered on it for [`Scale::Log`]
//! dimensions, uniform over the fine range for [`Scale::Linear`] ones.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::util;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Log,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dimension {
    pub name: String,
    pub scale: Scale,
    pub coarse: Vec<f64>,
    /// Fine-phase range for linear dimensions. Log dimensions derive theirs
    /// from the winning decade.
    pub fine_lo: f64,
    pub fine_hi: f64,
}

impl Dimension {
    /// Powers of ten from `10^hi_exp` down to `10^lo_exp`.
    pub fn decades(name: &str, lo_exp: i32, hi_exp: i32) -> Result<Self> {
        if lo_exp > hi_exp {
            return Err(Error::InvalidArgument(format!(
                "{name}: coarse exponent range {lo_exp}..{hi_exp} is empty"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            scale: Scale::Log,
            coarse: (lo_exp..=hi_exp).rev().map(|e| 10f64.powi(e)).collect(),
            fine_lo: 10f64.powi(lo_exp),
            fine_hi: 10f64.powi(hi_exp),
        })
    }

    pub fn uniform(name: &str, coarse: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if coarse.is_empty() || lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "{name}: empty coarse grid or fine range"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            scale: Scale::Linear,
            coarse,
            fine_lo: lo,
            fine_hi: hi,
        })
    }

    fn sample_fine(&self, best: f64, rng: &mut impl Rng) -> f64 {
        match self.scale {
            Scale::Log => {
                let center = best.log10();
                10f64.powf(rng.gen_range(center - 0.5..=center + 0.5))
            }
            Scale::Linear => rng.gen_range(self.fine_lo..=self.fine_hi),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Self {
        Self { dims }
    }

    pub fn coarse_points(&self) -> Vec<Vec<f64>> {
        let mut points = vec![Vec::new()];
        for d in &self.dims {
            points = points
                .into_iter()
                .flat_map(|p| {
                    d.coarse.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        points
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Coarse,
    Fine,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Coarse => "coarse",
            Phase::Fine => "fine",
        }
    }
}

/// One named assignment of hyperparameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct HpPoint {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl HpPoint {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub phase: Phase,
    pub values: Vec<f64>,
    /// Lower is better.
    pub metric: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    /// Sorted by metric (ascending), ties by trial index.
    pub ranked: Vec<Trial>,
    pub fine_skipped: bool,
}

impl SearchOutcome {
    pub fn best(&self) -> &Trial {
        &self.ranked[0]
    }

    /// Trials in evaluation order.
    pub fn in_order(&self) -> Vec<&Trial> {
        let mut v: Vec<&Trial> = self.ranked.iter().collect();
        v.sort_by_key(|t| t.index);
        v
    }
}

/// Runs the two-phase search, calling `eval_fn` at most `budget` times.
pub fn hp_search<F>(
    space: &SearchSpace,
    budget: usize,
    mut eval_fn: F,
    seed: u64,
) -> Result<SearchOutcome>
where
    F: FnMut(&HpPoint) -> Result<f64>,
{
    if space.dims.is_empty() {
        return Err(Error::InvalidArgument(
            "search space has no dimensions".into(),
        ));
    }
    let coarse = space.coarse_points();
    if budget < coarse.len() {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} is smaller than the {} coarse grid points",
            coarse.len()
        )));
    }
    let names: Vec<String> = space.dims.iter().map(|d| d.name.clone()).collect();
    let mut trials = Vec::with_capacity(budget);
    let mut run = |values: Vec<f64>, phase: Phase, trials: &mut Vec<Trial>| -> Result<()> {
        let metric = eval_fn(&HpPoint {
            names: names.clone(),
            values: values.clone(),
        })?;
        log::info!(
            "trial {} ({}) {:?} -> {metric}",
            trials.len(),
            phase.as_str(),
            values
        );
        trials.push(Trial {
            index: trials.len(),
            phase,
            values,
            metric,
        });
        Ok(())
    };
    for p in coarse {
        run(p, Phase::Coarse, &mut trials)?;
    }
    let best_coarse = best_of(&trials).values.clone();
    let fine_budget = budget - trials.len();
    if fine_budget == 0 {
        log::warn!("budget covers only the coarse grid; fine-grained phase skipped");
    }
    let mut rng = util::rng(seed);
    for _ in 0..fine_budget {
        let values = space
            .dims
            .iter()
            .zip(&best_coarse)
            .map(|(d, b)| d.sample_fine(*b, &mut rng))
            .collect();
        run(values, Phase::Fine, &mut trials)?;
    }
    let mut ranked = trials;
    ranked.sort_by(|a, b| a.metric.total_cmp(&b.metric).then(a.index.cmp(&b.index)));
    Ok(SearchOutcome {
        ranked,
        fine_skipped: fine_budget == 0,
    })
}

fn best_of(trials: &[Trial]) -> &Trial {
    trials
        .iter()
        .min_by(|a, b| a.metric.total_cmp(&b.metric).then(a.index.cmp(&b.index)))
        .expect("at least one coarse trial")
}

/// `trial_index,phase,<dims...>,val_metric`, in evaluation order.
pub fn write_trials_csv(path: &Path, space: &SearchSpace, outcome: &SearchOutcome) -> Result<()> {
    let mut w = util::create(path)?;
    let io = |e| Error::io(path, e);
    let names: Vec<&str> = space.dims.iter().map(|d| d.name.as_str()).collect();
    writeln!(w, "trial_index,phase,{},val_metric", names.join(",")).map_err(io)?;
    for t in outcome.in_order() {
        let vals: Vec<String> = t.values.iter().map(|v| v.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{}",
            t.index,
            t.phase.as_str(),
            vals.join(","),
            t.metric
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

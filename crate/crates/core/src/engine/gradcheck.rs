use rand::seq::index;

use super::{Graph, ParamId, ParamStore, Var};
use crate::util;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Number of scalar parameter coordinates to compare.
    pub samples: usize,
    /// Central-difference step.
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 20,
            step: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±step perturbation crossed a relu / max-pool kink.
    pub skipped_kinks: usize,
    /// `name[index]` of the worst coordinate.
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn eval(
    store: &mut ParamStore<f64>,
    loss_fn: &mut impl FnMut(&mut Graph<f64>, &mut ParamStore<f64>) -> Result<Var>,
) -> Result<(f64, u64)> {
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let v = g.value(loss);
    if v.numel() != 1 {
        return Err(Error::Shape(format!(
            "gradient check needs a scalar loss, got {:?}",
            v.shape()
        )));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss {v} during gradient check")));
    }
    Ok((v, g.kink_signature()))
}

/// Compares backprop gradients of every trainable parameter in `store`
/// against central finite differences, in 64-bit arithmetic.
///
/// `loss_fn` rebuilds the forward pass (model + fixed input) on a fresh
/// graph. Coordinates whose perturbation changes a relu sign or a max-pool
/// winner are skipped and resampled, so kinks never contaminate the result.
pub fn gradient_check<F>(
    store: &mut ParamStore<f64>,
    mut loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let grads = g.backward(loss)?;
    store.accumulate_grads(&g, &grads);
    let base_sig = g.kink_signature();
    drop(g);

    let coords: Vec<(ParamId, usize)> = store
        .trainable()
        .flat_map(|(id, p)| (0..p.tensor.numel()).map(move |i| (id, i)))
        .collect();
    if coords.is_empty() {
        return Err(Error::InvalidArgument(
            "no trainable parameters to check".into(),
        ));
    }
    let mut rng = util::rng(opts.seed);
    let pool = index::sample(&mut rng, coords.len(), coords.len().min(opts.samples * 8));

    let h = opts.step;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    for k in pool.iter() {
        if report.checked == opts.samples {
            break;
        }
        let (id, i) = coords[k];
        let analytic = store.get(id).grad.as_ref().map_or(0.0, |t| t.data()[i]);
        let orig = store.get(id).tensor.data()[i];
        store.get_mut(id).tensor.data_mut()[i] = orig + h;
        let plus = eval(store, &mut loss_fn);
        store.get_mut(id).tensor.data_mut()[i] = orig - h;
        let minus = eval(store, &mut loss_fn);
        store.get_mut(id).tensor.data_mut()[i] = orig;
        let ((lp, sp), (lm, sm)) = (plus?, minus?);
        if sp != base_sig || sm != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        if !analytic.is_finite() || !numeric.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {}[{i}]",
                store.get(id).name
            )));
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(format!("{}[{i}]", store.get(id).name));
        }
    }
    Ok(report)
}

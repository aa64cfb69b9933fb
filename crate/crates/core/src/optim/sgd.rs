use super::Optimizer;
use crate::engine::{ParamStore, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
        }
    }
}

/// One SGD-with-momentum update, elementwise:
/// `v ← μ·v + g`, then `p ← p − lr·v`.
pub fn sgd_momentum_update<T: Scalar>(
    p: &mut [T],
    g: &[T],
    v: &mut [T],
    lr: T,
    momentum: T,
) -> Result<()> {
    if p.len() != g.len() || p.len() != v.len() {
        return Err(Error::Shape(format!(
            "sgd: param {} / grad {} / velocity {} lengths differ",
            p.len(),
            g.len(),
            v.len()
        )));
    }
    for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = momentum * *vi + *gi;
        *pi -= lr * *vi;
    }
    Ok(())
}

/// SGD with momentum over a [`ParamStore`]; velocities start at zero.
#[derive(Clone, Debug)]
pub struct SgdMomentum<T> {
    pub config: SgdConfig,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self, index: usize) -> Option<&Tensor<T>> {
        self.velocity.get(index).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Optimizer<T> for SgdMomentum<T> {
    fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        let (lr, mu) = (T::lit(lr), T::lit(self.config.momentum));
        for (i, p) in store.iter_mut().enumerate() {
            if !p.requires_grad || p.kind != crate::engine::ParamKind::Weight {
                continue;
            }
            let Some(g) = &p.grad else { continue };
            let v = self.velocity[i].get_or_insert_with(|| Tensor::zeros(p.tensor.shape()));
            if v.shape() != p.tensor.shape() {
                return Err(Error::Shape(format!(
                    "velocity for {} has shape {:?}",
                    p.name,
                    v.shape()
                )));
            }
            sgd_momentum_update(p.tensor.data_mut(), g.data(), v.data_mut(), lr, mu)?;
        }
        Ok(())
    }

    fn export_state(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        store
            .iter()
            .filter_map(|(id, p)| {
                self.velocity(id.0)
                    .map(|v| (format!("sgd.velocity.{}", p.name), v.clone()))
            })
            .collect()
    }

    fn import_state(
        &mut self,
        store: &ParamStore<T>,
        entries: &[(String, Tensor<T>)],
    ) -> Result<()> {
        self.velocity = vec![None; store.len()];
        for (name, t) in entries {
            let Some(pname) = name.strip_prefix("sgd.velocity.") else {
                continue;
            };
            let id = store.id(pname).ok_or_else(|| {
                Error::Format(format!("optimizer state for unknown parameter {pname}"))
            })?;
            if store.get(id).tensor.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "velocity for {pname} has shape {:?}",
                    t.shape()
                )));
            }
            self.velocity[id.0] = Some(t.clone());
        }
        Ok(())
    }
}

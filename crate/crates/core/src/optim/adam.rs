use super::Optimizer;
use crate::engine::{ParamKind, ParamStore, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!(
                    "adam {name} = {b} must lie in [0, 1)"
                )));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "adam eps = {} must be > 0",
                self.eps
            )));
        }
        Ok(())
    }
}

/// One Adam update at step `t ≥ 1`:
///
/// ```text
/// m   = β1·m + (1 − β1)·g
/// m_t = m / (1 − β1^t)
/// v   = β2·v + (1 − β2)·g²
/// v_t = v / (1 − β2^t)
/// p  += −lr · m_t / (sqrt(v_t) + eps)
/// ```
///
/// `eps` is added after the square root.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    p: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: T,
    config: &AdamConfig,
) -> Result<()> {
    if p.len() != g.len() || p.len() != m.len() || p.len() != v.len() {
        return Err(Error::Shape(format!(
            "adam: param {} / grad {} / m {} / v {} lengths differ",
            p.len(),
            g.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(Error::InvalidArgument(
            "adam step counter must be >= 1".into(),
        ));
    }
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let eps = T::lit(config.eps);
    let c1 = T::one() - b1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = T::one() - b2.powi(t.min(i32::MAX as u64) as i32);
    for (((pi, gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (T::one() - b1) * *gi;
        let mt = *mi / c1;
        *vi = b2 * *vi + (T::one() - b2) * *gi * *gi;
        let vt = *vi / c2;
        *pi += -lr * mt / (vt.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a [`ParamStore`]. The step counter is shared by all parameters
/// and incremented before each update.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            moments: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments
            .get(index)
            .and_then(Option::as_ref)
            .map(|(m, v)| (m, v))
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        self.step += 1;
        let lr = T::lit(lr);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.requires_grad || p.kind != ParamKind::Weight {
                continue;
            }
            let Some(g) = &p.grad else { continue };
            let (m, v) = self.moments[i].get_or_insert_with(|| {
                (
                    Tensor::zeros(p.tensor.shape()),
                    Tensor::zeros(p.tensor.shape()),
                )
            });
            adam_update(
                p.tensor.data_mut(),
                g.data(),
                m.data_mut(),
                v.data_mut(),
                self.step,
                lr,
                &self.config,
            )?;
        }
        Ok(())
    }

    fn export_state(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![(
            "adam.step".to_string(),
            Tensor::scalar(T::lit(self.step as f64)),
        )];
        for (id, p) in store.iter() {
            if let Some((m, v)) = self.moments(id.0) {
                out.push((format!("adam.m.{}", p.name), m.clone()));
                out.push((format!("adam.v.{}", p.name), v.clone()));
            }
        }
        out
    }

    fn import_state(
        &mut self,
        store: &ParamStore<T>,
        entries: &[(String, Tensor<T>)],
    ) -> Result<()> {
        self.moments = vec![None; store.len()];
        self.step = 0;
        let mut first: Vec<Option<Tensor<T>>> = vec![None; store.len()];
        let mut second: Vec<Option<Tensor<T>>> = vec![None; store.len()];
        for (name, t) in entries {
            if name == "adam.step" {
                self.step = t.item().as_f64() as u64;
                continue;
            }
            let (slot, pname) = if let Some(p) = name.strip_prefix("adam.m.") {
                (&mut first, p)
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                (&mut second, p)
            } else {
                continue;
            };
            let id = store.id(pname).ok_or_else(|| {
                Error::Format(format!("optimizer state for unknown parameter {pname}"))
            })?;
            if store.get(id).tensor.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "adam moment for {pname} has shape {:?}",
                    t.shape()
                )));
            }
            slot[id.0] = Some(t.clone());
        }
        for (i, (m, v)) in first.into_iter().zip(second).enumerate() {
            match (m, v) {
                (Some(m), Some(v)) => self.moments[i] = Some((m, v)),
                (None, None) => {}
                _ => {
                    return Err(Error::Format(format!(
                        "incomplete adam moments for {}",
                        store.get(crate::engine::ParamId(i)).name
                    )))
                }
            }
        }
        Ok(())
    }
}

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Gradients, Graph, Scalar, Tensor};
use crate::{Error, Result};

static NEXT_STORE_UID: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter or buffer inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable weight, subject to `requires_grad`.
    Weight,
    /// Persistent non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub requires_grad: bool,
    pub kind: ParamKind,
}

/// Owns every named tensor of a model.
///
/// Layers keep [`ParamId`]s into the store, so the same architecture can be
/// evaluated against a cast copy (e.g. `f64` for gradient checking).
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    entries: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed),
            entries: self.entries.clone(),
            by_name: self.by_name.clone(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    fn insert(&mut self, name: &str, tensor: Tensor<T>, kind: ParamKind) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(Parameter {
            name: name.to_string(),
            tensor,
            grad: None,
            requires_grad: kind == ParamKind::Weight,
            kind,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn add_param(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        self.insert(name, tensor, ParamKind::Weight)
    }

    pub fn add_buffer(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        self.insert(name, tensor, ParamKind::Buffer)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.entries.iter_mut()
    }

    /// Trainable weights, i.e. kind `Weight` with `requires_grad` set.
    pub fn trainable(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.iter()
            .filter(|(_, p)| p.kind == ParamKind::Weight && p.requires_grad)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad = None;
        }
    }

    /// Sets `requires_grad` on every weight according to `predicate(name)`.
    pub fn set_trainable(&mut self, mut predicate: impl FnMut(&str) -> bool) {
        for p in &mut self.entries {
            if p.kind == ParamKind::Weight {
                p.requires_grad = predicate(&p.name);
                if !p.requires_grad {
                    p.grad = None;
                }
            }
        }
    }

    /// Two distinct entries borrowed mutably at once.
    pub(crate) fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor<T>, &mut Tensor<T>) {
        assert_ne!(a, b);
        if a.0 < b.0 {
            let (lo, hi) = self.entries.split_at_mut(b.0);
            (&mut lo[a.0].tensor, &mut hi[0].tensor)
        } else {
            let (lo, hi) = self.entries.split_at_mut(a.0);
            (&mut hi[0].tensor, &mut lo[b.0].tensor)
        }
    }

    /// Adds the gradients of this store's parameter leaves in `graph` to the
    /// `grad` buffers. Frozen parameters were recorded as constants and are
    /// never touched.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>, grads: &Gradients<T>) {
        for (node, id) in graph.param_leaves(self.uid) {
            let Some(g) = grads.node(node) else { continue };
            let p = &mut self.entries[id.0];
            if !p.requires_grad {
                continue;
            }
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
                None => p.grad = Some(g.clone()),
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed),
            entries: self
                .entries
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    grad: p.grad.as_ref().map(Tensor::cast),
                    requires_grad: p.requires_grad,
                    kind: p.kind,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Copies values for every named entry in `tensors` into the store.
    ///
    /// Unknown names and shape mismatches are collected and reported together.
    pub fn load_named<'a>(
        &mut self,
        tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    ) -> Result<usize> {
        let mut problems = Vec::new();
        let mut updates = Vec::new();
        for (name, t) in tensors {
            match self.id(name) {
                None => problems.push(format!("{name} (not in model)")),
                Some(id) if self.get(id).tensor.shape() != t.shape() => problems.push(format!(
                    "{name} (file {:?}, model {:?})",
                    t.shape(),
                    self.get(id).tensor.shape()
                )),
                Some(id) => updates.push((id, t)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Shape(format!(
                "weight file does not match model: {}",
                problems.join(", ")
            )));
        }
        let n = updates.len();
        for (id, t) in updates {
            self.entries[id.0].tensor = t.clone();
        }
        Ok(n)
    }

    /// Bitwise snapshot of all values, in store order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.entries
            .iter()
            .map(|p| p.tensor.data().to_vec())
            .collect()
    }
}

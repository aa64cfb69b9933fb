use crate::engine::Scalar;
use crate::{Error, Result};

/// Non-negative per-class weights for cross-entropy.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights(Vec<f32>);

impl ClassWeights {
    pub fn new(weights: Vec<f32>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("class weights are empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "class weights must be finite and >= 0: {weights:?}"
            )));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::InvalidArgument(
                "at least one class weight must be > 0".into(),
            ));
        }
        Ok(Self(weights))
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0; num_classes])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A reduced loss, its gradient with respect to the inputs, and the
/// normalizer it was divided by (`N` for MSE, `Σ weight[class]` for
/// cross-entropy) so that batch losses can be re-aggregated exactly.
#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub value: T,
    pub grad: Vec<T>,
    pub normalizer: T,
}

/// `mean((x_n − y_n)²)` with gradient `2(x_n − y_n)/N`.
pub fn mse_loss<T: Scalar>(x: &[T], y: &[T]) -> Result<LossOutput<T>> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "mse_loss: {} predictions vs {} targets",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("mse_loss: empty batch".into()));
    }
    let n = T::lit(x.len() as f64);
    let mut sum = T::zero();
    let mut grad = Vec::with_capacity(x.len());
    for (xi, yi) in x.iter().zip(y) {
        let d = *xi - *yi;
        sum += d * d;
        grad.push(T::lit(2.0) * d / n);
    }
    Ok(LossOutput {
        value: sum / n,
        grad,
        normalizer: n,
    })
}

/// Weighted cross-entropy over row-major `[N, K]` logits.
///
/// Each example contributes `weight[c]·(−log softmax(x)[c])`; the total is
/// divided by `Σ weight[c_n]`. The softmax is computed after subtracting the
/// row maximum.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &[T],
    num_classes: usize,
    classes: &[usize],
    weights: &ClassWeights,
) -> Result<LossOutput<T>> {
    let k = num_classes;
    if k == 0 || logits.len() != classes.len() * k {
        return Err(Error::Shape(format!(
            "cross_entropy_loss: {} logits for {} examples of {k} classes",
            logits.len(),
            classes.len()
        )));
    }
    if classes.is_empty() {
        return Err(Error::InvalidArgument(
            "cross_entropy_loss: empty batch".into(),
        ));
    }
    if weights.len() != k {
        return Err(Error::Shape(format!(
            "cross_entropy_loss: {} class weights for {k} classes",
            weights.len()
        )));
    }
    if let Some(bad) = classes.iter().find(|c| **c >= k) {
        return Err(Error::InvalidArgument(format!(
            "cross_entropy_loss: class index {bad} out of range 0..{k}"
        )));
    }
    let w: Vec<T> = weights
        .as_slice()
        .iter()
        .map(|v| T::lit(*v as f64))
        .collect();
    let norm: T = classes.iter().map(|c| w[*c]).sum();
    if norm <= T::zero() {
        return Err(Error::InvalidArgument(
            "cross_entropy_loss: selected class weights sum to zero".into(),
        ));
    }
    let mut total = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for ((row, grow), &c) in logits.chunks(k).zip(grad.chunks_mut(k)).zip(classes) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|v| (*v - mx).exp()).sum();
        let lse = mx + z.ln();
        total += w[c] * (lse - row[c]);
        for (j, (gj, xj)) in grow.iter_mut().zip(row).enumerate() {
            let p = (*xj - lse).exp();
            let onehot = if j == c { T::one() } else { T::zero() };
            *gj = w[c] * (p - onehot) / norm;
        }
    }
    Ok(LossOutput {
        value: total / norm,
        grad,
        normalizer: norm,
    })
}

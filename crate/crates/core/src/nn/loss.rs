use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CLASS_WEIGHT_MIN: f64 = 0.25;
pub const CLASS_WEIGHT_MAX: f64 = 4.0;

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let k = match logits.shape() {
        [_, k] => *k,
        s => return Err(Error::Shape(format!("softmax expects [B,K], got {s:?}"))),
    };
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|v| (*v - m).exp()).collect();
        let z: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / z));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Per-row `-log softmax(logits)[target]` and softmax probabilities.
fn nll_rows<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<(Vec<T>, Vec<T>, usize)> {
    let (b, k) = match logits.shape() {
        [b, k] => (*b, *k),
        s => return Err(Error::Shape(format!("loss expects [B,K], got {s:?}"))),
    };
    if targets.len() != b {
        return Err(Error::Shape(format!("{} targets for batch {b}", targets.len())));
    }
    if let Some((row, &target)) = targets.iter().enumerate().find(|(_, t)| **t >= k) {
        return Err(Error::InvalidTarget { row, target });
    }
    let mut losses = Vec::with_capacity(b);
    let mut probs = Vec::with_capacity(b * k);
    for (row, &t) in logits.data().chunks_exact(k).zip(targets) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|v| (*v - m).exp()).sum();
        let lse = m + z.ln();
        losses.push(lse - row[t]);
        probs.extend(row.iter().map(|v| (*v - lse).exp()));
    }
    Ok((losses, probs, k))
}

/// Class-weighted cross-entropy with weighted-mean reduction:
/// `sum_i w[y_i] * nll_i / sum_i w[y_i]`. Returns the loss and `dL/dlogits`.
pub fn weighted_softmax_ce<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    weights: &[T],
) -> Result<(T, Tensor<T>)> {
    let (losses, probs, k) = nll_rows(logits, targets)?;
    if weights.len() != k {
        return Err(Error::Shape(format!("{} class weights for {k} classes", weights.len())));
    }
    let wsum: T = targets.iter().map(|t| weights[*t]).sum();
    let loss = losses
        .iter()
        .zip(targets)
        .map(|(l, t)| weights[*t] * *l)
        .sum::<T>()
        / wsum;
    let mut grad = probs;
    for (row, &t) in grad.chunks_exact_mut(k).zip(targets) {
        row[t] -= T::one();
        let s = weights[t] / wsum;
        row.iter_mut().for_each(|g| *g *= s);
    }
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Unweighted mean cross-entropy.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<T> {
    let (losses, _, _) = nll_rows(logits, targets)?;
    let n = T::from_usize(losses.len()).expect("batch");
    Ok(losses.into_iter().sum::<T>() / n)
}

/// Inverse-frequency class weights `N / (K n_c)`, clamped to
/// `[CLASS_WEIGHT_MIN, CLASS_WEIGHT_MAX]`. Absent classes get the maximum.
pub fn compute_class_weights(counts: &[usize]) -> Result<Vec<f32>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("class counts are all zero"));
    }
    let k = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&n| {
            if n == 0 {
                CLASS_WEIGHT_MAX as f32
            } else {
                (total as f64 / (k * n as f64)).clamp(CLASS_WEIGHT_MIN, CLASS_WEIGHT_MAX) as f32
            }
        })
        .collect())
}

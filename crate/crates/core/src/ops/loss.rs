//! Softmax cross-entropy over per-pixel class logits.

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Mean `-log softmax(logits)[label]` over pixels whose label is not `ignore`,
/// plus the gradient of that mean w.r.t. the logits.
///
/// `logits` is `[N, C, ...spatial]`; `labels` has `N * prod(spatial)` entries.
/// When every pixel is ignored the loss and gradient are zero.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[u16], ignore: u16) -> Result<(T, Tensor<T>)> {
    if logits.rank() < 2 {
        return Err(shape_err!("cross-entropy logits need [N, C, ...], got {:?}", logits.shape()));
    }
    let s = logits.shape();
    let (n, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    if labels.len() != n * inner {
        return Err(shape_err!("{} labels for logits {:?}", labels.len(), s));
    }
    if let Some(bad) = labels.iter().find(|&&l| l != ignore && l as usize >= c) {
        return Err(shape_err!("label {bad} outside [0, {c}) and not the ignore value {ignore}"));
    }
    let count = labels.iter().filter(|&&l| l != ignore).count();
    let mut grad = vec![T::zero(); logits.numel()];
    if count == 0 {
        return Ok((T::zero(), Tensor::new(s.to_vec(), grad)?));
    }
    let inv = 1.0 / count as f64;
    let x = logits.data();
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; c];
    for b in 0..n {
        for p in 0..inner {
            let label = labels[b * inner + p];
            if label == ignore {
                continue;
            }
            let at = |k: usize| (b * c + k) * inner + p;
            let max = (0..c).map(|k| x[at(k)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (k, pk) in probs.iter_mut().enumerate() {
                *pk = (x[at(k)].as_f64() - max).exp();
                z += *pk;
            }
            total += z.ln() + max - x[at(label as usize)].as_f64();
            for (k, pk) in probs.iter().enumerate() {
                let onehot = if k == label as usize { 1.0 } else { 0.0 };
                grad[at(k)] = T::from_f64((pk / z - onehot) * inv);
            }
        }
    }
    Ok((T::from_f64(total * inv), Tensor::new(s.to_vec(), grad)?))
}

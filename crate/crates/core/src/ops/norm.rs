//! Per-channel batch normalization over batch and spatial axes.

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    /// Normalized input `(x - mean) * inv_std`.
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// True when batch statistics were used (gradient flows through them).
    pub batch_stats: bool,
}

/// Channel statistics observed in a training-mode pass.
#[derive(Clone, Debug)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running estimates.
    pub var_unbiased: Vec<T>,
}

fn dims<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(shape_err!("batchnorm needs at least [N, C], got {:?}", x.shape()));
    }
    let s = x.shape();
    Ok((s[0], s[1], s[2..].iter().product()))
}

pub fn forward_train<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>, BatchMoments<T>)> {
    let (n, c, inner) = dims(x)?;
    if gamma.len() != c || beta.len() != c {
        return Err(shape_err!("batchnorm over {c} channels given {} scales", gamma.len()));
    }
    let m = n * inner;
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for b in 0..n {
            s += xd[(b * c + ch) * inner..(b * c + ch + 1) * inner].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = s / m as f64;
        let mut q = 0.0f64;
        for b in 0..n {
            q += xd[(b * c + ch) * inner..(b * c + ch + 1) * inner]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = T::from_f64(mu);
        var[ch] = T::from_f64(q / m as f64);
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt())).collect();
    let (y, xhat) = apply(x, n, c, inner, &mean, &inv_std, gamma, beta)?;
    let correction = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
    let var_unbiased = var.iter().map(|&v| T::from_f64(v.as_f64() * correction)).collect();
    Ok((y, BnCache { xhat, inv_std, batch_stats: true }, BatchMoments { mean, var_unbiased }))
}

pub fn forward_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, inner) = dims(x)?;
    if gamma.len() != c || running_mean.len() != c {
        return Err(shape_err!("batchnorm over {c} channels given {} statistics", running_mean.len()));
    }
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt())).collect();
    let (y, xhat) = apply(x, n, c, inner, running_mean, &inv_std, gamma, beta)?;
    Ok((y, BnCache { xhat, inv_std, batch_stats: false }))
}

#[allow(clippy::too_many_arguments)]
fn apply<T: Real>(
    x: &Tensor<T>,
    n: usize,
    c: usize,
    inner: usize,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut y = Vec::with_capacity(x.numel());
    let mut xhat = Vec::with_capacity(x.numel());
    for b in 0..n {
        for ch in 0..c {
            let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for &v in &x.data()[(b * c + ch) * inner..(b * c + ch + 1) * inner] {
                let h = (v - mu) * is;
                xhat.push(h);
                y.push(g * h + bt);
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), y)?, Tensor::new(x.shape().to_vec(), xhat)?))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn backward<T: Real>(cache: &BnCache<T>, gamma: &[T], dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (n, c, inner) = dims(dy)?;
    let m = T::from_usize(n * inner);
    let xh = cache.xhat.data();
    let g = dy.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
            for (&gy, &h) in g[r.clone()].iter().zip(&xh[r]) {
                dgamma[ch] += gy * h;
                dbeta[ch] += gy;
            }
        }
    }
    let mut dx = Vec::with_capacity(dy.numel());
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
            let scale = gamma[ch] * cache.inv_std[ch];
            if cache.batch_stats {
                let (sg, sgh) = (dbeta[ch] / m, dgamma[ch] / m);
                for (&gy, &h) in g[r.clone()].iter().zip(&xh[r]) {
                    dx.push(scale * (gy - sg - h * sgh));
                }
            } else {
                dx.extend(g[r].iter().map(|&gy| scale * gy));
            }
        }
    }
    Ok((Tensor::new(dy.shape().to_vec(), dx)?, dgamma, dbeta))
}

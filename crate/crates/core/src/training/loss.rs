use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{config_err, Result};
use crate::models::upsample_heads;
use crate::ops::BoxPool;
use crate::raster::NO_DATA;
use crate::tensor::Real;

/// Deep-supervision weights of the coarse loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the averaged-heads path.
    #[serde(default = "one")]
    pub averaged: f64,
    /// Weight of each individual head's auxiliary loss.
    #[serde(default = "quarter")]
    pub head: f64,
    /// Optional per-head override, coarsest head first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_head: Vec<f64>,
}

fn one() -> f64 {
    1.0
}
fn quarter() -> f64 {
    0.25
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { averaged: 1.0, head: 0.25, per_head: Vec::new() }
    }
}

impl LossWeights {
    pub fn head_weight(&self, i: usize) -> f64 {
        self.per_head.get(i).copied().unwrap_or(self.head)
    }

    pub fn validate(&self, heads: usize) -> Result<()> {
        if !self.per_head.is_empty() && self.per_head.len() != heads {
            return Err(config_err!("{} per-head weights for {heads} heads", self.per_head.len()));
        }
        let all = std::iter::once(self.averaged).chain((0..heads).map(|i| self.head_weight(i)));
        if all.clone().any(|w| !w.is_finite() || w < 0.0) {
            return Err(config_err!("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Graph nodes produced by [`loss_multiscale`].
#[derive(Clone, Copy, Debug)]
pub struct MultiscaleLoss {
    pub loss: Var,
    /// Averaged heads pooled onto the label grid, `[N, C, cells.0, cells.1]`.
    pub pooled: Var,
}

/// Heads are bilinearly brought to the input resolution and averaged; the
/// average, and each head on its own, is box-pooled onto the label cells and
/// scored against `labels` (no-data ignored). The weighted sum is returned.
pub fn loss_multiscale<T: Real>(
    g: &mut Graph<'_, T>,
    heads: &[Var],
    input_hw: (usize, usize),
    pool: BoxPool,
    labels: &[u16],
    weights: &LossWeights,
) -> Result<MultiscaleLoss> {
    weights.validate(heads.len())?;
    let ups = upsample_heads(g, heads, input_hw)?;
    let avg = g.mean_of(&ups)?;
    let pooled = g.box_pool(avg, pool)?;
    let base = g.softmax_cross_entropy(pooled, labels, NO_DATA)?;
    let mut loss = g.scale(base, T::from_f64(weights.averaged))?;
    for (i, &u) in ups.iter().enumerate() {
        let w = weights.head_weight(i);
        if w == 0.0 {
            continue;
        }
        let p = g.box_pool(u, pool)?;
        let l = g.softmax_cross_entropy(p, labels, NO_DATA)?;
        let l = g.scale(l, T::from_f64(w))?;
        loss = g.add(loss, l)?;
    }
    Ok(MultiscaleLoss { loss, pooled })
}

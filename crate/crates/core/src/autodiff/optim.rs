//! In-place first-order optimizers over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn build<T: Real>(&self) -> Optimizer<T> {
        match *self {
            OptimizerConfig::Sgd { lr, momentum } => Optimizer::Sgd(Sgd::new(lr, momentum)),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => Optimizer::Adam(Adam::new(lr, beta1, beta2, eps)),
        }
    }
}

pub enum Optimizer<T> {
    Sgd(Sgd<T>),
    Adam(Adam<T>),
}

impl<T: Real> Optimizer<T> {
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(store, grads),
            Optimizer::Adam(o) => o.step(store, grads),
        }
    }
}

fn check<T: Real>(store: &ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
    if grads.len() != store.len() {
        return Err(shape_err!("{} gradients for {} parameters", grads.len(), store.len()));
    }
    for (id, g) in store.ids().zip(grads) {
        if let Some(g) = g {
            if g.shape() != store.tensor(id).shape() {
                return Err(shape_err!("gradient {:?} for parameter {:?}", g.shape(), store.tensor(id).shape()));
            }
        }
    }
    Ok(())
}

/// Momentum SGD: `v = momentum * v + g; p -= lr * v`.
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        check(store, grads)?;
        self.velocity.resize(store.len(), None);
        let (lr, mu) = (T::from_f64(self.lr), T::from_f64(self.momentum));
        for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let v = self.velocity[id.index()].get_or_insert_with(|| vec![T::zero(); g.numel()]);
            for ((p, vi), &gi) in store.tensor_mut(id).data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vi = mu * *vi + gi;
                *p -= lr * *vi;
            }
        }
        Ok(())
    }
}

/// Adaptive-moment estimation with bias correction.
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, t: 0, moments: Vec::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        check(store, grads)?;
        self.moments.resize(store.len(), None);
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = T::from_f64(self.lr * c2.sqrt() / c1);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let eps = T::from_f64(self.eps * c2.sqrt());
        for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (vec![T::zero(); g.numel()], vec![T::zero(); g.numel()]));
            let p = store.tensor_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}

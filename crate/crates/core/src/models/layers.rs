//! Parameterized building blocks shared by the architectures.

use rand::Rng;

use crate::autodiff::{BnParams, Graph, ParamKind, ParamStore, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Allocates and initializes parameters in a fixed order.
pub struct Builder<'a, T, R> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    /// 2D convolution `cin -> cout` with a square odd kernel, He-uniform weights, zero bias.
    pub fn conv2d(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, pad: usize) -> Result<Conv> {
        self.conv(name, vec![cout, cin, kernel, kernel], ConvKind::Planar { pad })
    }

    pub fn conv3d(&mut self, name: &str, cin: usize, cout: usize, kernel: [usize; 3], pad: [usize; 3]) -> Result<Conv> {
        self.conv(name, vec![cout, cin, kernel[0], kernel[1], kernel[2]], ConvKind::Volumetric { pad })
    }

    fn conv(&mut self, name: &str, shape: Vec<usize>, kind: ConvKind) -> Result<Conv> {
        let fan_in: usize = shape[1..].iter().product();
        let bound = (6.0 / fan_in as f64).sqrt();
        let cout = shape[0];
        let weight = self.store.add(format!("{name}.weight"), ParamKind::Weight, Tensor::uniform(shape, bound, self.rng))?;
        let bias = self.store.add(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(vec![cout]))?;
        Ok(Conv { weight, bias, kind, cout })
    }

    pub fn batchnorm(&mut self, name: &str, channels: usize) -> Result<BnParams> {
        Ok(BnParams {
            gamma: self.store.add(format!("{name}.gamma"), ParamKind::Gamma, Tensor::full(vec![channels], T::one()))?,
            beta: self.store.add(format!("{name}.beta"), ParamKind::Beta, Tensor::zeros(vec![channels]))?,
            running_mean: self.store.add(
                format!("{name}.running_mean"),
                ParamKind::RunningMean,
                Tensor::zeros(vec![channels]),
            )?,
            running_var: self.store.add(
                format!("{name}.running_var"),
                ParamKind::RunningVar,
                Tensor::full(vec![channels], T::one()),
            )?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub enum ConvKind {
    Planar { pad: usize },
    Volumetric { pad: [usize; 3] },
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: crate::autodiff::ParamId,
    pub bias: crate::autodiff::ParamId,
    pub kind: ConvKind,
    pub cout: usize,
}

impl Conv {
    pub fn apply<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        match self.kind {
            ConvKind::Planar { pad } => g.conv2d(x, w, b, 1, pad),
            ConvKind::Volumetric { pad } => g.conv3d(x, w, b, [1, 1, 1], pad),
        }
    }
}

pub fn bn_apply<T: Real>(g: &mut Graph<'_, T>, p: BnParams, x: Var) -> Result<Var> {
    g.batchnorm(x, p, BN_EPS, BN_MOMENTUM)
}

/// Batchnorm -> ReLU -> convolution.
#[derive(Clone, Copy, Debug)]
pub struct PreActConv {
    pub bn: BnParams,
    pub conv: Conv,
}

impl PreActConv {
    pub fn apply<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = bn_apply(g, self.bn, x)?;
        let h = g.relu(h)?;
        self.conv.apply(g, h)
    }
}

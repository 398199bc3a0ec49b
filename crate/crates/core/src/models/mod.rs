//! Architecture builders, parameter accounting and receptive-field bookkeeping.

pub mod config;
pub mod densenet;
pub mod layers;
pub mod segnet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{counterpart_2d, preset, DenseNetConfig, ModelConfig, SegNetConfig, VggStage, PRESETS};
pub use densenet::{DenseBlock, DenseNet};
pub use segnet::SegNet;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::Result;
use crate::ops::Interp;
use crate::tensor::Real;
use layers::Builder;

#[derive(Clone, Debug)]
pub enum Network {
    DenseNet(DenseNet),
    SegNet(SegNet),
}

/// A built architecture together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub network: Network,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Builds the architecture; identical seeds give identical initial parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { store: &mut params, rng: &mut rng };
        let network = match config {
            ModelConfig::DenseNet(c) => Network::DenseNet(DenseNet::build(c, &mut b)?),
            ModelConfig::SegNet(c) => Network::SegNet(SegNet::build(c, &mut b)?),
        };
        Ok(Self { config: config.clone(), network, params })
    }

    /// Logits per output head: a single full-resolution map for DenseNets,
    /// coarsest-first per-scale maps for SegNet.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Vec<Var>> {
        match &self.network {
            Network::DenseNet(n) => Ok(vec![n.forward(g, x)?]),
            Network::SegNet(n) => n.forward(g, x),
        }
    }

    /// Heads brought to the input resolution (bilinear) and averaged:
    /// the map the multiscale loss and coarse prediction operate on.
    pub fn fused_logits(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let heads = self.forward(g, x)?;
        let s = g.shape(x);
        fuse_heads(g, &heads, (s[2], s[3]))
    }

    /// Output stride of every head relative to the input.
    pub fn head_strides(&self) -> Vec<usize> {
        match &self.network {
            Network::DenseNet(_) => vec![1],
            Network::SegNet(n) => n.head_strides(),
        }
    }

    pub fn count_parameters(&self) -> usize {
        count_parameters(self)
    }

    pub fn scales(&self) -> usize {
        self.config.scales()
    }

    pub fn input_multiple(&self) -> usize {
        match &self.network {
            Network::DenseNet(n) => n.input_multiple(),
            Network::SegNet(n) => n.input_multiple(),
        }
    }

    /// Whether inputs must be padded to [`Model::input_multiple`].
    pub fn requires_aligned_input(&self) -> bool {
        matches!(self.network, Network::SegNet(_))
    }

    pub fn receptive_radius(&self) -> usize {
        match &self.network {
            Network::DenseNet(n) => n.receptive_radius(),
            Network::SegNet(n) => n.receptive_radius(),
        }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config.clone(), network: self.network.clone(), params: self.params.cast() }
    }
}

/// Upsamples every head to `size` and averages them.
pub fn fuse_heads<T: Real>(g: &mut Graph<'_, T>, heads: &[Var], size: (usize, usize)) -> Result<Var> {
    let ups = upsample_heads(g, heads, size)?;
    g.mean_of(&ups)
}

/// Bilinear upsampling of each head to `size`; heads already there pass through.
pub fn upsample_heads<T: Real>(g: &mut Graph<'_, T>, heads: &[Var], size: (usize, usize)) -> Result<Vec<Var>> {
    heads
        .iter()
        .map(|&h| {
            let s = g.shape(h);
            if (s[2], s[3]) == size {
                Ok(h)
            } else {
                g.upsample(h, size, Interp::Bilinear)
            }
        })
        .collect()
}

/// Learned scalars of all convolutions (weights and biases) and batchnorm scale/shift.
pub fn count_parameters<T: Real>(model: &Model<T>) -> usize {
    model.params.count_trainable()
}

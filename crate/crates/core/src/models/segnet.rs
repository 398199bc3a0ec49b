//! Multiscale SegNet: VGG-16 encoder with recorded pooling indices, mirrored
//! unpooling decoder, and a 1x1 label head after each selected decoder block.

use rand::Rng;

use super::config::SegNetConfig;
use super::layers::{bn_apply, Builder, Conv};
use crate::autodiff::{BnParams, Graph, Var};
use crate::error::{config_err, Error, Result};
use crate::tensor::Real;

/// Convolution -> batchnorm -> ReLU.
#[derive(Clone, Copy, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BnParams,
}

impl ConvBnRelu {
    fn build<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self { conv: b.conv2d(&format!("{name}.conv"), cin, cout, 3, 1)?, bn: b.batchnorm(&format!("{name}.bn"), cout)? })
    }

    fn apply<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv.apply(g, x)?;
        let h = bn_apply(g, self.bn, h)?;
        g.relu(h)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub stride: usize,
    pub convs: Vec<ConvBnRelu>,
    pub head: Option<Conv>,
}

#[derive(Clone, Debug)]
pub struct SegNet {
    pub config: SegNetConfig,
    pub encoder: Vec<Vec<ConvBnRelu>>,
    /// Deepest block first.
    pub decoder: Vec<DecoderBlock>,
}

impl SegNet {
    pub fn build<T: Real, R: Rng>(cfg: &SegNetConfig, b: &mut Builder<'_, T, R>) -> Result<Self> {
        cfg.validate()?;
        let plan = &cfg.encoder_plan;
        let mut encoder = Vec::with_capacity(plan.len());
        let mut c = cfg.input_bands;
        for (s, stage) in plan.iter().enumerate() {
            let mut convs = Vec::with_capacity(stage.convs);
            for k in 0..stage.convs {
                convs.push(ConvBnRelu::build(b, &format!("enc{s}.{k}"), c, stage.channels)?);
                c = stage.channels;
            }
            encoder.push(convs);
        }
        let strides = cfg.decoder_strides();
        let mut decoder = Vec::with_capacity(plan.len());
        for (i, s) in (0..plan.len()).rev().enumerate() {
            let stage = plan[s];
            let out_last = if s > 0 { plan[s - 1].channels } else { plan[0].channels };
            if c != stage.channels {
                return Err(Error::Build {
                    block: format!("dec{s}"),
                    msg: format!("unpooled {c} channels, stage expects {}", stage.channels),
                });
            }
            let mut convs = Vec::with_capacity(stage.convs);
            for k in 0..stage.convs {
                let cout = if k + 1 == stage.convs { out_last } else { stage.channels };
                convs.push(ConvBnRelu::build(b, &format!("dec{s}.{k}"), c, cout)?);
                c = cout;
            }
            let stride = strides[i];
            let head = if cfg.head_scales.contains(&stride) {
                Some(b.conv2d(&format!("head{s}"), c, cfg.num_classes, 1, 0)?)
            } else {
                None
            };
            decoder.push(DecoderBlock { stride, convs, head });
        }
        Ok(Self { config: cfg.clone(), encoder, decoder })
    }

    pub fn input_multiple(&self) -> usize {
        1 << self.config.encoder_plan.len()
    }

    /// Per-head logits, coarsest (stride 16) first.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Vec<Var>> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.config.input_bands {
            return Err(config_err!("SegNet expects [N, {}, H, W], got {s:?}", self.config.input_bands));
        }
        let m = self.input_multiple();
        if s[2] % m != 0 || s[3] % m != 0 {
            return Err(Error::InputSize(format!(
                "SegNet input extents {}x{} must be divisible by {m} to survive {} pooling halvings",
                s[2],
                s[3],
                self.config.encoder_plan.len()
            )));
        }
        let mut cur = x;
        let mut maps = Vec::with_capacity(self.encoder.len());
        for stage in &self.encoder {
            for layer in stage {
                cur = layer.apply(g, cur)?;
            }
            let (pooled, map) = g.maxpool2d(cur)?;
            maps.push(map);
            cur = pooled;
        }
        let mut heads = Vec::new();
        for block in &self.decoder {
            let map = maps.pop().expect("one index map per stage");
            cur = g.max_unpool2d(cur, &map)?;
            for layer in &block.convs {
                cur = layer.apply(g, cur)?;
            }
            if let Some(head) = &block.head {
                heads.push(head.apply(g, cur)?);
            }
        }
        Ok(heads)
    }

    /// Strides of the emitted heads, in output order.
    pub fn head_strides(&self) -> Vec<usize> {
        self.decoder.iter().filter(|d| d.head.is_some()).map(|d| d.stride).collect()
    }

    pub fn receptive_radius(&self) -> usize {
        let mut r = 0;
        let mut jump = 1;
        for stage in &self.config.encoder_plan {
            r += stage.convs * jump + jump;
            jump *= 2;
        }
        for stage in self.config.encoder_plan.iter().rev() {
            r += jump;
            jump /= 2;
            r += stage.convs * jump;
        }
        r
    }
}

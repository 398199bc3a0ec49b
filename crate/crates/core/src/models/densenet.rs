//! Fully convolutional DenseNet (2D) and its variant with a 3D spectral-spatial first block.

use rand::Rng;

use super::config::DenseNetConfig;
use super::layers::{Builder, Conv, PreActConv};
use crate::autodiff::{Graph, Var};
use crate::error::{config_err, Error, Result};
use crate::ops::Interp;
use crate::tensor::Real;

/// Layers that each see the concatenation of the block input and all earlier layer outputs.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub name: String,
    pub layers: Vec<PreActConv>,
    pub in_channels: usize,
    pub growth: usize,
}

impl DenseBlock {
    fn build<T: Real, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        in_channels: usize,
        layers: usize,
        growth: usize,
        volumetric: bool,
    ) -> Result<Self> {
        let mut c = in_channels;
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let lname = format!("{name}.layer{l}");
            let bn = b.batchnorm(&format!("{lname}.bn"), c)?;
            let conv = if volumetric {
                b.conv3d(&format!("{lname}.conv"), c, growth, [3, 3, 3], [1, 1, 1])?
            } else {
                b.conv2d(&format!("{lname}.conv"), c, growth, 3, 1)?
            };
            out.push(PreActConv { bn, conv });
            c += growth;
        }
        let block = Self { name: name.to_string(), layers: out, in_channels, growth };
        if c != block.out_channels() {
            return Err(Error::Build { block: name.into(), msg: format!("tracked {c} channels, expected {}", block.out_channels()) });
        }
        Ok(block)
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.layers.len() * self.growth
    }

    pub fn new_channels(&self) -> usize {
        self.layers.len() * self.growth
    }

    /// Returns `(full, new)`: the concatenated block output and the
    /// concatenation of only the features produced inside the block.
    pub fn apply<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Var)> {
        let cin = g.shape(x)[1];
        if cin != self.in_channels {
            return Err(Error::Build {
                block: self.name.clone(),
                msg: format!("received {cin} channels, built for {}", self.in_channels),
            });
        }
        let mut feats = vec![x];
        let mut produced = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            let h = layer.apply(g, cur)?;
            produced.push(h);
            feats.push(h);
            cur = g.concat_channels(&feats)?;
        }
        let new = if produced.len() == 1 { produced[0] } else { g.concat_channels(&produced)? };
        let cout = g.shape(cur)[1];
        if cout != self.out_channels() {
            return Err(Error::Build {
                block: self.name.clone(),
                msg: format!("produced {cout} channels, expected {}", self.out_channels()),
            });
        }
        Ok((cur, new))
    }
}

/// Entry of the network: a 2D stem, or the 3D dense block followed by the spectral squeeze.
#[derive(Clone, Debug)]
pub enum Front {
    Stem(Conv),
    Spectral { block: DenseBlock, squeeze: PreActConv },
}

#[derive(Clone, Debug)]
pub struct DenseNet {
    pub config: DenseNetConfig,
    pub front: Front,
    /// One per encoder scale; `None` where the 3D front already played the block's role.
    pub encoder: Vec<Option<DenseBlock>>,
    /// Batchnorm -> ReLU -> 1x1 conv (channel preserving), followed by 2x2 max pooling.
    pub transitions_down: Vec<PreActConv>,
    pub bottleneck: DenseBlock,
    /// Plain 3x3 convolution applied after nearest 2x upsampling.
    pub transitions_up: Vec<Conv>,
    pub decoder: Vec<DenseBlock>,
    pub head: Conv,
}

impl DenseNet {
    pub fn build<T: Real, R: Rng>(cfg: &DenseNetConfig, b: &mut Builder<'_, T, R>) -> Result<Self> {
        cfg.validate()?;
        let g = cfg.growth;
        let mut encoder = Vec::new();
        let mut transitions_down = Vec::new();
        let mut skips = Vec::new();

        let (front, mut c) = if cfg.first_block_3d {
            let block = DenseBlock::build(b, "enc0", 1, cfg.encoder_blocks[0], g, true)?;
            let depth = cfg.input_bands;
            let bn = b.batchnorm("squeeze.bn", block.out_channels())?;
            let conv = b.conv3d("squeeze.conv", block.out_channels(), cfg.squeeze_filters, [depth, 3, 3], [0, 1, 1])?;
            (Front::Spectral { block, squeeze: PreActConv { bn, conv } }, cfg.squeeze_filters)
        } else {
            (Front::Stem(b.conv2d("stem", cfg.input_bands, cfg.stem_filters, 3, 1)?), cfg.stem_filters)
        };

        for (i, &layers) in cfg.encoder_blocks.iter().enumerate() {
            if i == 0 && cfg.first_block_3d {
                encoder.push(None);
            } else {
                let block = DenseBlock::build(b, &format!("enc{i}"), c, layers, g, false)?;
                c = block.out_channels();
                encoder.push(Some(block));
            }
            skips.push(c);
            let bn = b.batchnorm(&format!("down{i}.bn"), c)?;
            let conv = b.conv2d(&format!("down{i}.conv"), c, c, 1, 0)?;
            transitions_down.push(PreActConv { bn, conv });
        }

        let bottleneck = DenseBlock::build(b, "bottleneck", c, cfg.bottleneck_layers, g, false)?;
        let mut new = bottleneck.new_channels();
        let mut full = bottleneck.out_channels();

        let mut transitions_up = Vec::new();
        let mut decoder = Vec::new();
        for (j, &layers) in cfg.decoder_blocks.iter().enumerate() {
            let skip = skips[skips.len() - 1 - j];
            transitions_up.push(b.conv2d(&format!("up{j}"), new, new, 3, 1)?);
            let block = DenseBlock::build(b, &format!("dec{j}"), new + skip, layers, g, false)?;
            new = block.new_channels();
            full = block.out_channels();
            decoder.push(block);
        }
        let head = b.conv2d("head", full, cfg.num_classes, 1, 0)?;
        Ok(Self { config: cfg.clone(), front, encoder, transitions_down, bottleneck, transitions_up, decoder, head })
    }

    /// Full-resolution class logits `[N, classes, H, W]` for input `[N, bands, H, W]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 {
            return Err(config_err!("DenseNet input must be [N, bands, H, W], got {s:?}"));
        }
        if s[1] != self.config.input_bands {
            return Err(config_err!(
                "model expects {} spectral bands, input has {}",
                self.config.input_bands,
                s[1]
            ));
        }
        let (n, h, w) = (s[0], s[2], s[3]);
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut cur = match &self.front {
            Front::Stem(conv) => conv.apply(g, x)?,
            Front::Spectral { .. } => x,
        };
        for (i, (block, down)) in self.encoder.iter().zip(&self.transitions_down).enumerate() {
            let out = match (block, &self.front) {
                (Some(block), _) => block.apply(g, cur)?.0,
                (None, Front::Spectral { block, squeeze }) if i == 0 => {
                    let vol = g.reshape(cur, vec![n, 1, s[1], h, w])?;
                    let (full, _) = block.apply(g, vol)?;
                    let squeezed = squeeze.apply(g, full)?;
                    let ss = g.shape(squeezed).to_vec();
                    if ss[2] != 1 {
                        return Err(Error::Build { block: "squeeze".into(), msg: format!("spectral depth {} left", ss[2]) });
                    }
                    g.reshape(squeezed, vec![n, ss[1], h, w])?
                }
                _ => return Err(Error::Build { block: format!("enc{i}"), msg: "missing dense block".into() }),
            };
            skips.push(out);
            let t = down.apply(g, out)?;
            cur = g.maxpool2d(t)?.0;
        }
        let (_, mut new) = self.bottleneck.apply(g, cur)?;
        let mut full = new;
        for (j, (up, block)) in self.transitions_up.iter().zip(&self.decoder).enumerate() {
            let skip = skips[skips.len() - 1 - j];
            let ss = g.shape(skip).to_vec();
            let u = g.upsample(new, (ss[2], ss[3]), Interp::Nearest)?;
            let u = up.apply(g, u)?;
            let cat = g.concat_channels(&[u, skip])?;
            (full, new) = block.apply(g, cat)?;
        }
        self.head.apply(g, full)
    }

    /// Spatial input extents must be multiples of this for exact pooling alignment.
    pub fn input_multiple(&self) -> usize {
        1 << self.config.encoder_blocks.len()
    }

    /// Radius (input pixels) beyond which input values cannot influence an output pixel.
    pub fn receptive_radius(&self) -> usize {
        let cfg = &self.config;
        let mut r = 0usize;
        let mut jump = 1usize;
        r += if cfg.first_block_3d { cfg.encoder_blocks[0] + 1 } else { 1 };
        for (i, &l) in cfg.encoder_blocks.iter().enumerate() {
            if !(i == 0 && cfg.first_block_3d) {
                r += l * jump;
            }
            r += jump;
            jump *= 2;
        }
        r += cfg.bottleneck_layers * jump;
        for &l in &cfg.decoder_blocks {
            r += jump;
            jump /= 2;
            r += jump + l * jump;
        }
        r
    }

    /// Spectral receptive field (in bands) after `layers` 3x3x3 layers.
    pub fn spectral_receptive_field(layers: usize) -> usize {
        1 + 2 * layers
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Encoder/decoder DenseNet description: `e[..]`, `b[..]`, `d[..]` layer counts and growth `g`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    pub encoder_blocks: Vec<usize>,
    pub bottleneck_layers: usize,
    pub decoder_blocks: Vec<usize>,
    pub growth: usize,
    /// Width of the initial 3x3 convolution (absent in the 3D variant).
    pub stem_filters: usize,
    /// Replace stem + first encoder block with a 3D spectral-spatial dense block.
    pub first_block_3d: bool,
    pub input_bands: usize,
    pub num_classes: usize,
    /// Output channels of the spectral squeeze convolution (3D variant only).
    #[serde(default = "default_squeeze")]
    pub squeeze_filters: usize,
}

fn default_squeeze() -> usize {
    32
}

/// Number of spectral bands a 3D first block is designed for: four 3x3x3
/// layers grow the spectral receptive field to 1 + 2*4 = 9.
pub const SPECTRAL_DEPTH_3D: usize = 9;

impl DenseNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_blocks.is_empty() {
            return Err(config_err!("DenseNet needs at least one encoder block"));
        }
        let mirrored: Vec<usize> = self.encoder_blocks.iter().rev().copied().collect();
        if self.decoder_blocks != mirrored {
            return Err(config_err!(
                "decoder blocks {:?} must mirror encoder blocks {:?}",
                self.decoder_blocks,
                self.encoder_blocks
            ));
        }
        if self.growth == 0 {
            return Err(config_err!("growth rate must be positive"));
        }
        if self.encoder_blocks.iter().chain(&[self.bottleneck_layers]).any(|&l| l == 0) {
            return Err(config_err!("every dense block needs at least one layer"));
        }
        if self.num_classes < 2 {
            return Err(config_err!("need at least two classes, got {}", self.num_classes));
        }
        if self.first_block_3d {
            if self.input_bands != SPECTRAL_DEPTH_3D {
                return Err(config_err!(
                    "3D DenseNet expects {SPECTRAL_DEPTH_3D} spectral bands (B1..B8a), got {}",
                    self.input_bands
                ));
            }
            if self.squeeze_filters == 0 {
                return Err(config_err!("squeeze width must be positive"));
            }
        } else if self.stem_filters == 0 || self.input_bands == 0 {
            return Err(config_err!("stem width and band count must be positive"));
        }
        Ok(())
    }

    /// Encoder blocks plus the bottleneck.
    pub fn scales(&self) -> usize {
        self.encoder_blocks.len() + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VggStage {
    pub convs: usize,
    pub channels: usize,
}

/// VGG-16 stage plan: (2, 2, 3, 3, 3) convolutions of (64, 128, 256, 512, 512) channels.
pub fn vgg16_plan() -> Vec<VggStage> {
    [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)]
        .into_iter()
        .map(|(convs, channels)| VggStage { convs, channels })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegNetConfig {
    pub input_bands: usize,
    pub num_classes: usize,
    #[serde(default = "vgg16_plan")]
    pub encoder_plan: Vec<VggStage>,
    /// Output strides (relative to the input) of decoder blocks that emit label heads.
    #[serde(default = "all_head_strides")]
    pub head_scales: Vec<usize>,
}

fn all_head_strides() -> Vec<usize> {
    vec![16, 8, 4, 2, 1]
}

impl SegNetConfig {
    pub fn new(input_bands: usize, num_classes: usize) -> Self {
        Self { input_bands, num_classes, encoder_plan: vgg16_plan(), head_scales: all_head_strides() }
    }

    /// Output stride after each decoder block, coarsest first.
    pub fn decoder_strides(&self) -> Vec<usize> {
        let n = self.encoder_plan.len();
        (0..n).map(|i| 1usize << (n - 1 - i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_plan.is_empty() || self.encoder_plan.iter().any(|s| s.convs == 0 || s.channels == 0) {
            return Err(config_err!("SegNet encoder plan must have non-empty stages"));
        }
        if self.input_bands == 0 || self.num_classes < 2 {
            return Err(config_err!("SegNet needs bands > 0 and at least two classes"));
        }
        let strides = self.decoder_strides();
        if self.head_scales.is_empty() {
            return Err(config_err!("SegNet needs at least one label head"));
        }
        if let Some(s) = self.head_scales.iter().find(|s| !strides.contains(s)) {
            return Err(config_err!("head stride {s} is not a decoder scale (available {strides:?})"));
        }
        Ok(())
    }

    pub fn scales(&self) -> usize {
        self.encoder_plan.len()
    }
}

/// Decoder strides whose estimate is finer than the ground truth
/// (`stride * input_res < label_res`), coarsest first.
pub fn strides_finer_than(strides: &[usize], input_resolution_m: f64, label_resolution_m: f64) -> Vec<usize> {
    strides.iter().copied().filter(|&s| s as f64 * input_resolution_m < label_resolution_m).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelConfig {
    DenseNet(DenseNetConfig),
    SegNet(SegNetConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::DenseNet(c) => c.validate(),
            ModelConfig::SegNet(c) => c.validate(),
        }
    }

    pub fn input_bands(&self) -> usize {
        match self {
            ModelConfig::DenseNet(c) => c.input_bands,
            ModelConfig::SegNet(c) => c.input_bands,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::DenseNet(c) => c.num_classes,
            ModelConfig::SegNet(c) => c.num_classes,
        }
    }

    pub fn scales(&self) -> usize {
        match self {
            ModelConfig::DenseNet(c) => c.scales(),
            ModelConfig::SegNet(c) => c.scales(),
        }
    }

    pub fn is_segnet(&self) -> bool {
        matches!(self, ModelConfig::SegNet(_))
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        match &mut self {
            ModelConfig::DenseNet(c) => c.num_classes = classes,
            ModelConfig::SegNet(c) => c.num_classes = classes,
        }
        self
    }

    /// Overrides the band count; 3D presets keep their fixed spectral depth
    /// and fail validation if asked for anything else.
    pub fn with_bands(mut self, bands: usize) -> Self {
        match &mut self {
            ModelConfig::DenseNet(c) => c.input_bands = bands,
            ModelConfig::SegNet(c) => c.input_bands = bands,
        }
        self
    }
}

pub const PRESETS: [&str; 6] = ["dn-e23-g12", "dn-e45-g16", "dn-e444-g16", "dn3d-e45-g16", "dn3d-e444-g16", "segnet-13"];

fn densenet(enc: &[usize], bottleneck: usize, growth: usize, three_d: bool) -> DenseNetConfig {
    DenseNetConfig {
        encoder_blocks: enc.to_vec(),
        bottleneck_layers: bottleneck,
        decoder_blocks: enc.iter().rev().copied().collect(),
        growth,
        stem_filters: 48,
        first_block_3d: three_d,
        input_bands: if three_d { SPECTRAL_DEPTH_3D } else { 13 },
        num_classes: 23,
        squeeze_filters: default_squeeze(),
    }
}

/// Named architecture presets with their default band and class counts.
pub fn preset(id: &str) -> Result<ModelConfig> {
    let cfg = match id {
        "dn-e23-g12" => ModelConfig::DenseNet(densenet(&[2, 3], 4, 12, false)),
        "dn-e45-g16" => ModelConfig::DenseNet(densenet(&[4, 5], 7, 16, false)),
        "dn-e444-g16" => ModelConfig::DenseNet(densenet(&[4, 4, 4], 4, 16, false)),
        "dn3d-e45-g16" => ModelConfig::DenseNet(densenet(&[4, 5], 7, 16, true)),
        "dn3d-e444-g16" => ModelConfig::DenseNet(densenet(&[4, 4, 4], 4, 16, true)),
        "segnet-13" => ModelConfig::SegNet(SegNetConfig::new(13, 24)),
        other => return Err(config_err!("unknown preset '{other}' (available: {})", PRESETS.join(", "))),
    };
    Ok(cfg)
}

/// The 2D preset a 3D preset replaces, if any.
pub fn counterpart_2d(id: &str) -> Option<&'static str> {
    match id {
        "dn3d-e45-g16" => Some("dn-e45-g16"),
        "dn3d-e444-g16" => Some("dn-e444-g16"),
        _ => None,
    }
}

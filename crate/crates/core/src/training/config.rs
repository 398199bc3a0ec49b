use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use crate::autodiff::optim::OptimizerConfig;
use crate::error::{config_err, Error, Result};
use crate::models::{preset, ModelConfig};
use crate::raster::tiles::TILE_MULTIPLE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Full-resolution logits against labels replicated to the band grid.
    Fine,
    /// Averaged multiscale logits pooled onto the native label grid.
    Coarse,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Strategy::Fine),
            "coarse" => Ok(Strategy::Coarse),
            other => Err(config_err!("unknown strategy '{other}' (fine|coarse)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Preset id.
    pub model: String,
    /// Explicit architecture; replaces the preset when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_config: Option<ModelConfig>,
    pub manifest: PathBuf,
    pub strategy: Strategy,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Stop after this many optimizer steps, mid-epoch if needed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Stop once a batch reaches this training accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_train_oa: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_tile")]
    pub tile_px: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride_px: Option<usize>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default = "default_true")]
    pub flips: bool,
    #[serde(default = "default_queue")]
    pub queue_depth: usize,
    /// Defaults to `metrics.jsonl` in the checkpoint directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_log: Option<PathBuf>,
}

fn default_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    4
}
fn default_tile() -> usize {
    64
}
fn default_true() -> bool {
    true
}
fn default_queue() -> usize {
    4
}

impl TrainConfig {
    /// Reads a config; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.checkpoint_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.metrics_log.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    /// Architecture to train for a dataset with `num_classes` classes.
    pub fn model_for(&self, num_classes: usize) -> Result<ModelConfig> {
        let m = match &self.model_config {
            Some(m) => m.clone(),
            None => preset(&self.model)?.with_classes(num_classes),
        };
        if m.num_classes() != num_classes {
            return Err(config_err!("model predicts {} classes, dataset has {num_classes}", m.num_classes()));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        match (self.strategy, model.is_segnet()) {
            (Strategy::Coarse, false) => return Err(config_err!("the coarse strategy needs a SegNet model")),
            (Strategy::Fine, true) => return Err(config_err!("the fine strategy needs a DenseNet model")),
            _ => {}
        }
        if self.tile_px == 0 || self.tile_px % TILE_MULTIPLE != 0 {
            return Err(config_err!("tile_px {} must be a positive multiple of {TILE_MULTIPLE}", self.tile_px));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.queue_depth == 0 {
            return Err(config_err!("batch_size, epochs and queue_depth must be positive"));
        }
        if self.stride_px == Some(0) {
            return Err(config_err!("stride_px must be positive"));
        }
        if self.optimizer.lr() <= 0.0 || !self.optimizer.lr().is_finite() {
            return Err(config_err!("learning rate must be positive"));
        }
        Ok(())
    }

    /// Tile stride: the configured one, or the tile size for fine training and
    /// the largest whole number of label cells within a tile for coarse
    /// training (which needs every tile aligned to the label grid).
    pub fn stride(&self, label_cell: usize) -> Result<usize> {
        match (self.strategy, self.stride_px) {
            (Strategy::Fine, s) => Ok(s.unwrap_or(self.tile_px)),
            (Strategy::Coarse, Some(s)) if s % label_cell != 0 => {
                Err(config_err!("coarse training needs stride_px to be a multiple of the {label_cell}-px label cell"))
            }
            (Strategy::Coarse, Some(s)) => Ok(s),
            (Strategy::Coarse, None) => Ok((self.tile_px / label_cell).max(1) * label_cell),
        }
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.metrics_log.clone().unwrap_or_else(|| self.checkpoint_dir.join("metrics.jsonl"))
    }
}

//! Fine and coarse supervised training loops.

pub mod config;
pub mod data;
pub mod loss;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{Strategy, TrainConfig};
pub use data::{Batch, TileSet};
pub use loss::{loss_multiscale, LossWeights, MultiscaleLoss};

use crate::autodiff::optim::Optimizer;
use crate::autodiff::{checkpoint, Graph, Mode};
use crate::error::{config_err, Error, Result};
use crate::evaluation::argmax_classes;
use crate::models::{Model, ModelConfig};
use crate::raster::{BandMode, Manifest, Split, NO_DATA};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub train_oa: f64,
    pub wall_ms: u64,
}

/// Written next to the checkpoints so they can be reloaded without the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub model: ModelConfig,
    pub strategy: Strategy,
    pub band_mode: BandMode,
    pub seed: u64,
}

pub const RUN_INFO_FILE: &str = "run.json";

impl RunInfo {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_INFO_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads the run description stored beside a checkpoint file.
    pub fn for_checkpoint(ckpt: &Path) -> Result<Self> {
        let path = ckpt.parent().unwrap_or(Path::new("")).join(RUN_INFO_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    /// Rebuilds the model and loads the checkpoint into it.
    pub fn load_model(ckpt: &Path) -> Result<(Self, Model<f32>)> {
        let info = Self::for_checkpoint(ckpt)?;
        let mut model = Model::build(&info.model, info.seed)?;
        checkpoint::load_into(&mut model.params, ckpt)?;
        Ok((info, model))
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub metrics: Vec<StepMetrics>,
    /// Checkpoints written, in order; the last holds the final parameters.
    pub checkpoints: Vec<PathBuf>,
}

/// Correct and labelled counts of `[N, C, ...]` scores against `labels`.
pub fn batch_accuracy(scores: &[f32], shape: &[usize], labels: &[u16]) -> (u64, u64) {
    let classes = shape[1];
    let per: usize = shape[2..].iter().product();
    let mut hit = 0;
    let mut total = 0;
    for (s, l) in scores.chunks(classes * per).zip(labels.chunks(per)) {
        for (p, &r) in argmax_classes(s, classes).into_iter().zip(l) {
            if r != NO_DATA {
                total += 1;
                hit += (p == r) as u64;
            }
        }
    }
    (hit, total)
}

/// Loss and accuracy counts of one batch, with gradients applied to `model`.
fn train_step(
    model: &mut Model<f32>,
    opt: &mut Optimizer<f32>,
    batch: Batch,
    strategy: Strategy,
    weights: &LossWeights,
) -> Result<(f64, f64)> {
    let (grads, stats, loss, oa) = {
        let mut g = Graph::with_params(&model.params, Mode::Train);
        let s = batch.bands.shape().to_vec();
        let x = g.input(batch.bands)?;
        let heads = model.forward(&mut g, x)?;
        let (loss, scored, labels) = match strategy {
            Strategy::Fine => {
                let l = g.softmax_cross_entropy(heads[0], &batch.labels, NO_DATA)?;
                (l, heads[0], &batch.labels)
            }
            Strategy::Coarse => {
                let m = loss_multiscale(&mut g, &heads, (s[2], s[3]), batch.pool, &batch.coarse_labels, weights)?;
                (m.loss, m.pooled, &batch.coarse_labels)
            }
        };
        let lv = g.value(loss).item() as f64;
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let (hit, total) = batch_accuracy(g.value(scored).data(), g.shape(scored), labels);
        let grads = g.backward(loss)?.into_param_grads(model.params.len());
        (grads, g.take_stat_updates(), lv, if total == 0 { 0.0 } else { hit as f64 / total as f64 })
    };
    opt.step(&mut model.params, &grads)?;
    for (id, t) in stats {
        model.params.set(id, t)?;
    }
    Ok((loss, oa))
}

/// Runs the optimization loop over an in-memory tile set.
pub fn train_on(cfg: &TrainConfig, mut model: Model<f32>, set: &TileSet) -> Result<TrainOutcome> {
    cfg.validate(&model.config)?;
    fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| Error::io(&cfg.checkpoint_dir, e))?;
    RunInfo {
        model: model.config.clone(),
        strategy: cfg.strategy,
        band_mode: BandMode::for_count(model.config.input_bands())?,
        seed: cfg.seed,
    }
    .save(&cfg.checkpoint_dir)?;
    let log_path = cfg.metrics_path();
    let log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);

    let mut opt = cfg.optimizer.build::<f32>();
    let lr = cfg.optimizer.lr();
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    let mut step = 0usize;

    let result: Result<()> = std::thread::scope(|scope| {
        let (rx, _loader) =
            data::spawn_loader(scope, set, cfg.seed, cfg.epochs, cfg.batch_size, cfg.flips, cfg.queue_depth);
        let mut current = 0usize;
        let mut stopped = false;
        for (epoch, batch) in rx.iter() {
            if epoch != current {
                checkpoints.push(save_epoch(&model, &cfg.checkpoint_dir, current)?);
                current = epoch;
            }
            let outcome = batch.and_then(|b| train_step(&mut model, &mut opt, b, cfg.strategy, &cfg.loss_weights));
            let (loss, train_oa) = match outcome {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    log::error!("non-finite {what} at step {}", step + 1);
                    return Err(Error::Diverged { step: step + 1, last_good: checkpoints.last().cloned() });
                }
                Err(e) => return Err(e),
            };
            step += 1;
            let m = StepMetrics { step, epoch, loss, lr, train_oa, wall_ms: start.elapsed().as_millis() as u64 };
            let line = serde_json::to_string(&m).map_err(|e| Error::json(&log_path, e))?;
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            log::debug!("step {step} loss {loss:.5} oa {train_oa:.4}");
            metrics.push(m);
            if step >= max_steps || cfg.target_train_oa.is_some_and(|t| train_oa >= t) {
                stopped = true;
                break;
            }
        }
        if !stopped && step > 0 {
            checkpoints.push(save_epoch(&model, &cfg.checkpoint_dir, current)?);
        }
        Ok(())
    });
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    result?;
    let fin = cfg.checkpoint_dir.join("final.tckpt");
    checkpoint::save(&model.params, &fin)?;
    checkpoints.push(fin);
    if let Some(last) = metrics.last() {
        log::info!("finished after {} steps: loss {:.5}, train OA {:.4}", last.step, last.loss, last.train_oa);
    }
    Ok(TrainOutcome { model, metrics, checkpoints })
}

fn save_epoch(model: &Model<f32>, dir: &Path, epoch: usize) -> Result<PathBuf> {
    let path = dir.join(format!("epoch-{:04}.tckpt", epoch + 1));
    checkpoint::save(&model.params, &path)?;
    log::info!("saved {}", path.display());
    Ok(path)
}

/// Loads the training split of the configured manifest and trains; `resume`
/// restores parameters (optimizer moments start fresh).
pub fn train(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let manifest = Manifest::load(&cfg.manifest)?;
    let model_cfg = cfg.model_for(manifest.num_classes())?;
    cfg.validate(&model_cfg)?;
    let mut model = Model::build(&model_cfg, cfg.seed)?;
    if let Some(ckpt) = resume {
        checkpoint::load_into(&mut model.params, ckpt)?;
        log::info!("resumed parameters from {}", ckpt.display());
    }
    let mode = BandMode::for_count(model_cfg.input_bands())?;
    let scenes = manifest
        .entries(Split::Train)
        .map(|e| manifest.prepare_scene(e, mode))
        .collect::<Result<Vec<_>>>()?;
    let cell = scenes.first().ok_or_else(|| config_err!("manifest has no training scenes"))?.label_cell()?;
    let set = TileSet::new(scenes, cfg.tile_px, cfg.stride(cell)?, cfg.strategy == Strategy::Coarse)?;
    log::info!("{} training tiles of {} px", set.len(), cfg.tile_px);
    train_on(cfg, model, &set)
}

pub fn train_fine(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    if cfg.strategy != Strategy::Fine {
        return Err(config_err!("train_fine called with the {:?} strategy", cfg.strategy));
    }
    train(cfg, resume)
}

pub fn train_coarse(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    if cfg.strategy != Strategy::Coarse {
        return Err(config_err!("train_coarse called with the {:?} strategy", cfg.strategy));
    }
    train(cfg, resume)
}

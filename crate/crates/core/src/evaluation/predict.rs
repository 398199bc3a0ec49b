use rayon::prelude::*;

use crate::autodiff::{Graph, Mode};
use crate::error::{shape_err, Result};
use crate::models::Model;
use crate::ops::BoxPool;
use crate::raster::{LabelRaster, Scene};
use crate::tensor::Tensor;
use crate::training::Strategy;

/// Per-pixel argmax over the leading class axis of `[C, P]` scores; ties go
/// to the smaller class id.
pub fn argmax_classes(scores: &[f32], classes: usize) -> Vec<u16> {
    let p = scores.len() / classes.max(1);
    (0..p)
        .map(|i| {
            let mut best = 0usize;
            for c in 1..classes {
                if scores[c * p + i] > scores[best * p + i] {
                    best = c;
                }
            }
            best as u16
        })
        .collect()
}

/// Fused logits `[C, h, w]` for a `[B, h, w]` window, zero-padding the
/// bottom/right edge when the model needs aligned extents.
fn window_logits(model: &Model<f32>, bands: &[f32], b: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let m = model.input_multiple();
    let (ph, pw) = if model.requires_aligned_input() { (h.div_ceil(m) * m, w.div_ceil(m) * m) } else { (h, w) };
    let mut x = vec![0f32; b * ph * pw];
    for c in 0..b {
        for y in 0..h {
            let src = &bands[c * h * w + y * w..c * h * w + (y + 1) * w];
            x[c * ph * pw + y * pw..c * ph * pw + y * pw + w].copy_from_slice(src);
        }
    }
    let mut g = Graph::with_params(&model.params, Mode::Eval);
    let xv = g.input(Tensor::new(vec![1, b, ph, pw], x)?)?;
    let out = model.fused_logits(&mut g, xv)?;
    let full = g.value(out);
    let classes = full.shape()[1];
    if (ph, pw) == (h, w) {
        return full.clone().reshape(vec![classes, h, w]);
    }
    let mut data = Vec::with_capacity(classes * h * w);
    for c in 0..classes {
        for y in 0..h {
            data.extend_from_slice(&full.data()[c * ph * pw + y * pw..c * ph * pw + y * pw + w]);
        }
    }
    Tensor::new(vec![classes, h, w], data)
}

fn crop(bands: &Tensor<f32>, y0: usize, y1: usize, x0: usize, x1: usize) -> Vec<f32> {
    let s = bands.shape();
    let (h, w) = (s[1], s[2]);
    let mut out = Vec::with_capacity(s[0] * (y1 - y0) * (x1 - x0));
    for c in 0..s[0] {
        for y in y0..y1 {
            out.extend_from_slice(&bands.data()[c * h * w + y * w + x0..c * h * w + y * w + x1]);
        }
    }
    out
}

/// Halo in pixels that makes tiled inference match whole-scene inference.
pub fn tile_halo(model: &Model<f32>) -> usize {
    let m = model.input_multiple();
    let stride = model.head_strides().into_iter().max().unwrap_or(1);
    (model.receptive_radius() + stride).div_ceil(m) * m
}

/// Fused full-resolution logits `[C, H, W]` of a `[B, H, W]` band stack,
/// computed whole or over `tile`-sized cores with a context halo.
pub fn predict_logits(model: &Model<f32>, bands: &Tensor<f32>, tile: Option<usize>) -> Result<Tensor<f32>> {
    let s = bands.shape();
    if s.len() != 3 {
        return Err(shape_err!("expected a [B, H, W] band stack, got {s:?}"));
    }
    let (b, h, w) = (s[0], s[1], s[2]);
    let Some(tile) = tile.filter(|&t| t < h || t < w) else {
        return window_logits(model, bands.data(), b, h, w);
    };
    if tile == 0 {
        return Err(shape_err!("tile size must be positive"));
    }
    let m = model.input_multiple();
    let halo = tile_halo(model);
    let cores: Vec<(usize, usize)> =
        (0..h.div_ceil(tile)).flat_map(|i| (0..w.div_ceil(tile)).map(move |j| (i * tile, j * tile))).collect();
    let parts: Vec<(usize, usize, Tensor<f32>, (usize, usize))> = cores
        .par_iter()
        .map(|&(cy, cx)| {
            let y0 = cy.saturating_sub(halo) / m * m;
            let x0 = cx.saturating_sub(halo) / m * m;
            let y1 = ((cy + tile + halo).div_ceil(m) * m).min(h);
            let x1 = ((cx + tile + halo).div_ceil(m) * m).min(w);
            let win = crop(bands, y0, y1, x0, x1);
            Ok((y0, x0, window_logits(model, &win, b, y1 - y0, x1 - x0)?, (cy, cx)))
        })
        .collect::<Result<_>>()?;
    let classes = parts.first().map(|p| p.2.shape()[0]).unwrap_or(0);
    let mut out = vec![0f32; classes * h * w];
    for (y0, x0, t, (cy, cx)) in parts {
        let (th, tw) = (t.shape()[1], t.shape()[2]);
        let (ey, ex) = ((cy + tile).min(h), (cx + tile).min(w));
        for c in 0..classes {
            for y in cy..ey {
                let src = &t.data()[c * th * tw + (y - y0) * tw + (cx - x0)..c * th * tw + (y - y0) * tw + (ex - x0)];
                out[c * h * w + y * w + cx..c * h * w + y * w + ex].copy_from_slice(src);
            }
        }
    }
    Tensor::new(vec![classes, h, w], out)
}

/// Label map of a scene: per-pixel at band resolution for the fine strategy,
/// per label cell (box-pooled logits) for the coarse one.
pub fn predict_map(model: &Model<f32>, scene: &Scene, strategy: Strategy, tile: Option<usize>) -> Result<LabelRaster> {
    let logits = predict_logits(model, &scene.bands, tile)?;
    let (c, h, w) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    match strategy {
        Strategy::Fine => LabelRaster::new(w, h, scene.resolution_m, argmax_classes(logits.data(), c)),
        Strategy::Coarse => {
            let pool = BoxPool::covering(h, w, scene.label_cell()?);
            let pooled = pool.forward(&logits.reshape(vec![1, c, h, w])?)?;
            let (lh, lw) = (pooled.shape()[2], pooled.shape()[3]);
            LabelRaster::new(lw, lh, scene.labels.resolution_m, argmax_classes(pooled.data(), c))
        }
    }
}

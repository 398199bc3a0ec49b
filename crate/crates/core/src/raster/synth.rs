//! Deterministic synthetic scenes standing in for real Sentinel-2 exports.
//!
//! Labels are smoothed Voronoi regions on the 300 m grid. Each class owns a
//! fixed 13-band signature derived from its id, so independently generated
//! scenes agree spectrally. Every seventh class (`id % 7 == 6`) is a mosaic:
//! a 3-px checkerboard blending the two preceding signatures, which a
//! per-pixel spectral rule cannot separate from its parents but a spatial
//! model can.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::bands::Band;
use super::classes::ClassTable;
use super::manifest::{write_dataset, Manifest, Split};
use super::resample::LabelRaster;
use super::scene::{label_extent, Scene, BAND_RESOLUTION_M, LABEL_RESOLUTION_M};
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

pub const NUM_SYNTH_BANDS: usize = 13;
/// Standard deviation of the additive correlated noise, in sensor units.
pub const NOISE_STD: f32 = 150.0;
pub const MOSAIC_BLOCK_PX: usize = 3;
const MOSAIC_WEIGHT: f32 = 0.2;

pub fn is_mosaic(class: u16) -> bool {
    class % 7 == 6
}

/// Spectral signature of a land class, independent of any scene seed.
pub fn class_signature(class: u16) -> [f32; NUM_SYNTH_BANDS] {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EC7_0000 ^ class as u64);
    std::array::from_fn(|_| rng.gen_range(500.0f32..5000.0))
}

pub fn cloud_signature() -> [f32; NUM_SYNTH_BANDS] {
    std::array::from_fn(|b| 8000.0 - 120.0 * b as f32)
}

/// Noise-free value of `class` at pixel `(y, x)` in band `b`.
pub fn class_value(class: u16, y: usize, x: usize, b: usize) -> f32 {
    if is_mosaic(class) {
        let (a, c) = (class_signature(class - 1)[b], class_signature(class - 2)[b]);
        let w = if (y / MOSAIC_BLOCK_PX + x / MOSAIC_BLOCK_PX) % 2 == 0 { MOSAIC_WEIGHT } else { 1.0 - MOSAIC_WEIGHT };
        w * a + (1.0 - w) * c
    } else {
        class_signature(class)[b]
    }
}

/// Voronoi partition of an `lh x lw` grid into random land classes,
/// followed by one 3x3 majority pass.
fn voronoi_labels(rng: &mut ChaCha8Rng, lh: usize, lw: usize, num_classes: usize) -> Vec<u16> {
    let sites = (lh * lw / 8).max(num_classes).max(1);
    let pts: Vec<(f64, f64, u16)> = (0..sites)
        .map(|_| (rng.gen_range(0.0..lh as f64), rng.gen_range(0.0..lw as f64), rng.gen_range(0..num_classes) as u16))
        .collect();
    let raw: Vec<u16> = (0..lh * lw)
        .map(|i| {
            let (y, x) = ((i / lw) as f64 + 0.5, (i % lw) as f64 + 0.5);
            pts.iter()
                .min_by(|a, b| {
                    let da = (a.0 - y).powi(2) + (a.1 - x).powi(2);
                    let db = (b.0 - y).powi(2) + (b.1 - x).powi(2);
                    da.total_cmp(&db)
                })
                .map(|p| p.2)
                .unwrap_or(0)
        })
        .collect();
    let mut out = raw.clone();
    let mut votes = vec![0usize; num_classes];
    for y in 0..lh {
        for x in 0..lw {
            votes.iter_mut().for_each(|v| *v = 0);
            for ny in y.saturating_sub(1)..(y + 2).min(lh) {
                for nx in x.saturating_sub(1)..(x + 2).min(lw) {
                    votes[raw[ny * lw + nx] as usize] += 1;
                }
            }
            let own = raw[y * lw + x];
            let best = (0..num_classes).max_by_key(|&c| (votes[c], c as u16 == own)).unwrap_or(0);
            if votes[best] > votes[own as usize] {
                out[y * lw + x] = best as u16;
            }
        }
    }
    out
}

/// Marks roughly `fraction` of the cells with disk-shaped blobs.
fn cloud_cells(rng: &mut ChaCha8Rng, lh: usize, lw: usize, fraction: f64) -> Vec<bool> {
    let mut mask = vec![false; lh * lw];
    let target = (fraction * (lh * lw) as f64).round() as usize;
    let mut count = 0;
    while count < target {
        let (cy, cx) = (rng.gen_range(0..lh) as isize, rng.gen_range(0..lw) as isize);
        let r: isize = rng.gen_range(0..3);
        for y in (cy - r).max(0)..(cy + r + 1).min(lh as isize) {
            for x in (cx - r).max(0)..(cx + r + 1).min(lw as isize) {
                let i = y as usize * lw + x as usize;
                if (y - cy).pow(2) + (x - cx).pow(2) <= r * r && !mask[i] && count < target {
                    mask[i] = true;
                    count += 1;
                }
            }
        }
    }
    mask
}

/// White noise blurred by two 3x3 box passes and rescaled to [`NOISE_STD`].
fn correlated_noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f32> {
    let mut f: Vec<f32> = (0..h * w).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    for _ in 0..2 {
        let mut g = vec![0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut n) = (0f32, 0f32);
                for ny in y.saturating_sub(1)..(y + 2).min(h) {
                    for nx in x.saturating_sub(1)..(x + 2).min(w) {
                        acc += f[ny * w + nx];
                        n += 1.0;
                    }
                }
                g[y * w + x] = acc / n;
            }
        }
        f = g;
    }
    let n = f.len() as f64;
    let mean = f.iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (f.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    f.iter().map(|&v| ((v as f64 - mean) / std) as f32 * NOISE_STD).collect()
}

/// A square scene of `size_px` pixels at 20 m/px with `num_classes` land
/// classes. When `cloud_fraction > 0`, cloud cells carry id `num_classes`.
pub fn synthesize_scene(seed: u64, size_px: usize, num_classes: usize, cloud_fraction: f64) -> Result<Scene> {
    if size_px == 0 {
        return Err(config_err!("scene size must be positive"));
    }
    if num_classes == 0 || num_classes >= u16::MAX as usize - 1 {
        return Err(config_err!("class count {num_classes} out of range"));
    }
    if !(0.0..=1.0).contains(&cloud_fraction) {
        return Err(config_err!("cloud fraction {cloud_fraction} outside [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = label_extent(size_px, BAND_RESOLUTION_M, LABEL_RESOLUTION_M);
    let cell = (LABEL_RESOLUTION_M / BAND_RESOLUTION_M) as usize;
    let mut labels = voronoi_labels(&mut rng, l, l, num_classes);
    let clouds = if cloud_fraction > 0.0 { Some(cloud_cells(&mut rng, l, l, cloud_fraction)) } else { None };
    if let Some(c) = &clouds {
        for (v, &m) in labels.iter_mut().zip(c) {
            if m {
                *v = num_classes as u16;
            }
        }
    }
    let n = size_px;
    let cloud_sig = cloud_signature();
    let mut data = Vec::with_capacity(NUM_SYNTH_BANDS * n * n);
    for b in 0..NUM_SYNTH_BANDS {
        let noise = correlated_noise(&mut rng, n, n);
        for y in 0..n {
            for x in 0..n {
                let i = (y / cell) * l + x / cell;
                let cloudy = clouds.as_ref().is_some_and(|c| c[i]);
                let v = if cloudy { cloud_sig[b] } else { class_value(labels[i], y, x, b) };
                data.push(v + noise[y * n + x]);
            }
        }
    }
    let cloud_mask = clouds.map(|c| (0..n * n).map(|p| c[((p / n) / cell) * l + (p % n) / cell]).collect());
    Ok(Scene {
        id: format!("synth-{seed}"),
        bands: Tensor::new(vec![NUM_SYNTH_BANDS, n, n], data)?,
        band_ids: Band::ALL.to_vec(),
        resolution_m: BAND_RESOLUTION_M,
        labels: LabelRaster::new(l, l, LABEL_RESOLUTION_M, labels)?,
        acquisition_tag: format!("synthetic-{seed}"),
        cloud_mask,
    })
}

/// Number of held-out scenes for a dataset of `n` scenes (about 30%).
pub fn test_scene_count(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        ((n as f64 * 0.3).round() as usize).clamp(1, n - 1)
    }
}

/// Writes `scenes` synthetic scenes to `dir`; the last ~30% form the test split.
pub fn synthesize_dataset(
    dir: &Path,
    seed: u64,
    scenes: usize,
    size_px: usize,
    num_classes: usize,
    cloud_fraction: f64,
) -> Result<Manifest> {
    let table = ClassTable::globcover(num_classes, cloud_fraction > 0.0)?;
    let n_test = test_scene_count(scenes);
    let mut out = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let s = synthesize_scene(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), size_px, num_classes, cloud_fraction)?;
        let s = Scene { id: format!("scene{i:03}"), ..s };
        let split = if i + n_test >= scenes { Split::Test } else { Split::Train };
        out.push((s, split));
    }
    write_dataset(dir, &out, &table)
}

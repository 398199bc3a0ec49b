use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classes::NO_DATA;
use super::scene::Scene;
use crate::error::{config_err, Result};
use crate::ops::BoxPool;
use crate::tensor::Tensor;

/// Spatial alignment every tile size must satisfy.
pub const TILE_MULTIPLE: usize = 32;

/// Label cells lying entirely inside a tile.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseTarget {
    /// Pooling of tile pixels onto those cells.
    pub pool: BoxPool,
    /// `cells.0 * cells.1` labels, row-major.
    pub labels: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub y: usize,
    pub x: usize,
    /// `[B, t, t]`.
    pub bands: Tensor<f32>,
    /// Labels replicated to pixel resolution, `t * t`.
    pub labels: Vec<u16>,
    pub coarse: CoarseTarget,
}

/// Top-left corners of all tiles fully inside an `h x w` scene, row-major.
pub fn tile_positions(h: usize, w: usize, tile: usize, stride: usize) -> Vec<(usize, usize)> {
    if tile > h || tile > w || stride == 0 {
        return Vec::new();
    }
    let ys = (0..=(h - tile) / stride).map(|i| i * stride);
    ys.flat_map(|y| (0..=(w - tile) / stride).map(move |j| (y, j * stride))).collect()
}

/// Cells of size `cell` fully covered by the span `[lo, lo + len)`:
/// returns (offset from `lo` to the first cell, first cell index, count).
fn full_cells(lo: usize, len: usize, cell: usize) -> (usize, usize, usize) {
    let first = lo.div_ceil(cell);
    let end = (lo + len) / cell;
    (first * cell - lo, first, end.saturating_sub(first))
}

/// Cuts one tile; `fine` are the scene's labels at pixel resolution.
pub fn cut_tile(scene: &Scene, fine: &[u16], y: usize, x: usize, t: usize) -> Result<Tile> {
    let (h, w) = (scene.height(), scene.width());
    if y + t > h || x + t > w {
        return Err(config_err!("tile at ({y},{x}) of size {t} leaves the {h}x{w} scene"));
    }
    let b = scene.num_bands();
    let src = scene.bands.data();
    let mut bands = Vec::with_capacity(b * t * t);
    for c in 0..b {
        for r in y..y + t {
            let o = c * h * w + r * w + x;
            bands.extend_from_slice(&src[o..o + t]);
        }
    }
    let mut labels = Vec::with_capacity(t * t);
    for r in y..y + t {
        labels.extend_from_slice(&fine[r * w + x..r * w + x + t]);
    }
    let cell = scene.label_cell()?;
    let (oy, cy, ny) = full_cells(y, t, cell);
    let (ox, cx, nx) = full_cells(x, t, cell);
    let mut coarse = Vec::with_capacity(ny * nx);
    for i in cy..cy + ny {
        for j in cx..cx + nx {
            coarse.push(scene.labels.get(i, j));
        }
    }
    Ok(Tile {
        y,
        x,
        bands: Tensor::new(vec![b, t, t], bands)?,
        labels,
        coarse: CoarseTarget { pool: BoxPool { cell, offset: (oy, ox), cells: (ny, nx) }, labels: coarse },
    })
}

/// Whether the `t x t` window at `(y, x)` of a row-major `w`-wide label
/// plane holds any labelled pixel.
pub fn has_labels(fine: &[u16], w: usize, y: usize, x: usize, t: usize) -> bool {
    (y..y + t).any(|r| fine[r * w + x..r * w + x + t].iter().any(|&v| v != NO_DATA))
}

fn flip_plane<V: Copy>(plane: &mut [V], h: usize, w: usize, horizontal: bool, vertical: bool) {
    if horizontal {
        plane.chunks_mut(w).for_each(|row| row.reverse());
    }
    if vertical {
        for y in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
}

impl Tile {
    /// Mirrors the tile left-right and/or top-bottom, keeping the coarse
    /// target aligned with the moved pixels.
    pub fn flip(&mut self, horizontal: bool, vertical: bool) {
        let t = self.bands.shape()[1];
        for plane in self.bands.data_mut().chunks_mut(t * t) {
            flip_plane(plane, t, t, horizontal, vertical);
        }
        flip_plane(&mut self.labels, t, t, horizontal, vertical);
        let p = &mut self.coarse.pool;
        let (ny, nx) = p.cells;
        flip_plane(&mut self.coarse.labels, ny, nx, horizontal, vertical);
        if horizontal {
            p.offset.1 = t - p.offset.1 - nx * p.cell;
        }
        if vertical {
            p.offset.0 = t - p.offset.0 - ny * p.cell;
        }
    }
}

/// Seed-shuffled stream of tiles; tiles without any labelled pixel are skipped.
pub struct TileIter<'a> {
    scene: &'a Scene,
    fine: Vec<u16>,
    positions: std::vec::IntoIter<(usize, usize)>,
    tile: usize,
}

pub fn tile_iterator(scene: &Scene, tile_px: usize, stride_px: usize, seed: u64) -> Result<TileIter<'_>> {
    if tile_px == 0 || tile_px % TILE_MULTIPLE != 0 {
        return Err(config_err!("tile size {tile_px} must be a positive multiple of {TILE_MULTIPLE}"));
    }
    if stride_px == 0 {
        return Err(config_err!("tile stride must be positive"));
    }
    let mut positions = tile_positions(scene.height(), scene.width(), tile_px, stride_px);
    positions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(TileIter { scene, fine: scene.fine_labels()?.data, positions: positions.into_iter(), tile: tile_px })
}

impl Iterator for TileIter<'_> {
    type Item = Result<Tile>;

    fn next(&mut self) -> Option<Self::Item> {
        let w = self.scene.width();
        let t = self.tile;
        loop {
            let (y, x) = self.positions.next()?;
            if has_labels(&self.fine, w, y, x, t) {
                return Some(cut_tile(self.scene, &self.fine, y, x, t));
            }
        }
    }
}

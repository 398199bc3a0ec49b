//! Batch assembly and the bounded loader queue feeding the optimizer.

use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::{Scope, ScopedJoinHandle};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, shape_err, Result};
use crate::ops::BoxPool;
use crate::raster::tiles::{cut_tile, has_labels, tile_positions, Tile};
use crate::raster::Scene;
use crate::tensor::Tensor;

/// All labelled tile positions of a set of scenes.
pub struct TileSet {
    scenes: Vec<Scene>,
    fine: Vec<Vec<u16>>,
    items: Vec<(usize, usize, usize)>,
    tile: usize,
    coarse: bool,
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[N, B, t, t]`.
    pub bands: Tensor<f32>,
    /// `N * t * t` labels at pixel resolution.
    pub labels: Vec<u16>,
    pub pool: BoxPool,
    /// `N * cells` labels on the native grid.
    pub coarse_labels: Vec<u16>,
}

impl TileSet {
    /// With `coarse`, batches also carry native-grid targets, which requires
    /// every tile to sit at the same phase of the label grid.
    pub fn new(scenes: Vec<Scene>, tile: usize, stride: usize, coarse: bool) -> Result<Self> {
        let mut fine = Vec::with_capacity(scenes.len());
        let mut items = Vec::new();
        for (i, s) in scenes.iter().enumerate() {
            let f = s.fine_labels()?.data;
            for (y, x) in tile_positions(s.height(), s.width(), tile, stride) {
                if has_labels(&f, s.width(), y, x, tile) {
                    items.push((i, y, x));
                }
            }
            fine.push(f);
        }
        if items.is_empty() {
            return Err(config_err!("no labelled {tile}-px tiles in {} scenes", scenes.len()));
        }
        Ok(Self { scenes, fine, items, tile, coarse })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn tile(&self, i: usize) -> Result<Tile> {
        let (s, y, x) = self.items[i];
        cut_tile(&self.scenes[s], &self.fine[s], y, x, self.tile)
    }

    /// Tile indices of every batch of `epoch`, reshuffled per epoch.
    pub fn epoch_batches(&self, seed: u64, epoch: usize, batch: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        idx.shuffle(&mut epoch_rng(seed, epoch, 0));
        idx.chunks(batch).map(<[usize]>::to_vec).collect()
    }

    /// Stacks tiles into a batch; every tile receives the same flips.
    pub fn assemble(&self, indices: &[usize], flip: (bool, bool)) -> Result<Batch> {
        let mut tiles = indices.iter().map(|&i| self.tile(i)).collect::<Result<Vec<_>>>()?;
        let first = tiles.first().ok_or_else(|| shape_err!("empty batch"))?;
        let bs = first.bands.shape().to_vec();
        let pool = first.coarse.pool;
        let mut bands = Vec::with_capacity(tiles.len() * first.bands.numel());
        let mut labels = Vec::with_capacity(tiles.len() * first.labels.len());
        let mut coarse_labels = Vec::new();
        for t in &mut tiles {
            t.flip(flip.0, flip.1);
            if self.coarse && t.coarse.pool != tiles_pool(pool, flip, bs[1]) {
                return Err(shape_err!("tiles at different label-grid phases cannot share a batch"));
            }
            bands.extend_from_slice(t.bands.data());
            labels.extend_from_slice(&t.labels);
            coarse_labels.extend_from_slice(&t.coarse.labels);
        }
        Ok(Batch {
            bands: Tensor::new(vec![tiles.len(), bs[0], bs[1], bs[2]], bands)?,
            labels,
            pool: tiles_pool(pool, flip, bs[1]),
            coarse_labels,
        })
    }
}

fn tiles_pool(p: BoxPool, flip: (bool, bool), t: usize) -> BoxPool {
    let mut out = p;
    if flip.0 {
        out.offset.1 = t - p.offset.1 - p.cells.1 * p.cell;
    }
    if flip.1 {
        out.offset.0 = t - p.offset.0 - p.cells.0 * p.cell;
    }
    out
}

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDA7A_5EED ^ ((epoch as u64) << 20));
    rng.set_stream(stream);
    rng
}

/// Spawns a loader producing every batch of every epoch in order through a
/// queue of `depth` slots. The loader stops when the receiver is dropped.
pub fn spawn_loader<'s, 'e: 's>(
    scope: &'s Scope<'s, 'e>,
    set: &'e TileSet,
    seed: u64,
    epochs: usize,
    batch: usize,
    flips: bool,
    depth: usize,
) -> (Receiver<(usize, Result<Batch>)>, ScopedJoinHandle<'s, ()>) {
    let (tx, rx) = sync_channel(depth);
    let handle = scope.spawn(move || {
        for epoch in 0..epochs {
            let mut flip_rng = epoch_rng(seed, epoch, 1);
            for idx in set.epoch_batches(seed, epoch, batch) {
                let flip = if flips { (flip_rng.gen_bool(0.5), flip_rng.gen_bool(0.5)) } else { (false, false) };
                if tx.send((epoch, set.assemble(&idx, flip))).is_err() {
                    return;
                }
            }
        }
    });
    (rx, handle)
}

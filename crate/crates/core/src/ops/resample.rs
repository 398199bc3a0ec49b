//! Spatial resampling of `[N, C, H, W]` maps: nearest / bilinear upsampling and box pooling.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    Bilinear,
}

/// Two-tap interpolation stencil along one axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

/// Source taps for every output coordinate when resizing `input -> output`.
///
/// Bilinear follows the cell-center convention (align-corners off):
/// `src = (dst + 0.5) * input / output - 0.5`, clamped to the valid range.
pub fn axis_taps(input: usize, output: usize, mode: Interp) -> Vec<Tap> {
    (0..output)
        .map(|o| match mode {
            Interp::Nearest => {
                let i = (o * input / output).min(input - 1);
                Tap { i0: i, i1: i, w0: 1.0, w1: 0.0 }
            }
            Interp::Bilinear => {
                let scale = input as f64 / output as f64;
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
                Tap { i0, i1, w0: 1.0 - w1, w1 }
            }
        })
        .collect()
}

pub struct Resize {
    pub rows: Vec<Tap>,
    pub cols: Vec<Tap>,
}

impl Resize {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize), mode: Interp) -> Result<Self> {
        if in_hw.0 == 0 || in_hw.1 == 0 || out_hw.0 == 0 || out_hw.1 == 0 {
            return Err(shape_err!("cannot resize {:?} to {:?}", in_hw, out_hw));
        }
        Ok(Self { rows: axis_taps(in_hw.0, out_hw.0, mode), cols: axis_taps(in_hw.1, out_hw.1, mode) })
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(4, "upsample input")?;
        let s = x.shape();
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut out = Vec::with_capacity(s[0] * s[1] * oh * ow);
        for plane in x.data().chunks(h * w) {
            for r in &self.rows {
                let (w0, w1) = (T::from_f64(r.w0), T::from_f64(r.w1));
                let top = &plane[r.i0 * w..(r.i0 + 1) * w];
                let bot = &plane[r.i1 * w..(r.i1 + 1) * w];
                for c in &self.cols {
                    let (c0, c1) = (T::from_f64(c.w0), T::from_f64(c.w1));
                    let v = w0 * (c0 * top[c.i0] + c1 * top[c.i1]) + w1 * (c0 * bot[c.i0] + c1 * bot[c.i1]);
                    out.push(v);
                }
            }
        }
        Tensor::new(vec![s[0], s[1], oh, ow], out)
    }

    /// Adjoint of [`Resize::forward`] for an input of extents `in_shape`.
    pub fn backward<T: Real>(&self, dy: &Tensor<T>, in_shape: &[usize]) -> Result<Tensor<T>> {
        let (h, w) = (in_shape[2], in_shape[3]);
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut dx = Tensor::zeros(in_shape.to_vec());
        for (plane, gplane) in dx.data_mut().chunks_mut(h * w).zip(dy.data().chunks(oh * ow)) {
            for (r, grow) in self.rows.iter().zip(gplane.chunks(ow)) {
                let (w0, w1) = (T::from_f64(r.w0), T::from_f64(r.w1));
                for (c, &g) in self.cols.iter().zip(grow) {
                    let (c0, c1) = (T::from_f64(c.w0), T::from_f64(c.w1));
                    plane[r.i0 * w + c.i0] += w0 * c0 * g;
                    plane[r.i0 * w + c.i1] += w0 * c1 * g;
                    plane[r.i1 * w + c.i0] += w1 * c0 * g;
                    plane[r.i1 * w + c.i1] += w1 * c1 * g;
                }
            }
        }
        Ok(dx)
    }
}

/// Box-mean pooling onto a coarser grid whose cells are `cell x cell` pixels.
///
/// Cell `(i, j)` covers rows `offset.0 + i*cell ..` and columns
/// `offset.1 + j*cell ..`, clipped to the map; the mean is taken over the
/// covered pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxPool {
    pub cell: usize,
    pub offset: (usize, usize),
    pub cells: (usize, usize),
}

impl BoxPool {
    /// Every cell, including partially covered ones at the bottom/right edge.
    pub fn covering(h: usize, w: usize, cell: usize) -> Self {
        Self { cell, offset: (0, 0), cells: (h.div_ceil(cell), w.div_ceil(cell)) }
    }

    fn spans(&self, h: usize, w: usize) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
        let span = |off: usize, n: usize, extent: usize| -> Result<Vec<(usize, usize)>> {
            (0..n)
                .map(|i| {
                    let lo = off + i * self.cell;
                    let hi = (lo + self.cell).min(extent);
                    if lo >= hi {
                        Err(shape_err!("box-pool cell {i} starts at {lo} beyond extent {extent}"))
                    } else {
                        Ok((lo, hi))
                    }
                })
                .collect()
        };
        if self.cell == 0 {
            return Err(shape_err!("box-pool cell size must be positive"));
        }
        Ok((span(self.offset.0, self.cells.0, h)?, span(self.offset.1, self.cells.1, w)?))
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(4, "box-pool input")?;
        let s = x.shape();
        let (h, w) = (s[2], s[3]);
        let (rows, cols) = self.spans(h, w)?;
        let mut out = Vec::with_capacity(s[0] * s[1] * rows.len() * cols.len());
        for plane in x.data().chunks(h * w) {
            for &(r0, r1) in &rows {
                for &(c0, c1) in &cols {
                    let mut acc = T::zero();
                    for y in r0..r1 {
                        acc += plane[y * w + c0..y * w + c1].iter().copied().sum::<T>();
                    }
                    out.push(acc / T::from_usize((r1 - r0) * (c1 - c0)));
                }
            }
        }
        Tensor::new(vec![s[0], s[1], rows.len(), cols.len()], out)
    }

    pub fn backward<T: Real>(&self, dy: &Tensor<T>, in_shape: &[usize]) -> Result<Tensor<T>> {
        let (h, w) = (in_shape[2], in_shape[3]);
        let (rows, cols) = self.spans(h, w)?;
        let mut dx = Tensor::zeros(in_shape.to_vec());
        let cells = rows.len() * cols.len();
        for (plane, gplane) in dx.data_mut().chunks_mut(h * w).zip(dy.data().chunks(cells)) {
            let mut g = gplane.iter();
            for &(r0, r1) in &rows {
                for &(c0, c1) in &cols {
                    let v = *g.next().expect("cell count") / T::from_usize((r1 - r0) * (c1 - c0));
                    for y in r0..r1 {
                        for p in &mut plane[y * w + c0..y * w + c1] {
                            *p += v;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

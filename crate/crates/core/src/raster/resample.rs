//! Resolution changes for single raster planes.

use crate::error::{config_err, shape_err, Result};
use crate::ops::resample::{axis_taps, Interp};

/// A categorical raster on a regular metric grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRaster {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    pub data: Vec<u16>,
}

impl LabelRaster {
    pub fn new(width: usize, height: usize, resolution_m: f64, data: Vec<u16>) -> Result<Self> {
        if data.len() != width * height {
            return Err(shape_err!("{} labels for a {width}x{height} raster", data.len()));
        }
        Ok(Self { width, height, resolution_m, data })
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.width + x]
    }

    /// Top-left `height x width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(shape_err!("crop {height}x{width} of {}x{}", self.height, self.width));
        }
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            data.extend_from_slice(&self.data[y * self.width..y * self.width + width]);
        }
        Self::new(width, height, self.resolution_m, data)
    }
}

/// Integer ratio `coarse / fine` if it exists.
pub fn integer_ratio(coarse: f64, fine: f64) -> Option<usize> {
    let r = coarse / fine;
    let k = r.round();
    ((r - k).abs() < 1e-9 && k >= 1.0).then_some(k as usize)
}

/// Nearest-neighbour replication of labels onto a finer grid.
/// Categorical values (including no-data) are copied, never blended.
pub fn interpolate_labels(labels: &LabelRaster, target_resolution_m: f64) -> Result<LabelRaster> {
    let k = integer_ratio(labels.resolution_m, target_resolution_m).ok_or_else(|| {
        config_err!(
            "label resolution {} m is not an integer multiple of {} m",
            labels.resolution_m,
            target_resolution_m
        )
    })?;
    if k == 1 {
        return Ok(labels.clone());
    }
    let (w, h) = (labels.width * k, labels.height * k);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &labels.data[(y / k) * labels.width..(y / k + 1) * labels.width];
        for x in 0..w {
            data.push(row[x / k]);
        }
    }
    LabelRaster::new(w, h, target_resolution_m, data)
}

/// `factor x factor` block means; extents must divide exactly.
pub fn box_mean_down(plane: &[f32], h: usize, w: usize, factor: usize) -> Result<Vec<f32>> {
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(shape_err!("{h}x{w} plane is not divisible by {factor}"));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0f32; oh * ow];
    let norm = 1.0 / (factor * factor) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0f64;
            for y in oy * factor..(oy + 1) * factor {
                acc += plane[y * w + ox * factor..y * w + (ox + 1) * factor].iter().map(|&v| v as f64).sum::<f64>();
            }
            out[oy * ow + ox] = (acc * norm) as f32;
        }
    }
    Ok(out)
}

/// Bilinear resize (cell-center convention) of one plane.
pub fn bilinear_resize(plane: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Result<Vec<f32>> {
    if plane.len() != h * w || h == 0 || w == 0 {
        return Err(shape_err!("plane of {} values for {h}x{w}", plane.len()));
    }
    let rows = axis_taps(h, oh, Interp::Bilinear);
    let cols = axis_taps(w, ow, Interp::Bilinear);
    let mut out = Vec::with_capacity(oh * ow);
    for r in &rows {
        for c in &cols {
            let v = r.w0 * (c.w0 * plane[r.i0 * w + c.i0] as f64 + c.w1 * plane[r.i0 * w + c.i1] as f64)
                + r.w1 * (c.w0 * plane[r.i1 * w + c.i0] as f64 + c.w1 * plane[r.i1 * w + c.i1] as f64);
            out.push(v as f32);
        }
    }
    Ok(out)
}

/// Nearest resize of a plane (used for bit-flag rasters).
pub fn nearest_resize<V: Copy>(plane: &[V], h: usize, w: usize, oh: usize, ow: usize) -> Vec<V> {
    let rows = axis_taps(h, oh, Interp::Nearest);
    let cols = axis_taps(w, ow, Interp::Nearest);
    let mut out = Vec::with_capacity(oh * ow);
    for r in &rows {
        for c in &cols {
            out.push(plane[r.i0 * w + c.i0]);
        }
    }
    out
}

/// Brings a band sampled at `from_m` onto a `to_m` grid of `oh x ow` pixels:
/// box mean when coarsening by an integer factor, bilinear when refining,
/// untouched when resolutions agree.
pub fn resample_band(plane: Vec<f32>, h: usize, w: usize, from_m: f64, to_m: f64, oh: usize, ow: usize) -> Result<Vec<f32>> {
    if (from_m - to_m).abs() < 1e-9 {
        if (h, w) != (oh, ow) {
            return Err(shape_err!("band is {h}x{w}, grid is {oh}x{ow}"));
        }
        return Ok(plane);
    }
    if from_m < to_m {
        let k = integer_ratio(to_m, from_m)
            .ok_or_else(|| config_err!("cannot coarsen {from_m} m to {to_m} m by an integer factor"))?;
        let out = box_mean_down(&plane, h, w, k)?;
        if (h / k, w / k) != (oh, ow) {
            return Err(shape_err!("coarsened band is {}x{}, grid is {oh}x{ow}", h / k, w / k));
        }
        return Ok(out);
    }
    bilinear_resize(&plane, h, w, oh, ow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_replication_makes_constant_quadrants() {
        let l = LabelRaster::new(2, 2, 300.0, vec![1, 2, 3, 4]).unwrap();
        let f = interpolate_labels(&l, 20.0).unwrap();
        assert_eq!((f.width, f.height), (30, 30));
        for y in 0..30 {
            for x in 0..30 {
                let expect = [1, 2, 3, 4][(y / 15) * 2 + x / 15];
                assert_eq!(f.get(y, x), expect);
            }
        }
    }

    #[test]
    fn equal_resolution_is_identity() {
        let l = LabelRaster::new(3, 1, 20.0, vec![0, 65535, 2]).unwrap();
        assert_eq!(interpolate_labels(&l, 20.0).unwrap(), l);
    }

    #[test]
    fn ten_meter_band_is_averaged_by_two() {
        let plane: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let out = resample_band(plane, 4, 4, 10.0, 20.0, 2, 2).unwrap();
        assert_eq!(out, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn same_resolution_is_bit_identical() {
        let plane = vec![0.1f32, -3.7, f32::MIN_POSITIVE, 1e30];
        assert_eq!(resample_band(plane.clone(), 2, 2, 20.0, 20.0, 2, 2).unwrap(), plane);
    }
}

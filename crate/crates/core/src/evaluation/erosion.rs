use rayon::prelude::*;

use crate::raster::LabelRaster;

/// Integer offsets within Euclidean distance `radius_m` of a cell center on a
/// grid of `resolution_m`, excluding the center itself.
pub fn disk_offsets(radius_m: f64, resolution_m: f64) -> Vec<(isize, isize)> {
    if radius_m <= 0.0 {
        return Vec::new();
    }
    let r = (radius_m / resolution_m).floor() as isize;
    let r2 = radius_m * radius_m;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = ((dy * dy + dx * dx) as f64) * resolution_m * resolution_m;
            if (dy, dx) != (0, 0) && d2 <= r2 * (1.0 + 1e-12) {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Marks every pixel that has a differently labelled pixel (no-data included)
/// within `radius_m` of its center.
pub fn erode_reference(labels: &LabelRaster, radius_m: f64) -> Vec<bool> {
    let (h, w) = (labels.height as isize, labels.width as isize);
    let offsets = disk_offsets(radius_m, labels.resolution_m);
    let data = &labels.data;
    let mut mask = vec![false; data.len()];
    if offsets.is_empty() {
        return mask;
    }
    mask.par_chunks_mut(labels.width).enumerate().for_each(|(y, row)| {
        let y = y as isize;
        for (x, m) in row.iter_mut().enumerate() {
            let x = x as isize;
            let v = data[(y * w + x) as usize];
            *m = offsets.iter().any(|&(dy, dx)| {
                let (ny, nx) = (y + dy, x + dx);
                ny >= 0 && ny < h && nx >= 0 && nx < w && data[(ny * w + nx) as usize] != v
            });
        }
    });
    mask
}

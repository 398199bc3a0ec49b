//! 2x2 max pooling with recorded argmax locations, and the matching sparse unpooling.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Per output cell, the flat `y * W + x` coordinate of its window maximum
/// inside the corresponding `(batch, channel)` input plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    /// Pooled-from extents `[N, C, H, W]`.
    pub input_shape: [usize; 4],
    /// Pooled extents `[N, C, ceil(H/2), ceil(W/2)]`.
    pub output_shape: [usize; 4],
    /// True when H or W was odd and the last row/column window was padded
    /// with a negative-infinity sentinel.
    pub padded: bool,
    pub indices: Vec<u32>,
}

impl IndexMap {
    pub fn new(input_shape: [usize; 4], output_shape: [usize; 4], indices: Vec<u32>) -> Result<Self> {
        let n: usize = output_shape.iter().product();
        if indices.len() != n || input_shape[..2] != output_shape[..2] {
            return Err(shape_err!(
                "index map of {} entries for pooled shape {:?} from {:?}",
                indices.len(),
                output_shape,
                input_shape
            ));
        }
        let padded = input_shape[2] % 2 == 1 || input_shape[3] % 2 == 1;
        Ok(Self { input_shape, output_shape, padded, indices })
    }

    fn plane_sizes(&self) -> (usize, usize) {
        (self.input_shape[2] * self.input_shape[3], self.output_shape[2] * self.output_shape[3])
    }

    /// Fails when any index lies outside its input plane.
    pub fn validate(&self) -> Result<()> {
        let (in_plane, _) = self.plane_sizes();
        if let Some((pos, &bad)) = self.indices.iter().enumerate().find(|(_, &i)| i as usize >= in_plane) {
            return Err(Error::Integrity(format!(
                "pooling index {bad} at output cell {pos} exceeds plane size {in_plane} of {:?}",
                self.input_shape
            )));
        }
        Ok(())
    }
}

pub fn maxpool2d<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, IndexMap)> {
    x.expect_rank(4, "maxpool2d input")?;
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut indices = Vec::with_capacity(n * c * oh * ow);
    let xd = x.data();
    for plane in xd.chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                // Row-major scan with strict '>' keeps the smallest flat index on ties.
                for dy in 0..2 {
                    let y = 2 * oy + dy;
                    if y >= h {
                        continue;
                    }
                    for dx in 0..2 {
                        let xx = 2 * ox + dx;
                        if xx >= w {
                            continue;
                        }
                        let v = plane[y * w + xx];
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = y * w + xx;
                        }
                    }
                }
                out.push(best);
                indices.push(best_idx as u32);
            }
        }
    }
    let map = IndexMap::new([n, c, h, w], [n, c, oh, ow], indices)?;
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, map))
}

/// Scatter `values[o]` to `indices[o]` in a zeroed tensor of the pooled-from shape.
pub fn scatter<T: Real>(values: &[T], map: &IndexMap) -> Result<Tensor<T>> {
    map.validate()?;
    let (in_plane, out_plane) = map.plane_sizes();
    if values.len() != map.indices.len() {
        return Err(shape_err!("unpool input has {} cells, index map {}", values.len(), map.indices.len()));
    }
    let mut out = vec![T::zero(); map.input_shape.iter().product()];
    for (p, (vals, idx)) in values.chunks(out_plane.max(1)).zip(map.indices.chunks(out_plane.max(1))).enumerate() {
        let dst = &mut out[p * in_plane..(p + 1) * in_plane];
        for (&v, &i) in vals.iter().zip(idx) {
            dst[i as usize] += v;
        }
    }
    Tensor::new(map.input_shape.to_vec(), out)
}

/// Reads `source[indices[o]]` for every pooled cell.
pub fn gather<T: Real>(source: &[T], map: &IndexMap) -> Result<Tensor<T>> {
    map.validate()?;
    let (in_plane, out_plane) = map.plane_sizes();
    let mut out = Vec::with_capacity(map.indices.len());
    for (p, idx) in map.indices.chunks(out_plane.max(1)).enumerate() {
        let src = &source[p * in_plane..(p + 1) * in_plane];
        out.extend(idx.iter().map(|&i| src[i as usize]));
    }
    Tensor::new(map.output_shape.to_vec(), out)
}

pub fn max_unpool2d<T: Real>(x: &Tensor<T>, map: &IndexMap) -> Result<Tensor<T>> {
    x.expect_rank(4, "max_unpool2d input")?;
    if x.shape() != map.output_shape {
        return Err(shape_err!(
            "unpool input {:?} does not match pooled shape {:?}",
            x.shape(),
            map.output_shape
        ));
    }
    scatter(x.data(), map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_picks_max() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, map) = maxpool2d(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(map.indices, vec![3]);
    }

    #[test]
    fn ties_pick_first_element() {
        let x = Tensor::full(vec![1, 1, 4, 4], 7.0f64);
        let (_, map) = maxpool2d(&x).unwrap();
        assert_eq!(map.indices, vec![0, 2, 8, 10]);
    }

    #[test]
    fn odd_extents_use_sentinel_padding() {
        let x = Tensor::new(vec![1, 1, 3, 3], vec![-5.0f64, -4.0, -3.0, -2.0, -1.0, -6.0, -7.0, -8.0, -9.0]).unwrap();
        let (y, map) = maxpool2d(&x).unwrap();
        assert!(map.padded);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[-1.0, -3.0, -7.0, -9.0]);
        let back = max_unpool2d(&y, &map).unwrap();
        assert_eq!(back.shape(), &[1, 1, 3, 3]);
    }

    #[test]
    fn out_of_range_index_is_integrity_error() {
        let map = IndexMap::new([1, 1, 2, 2], [1, 1, 1, 1], vec![4]).unwrap();
        let x = Tensor::new(vec![1, 1, 1, 1], vec![1.0f32]).unwrap();
        assert!(matches!(max_unpool2d(&x, &map), Err(Error::Integrity(_))));
    }
}

//! Convolution kernels (im2col + GEMM) shared by the 2D and 3D operators.
//!
//! A 2D convolution is carried as a 3D one with unit depth, so one geometry
//! and one pair of im2col/col2im routines serve both.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Real, Tensor, Transpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    /// Input extents (depth, height, width).
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        cin: usize,
        cout: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self> {
        let mut output = [0; 3];
        for a in 0..3 {
            if kernel[a] % 2 == 0 {
                return Err(shape_err!("kernel extents must be odd, got {:?}", kernel));
            }
            if stride[a] == 0 {
                return Err(shape_err!("stride must be at least 1"));
            }
            let span = input[a] + 2 * pad[a];
            if span < kernel[a] {
                return Err(shape_err!(
                    "kernel {:?} larger than padded input {:?} (pad {:?})",
                    kernel,
                    input,
                    pad
                ));
            }
            output[a] = (span - kernel[a]) / stride[a] + 1;
        }
        Ok(Self { batch, cin, cout, input, kernel, stride, pad, output })
    }

    /// Rows of the unfolded input matrix.
    pub fn patch_len(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    pub fn out_positions(&self) -> usize {
        self.output.iter().product()
    }

    pub fn in_positions(&self) -> usize {
        self.input.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
}

/// Range of output positions along one axis whose source coordinate
/// `o * stride + k - pad` falls inside `[0, extent)`.
fn valid_range(out: usize, extent: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // smallest o with o*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // largest o with o*stride + k - pad <= extent - 1
    let limit = extent + pad;
    let hi = if k >= limit { 0 } else { ((limit - 1 - k) / stride + 1).min(out) };
    (lo.min(hi), hi)
}

/// Unfolds one batch item `[cin, d, h, w]` into `col[patch_len, out_positions]`.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let np = od * oh * ow;
    let mut row = 0;
    for c in 0..g.cin {
        let plane = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            let (zlo, zhi) = valid_range(od, id, kz, sd, pd);
            for ky in 0..kh {
                let (ylo, yhi) = valid_range(oh, ih, ky, sh, ph);
                for kx in 0..kw {
                    let (xlo, xhi) = valid_range(ow, iw, kx, sw, pw);
                    let dst = &mut col[row * np..(row + 1) * np];
                    dst.fill(T::zero());
                    for oz in zlo..zhi {
                        let iz = oz * sd + kz - pd;
                        for oy in ylo..yhi {
                            let iy = oy * sh + ky - ph;
                            let src_row = &plane[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                            let out_row = &mut dst[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                            if xlo == xhi {
                                continue;
                            }
                            if sw == 1 {
                                let ix0 = xlo + kx - pw;
                                out_row[xlo..xhi].copy_from_slice(&src_row[ix0..ix0 + (xhi - xlo)]);
                            } else {
                                for ox in xlo..xhi {
                                    out_row[ox] = src_row[ox * sw + kx - pw];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `dx` (which is overwritten).
fn col2im<T: Real>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let np = od * oh * ow;
    dx.fill(T::zero());
    let mut row = 0;
    for c in 0..g.cin {
        let plane = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            let (zlo, zhi) = valid_range(od, id, kz, sd, pd);
            for ky in 0..kh {
                let (ylo, yhi) = valid_range(oh, ih, ky, sh, ph);
                for kx in 0..kw {
                    let (xlo, xhi) = valid_range(ow, iw, kx, sw, pw);
                    let src = &col[row * np..(row + 1) * np];
                    for oz in zlo..zhi {
                        let iz = oz * sd + kz - pd;
                        for oy in ylo..yhi {
                            let iy = oy * sh + ky - ph;
                            let dst_row = &mut plane[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                            let in_row = &src[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                            for ox in xlo..xhi {
                                dst_row[ox * sw + kx - pw] += in_row[ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `y[n] = W · im2col(x[n]) + b` for every batch item.
pub fn forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let k = g.patch_len();
    let np = g.out_positions();
    let in_len = g.cin * g.in_positions();
    let mut y = vec![T::zero(); g.batch * g.cout * np];
    y.par_chunks_mut(g.cout * np).enumerate().for_each(|(n, yn)| {
        for (co, row) in yn.chunks_mut(np).enumerate() {
            row.fill(b[co]);
        }
        let xn = &x[n * in_len..(n + 1) * in_len];
        if g.is_pointwise() {
            gemm(Transpose::No, Transpose::No, g.cout, np, k, T::one(), w, xn, T::one(), yn);
        } else {
            let mut col = vec![T::zero(); k * np];
            im2col(g, xn, &mut col);
            gemm(Transpose::No, Transpose::No, g.cout, np, k, T::one(), w, &col, T::one(), yn);
        }
    });
    y
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub fn backward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], dy: &[T], need_dx: bool) -> ConvGrads<T> {
    let k = g.patch_len();
    let np = g.out_positions();
    let in_len = g.cin * g.in_positions();
    let out_len = g.cout * np;
    let wlen = g.cout * k;

    let mut dx = if need_dx { Some(vec![T::zero(); g.batch * in_len]) } else { None };
    let mut dw = vec![T::zero(); wlen];
    let mut db = vec![T::zero(); g.cout];

    // Weight and bias gradients accumulate serially over the batch.
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * np] };
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy[n * out_len..(n + 1) * out_len];
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut col);
            &col
        };
        gemm(Transpose::No, Transpose::Yes, g.cout, k, np, T::one(), dyn_, cols, T::one(), &mut dw);
        for (co, row) in dyn_.chunks(np).enumerate() {
            db[co] += row.iter().copied().sum::<T>();
        }
    }

    if let Some(dx) = dx.as_mut() {
        dx.par_chunks_mut(in_len).enumerate().for_each(|(n, dxn)| {
            let dyn_ = &dy[n * out_len..(n + 1) * out_len];
            if g.is_pointwise() {
                gemm(Transpose::Yes, Transpose::No, k, np, g.cout, T::one(), w, dyn_, T::zero(), dxn);
            } else {
                let mut dcol = vec![T::zero(); k * np];
                gemm(Transpose::Yes, Transpose::No, k, np, g.cout, T::one(), w, dyn_, T::zero(), &mut dcol);
                col2im(g, &dcol, dxn);
            }
        });
    }
    ConvGrads { dx, dw, db }
}

/// Geometry for a 2D convolution of `x[N,Cin,H,W]` by `w[Cout,Cin,kH,kW]`.
pub fn geom2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvGeom> {
    x.expect_rank(4, "conv2d input")?;
    w.expect_rank(4, "conv2d weight")?;
    let (xs, ws) = (x.shape(), w.shape());
    if xs[1] != ws[1] {
        return Err(crate::error::Error::Config(format!(
            "conv2d input has {} channels but weight expects {}",
            xs[1], ws[1]
        )));
    }
    ConvGeom::new(xs[0], xs[1], ws[0], [1, xs[2], xs[3]], [1, ws[2], ws[3]], [1, stride, stride], [0, pad, pad])
}

/// Geometry for a 3D convolution of `x[N,Cin,D,H,W]` by `w[Cout,Cin,kD,kH,kW]`.
pub fn geom3d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: [usize; 3], pad: [usize; 3]) -> Result<ConvGeom> {
    x.expect_rank(5, "conv3d input")?;
    w.expect_rank(5, "conv3d weight")?;
    let (xs, ws) = (x.shape(), w.shape());
    if xs[1] != ws[1] {
        return Err(crate::error::Error::Config(format!(
            "conv3d input has {} channels but weight expects {}",
            xs[1], ws[1]
        )));
    }
    ConvGeom::new(xs[0], xs[1], ws[0], [xs[2], xs[3], xs[4]], [ws[2], ws[3], ws[4]], stride, pad)
}

//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terracer::autodiff::{Graph, Mode, Var};
use terracer::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, for relu checks.
pub fn rand_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) { v } else { -v }
    })
}

/// Direct sliding-window convolution over `[N, Cin, D, H, W]` with per-axis stride and padding.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv3d(
    x: &[f64],
    xs: [usize; 5],
    w: &[f64],
    ws: [usize; 5],
    b: &[f64],
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, [usize; 5]) {
    let [n, cin, d, h, wd] = xs;
    let [cout, _, kd, kh, kw] = ws;
    let od = (d + 2 * pad[0] - kd) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let mut y = vec![0.0; n * cout * od * oh * ow];
    for bn in 0..n {
        for co in 0..cout {
            for z in 0..od {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for a in 0..kd {
                                for p in 0..kh {
                                    for q in 0..kw {
                                        let iz = (z * stride[0] + a) as isize - pad[0] as isize;
                                        let iy = (r * stride[1] + p) as isize - pad[1] as isize;
                                        let ix = (c * stride[2] + q) as isize - pad[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        if iz >= d || iy >= h || ix >= wd {
                                            continue;
                                        }
                                        let xv = x[(((bn * cin + ci) * d + iz) * h + iy) * wd + ix];
                                        let wv = w[(((co * cin + ci) * kd + a) * kh + p) * kw + q];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        y[(((bn * cout + co) * od + z) * oh + r) * ow + c] = acc;
                    }
                }
            }
        }
    }
    (y, [n, cout, od, oh, ow])
}

/// Windowed 2x2 max with first-in-scan-order ties; odd edges use partial windows.
pub fn naive_maxpool(x: &[f64], s: [usize; 4]) -> (Vec<f64>, Vec<usize>) {
    let [n, c, h, w] = s;
    let (oh, ow) = ((h + 1) / 2, (w + 1) / 2);
    let mut vals = Vec::new();
    let mut idx = Vec::new();
    for p in 0..n * c {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut cands = Vec::new();
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for xx in 2 * ox..(2 * ox + 2).min(w) {
                        cands.push((y * w + xx, plane[y * w + xx]));
                    }
                }
                let max = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
                let first = cands.iter().filter(|c| c.1 == max).map(|c| c.0).min().unwrap();
                vals.push(max);
                idx.push(first);
            }
        }
    }
    (vals, idx)
}

/// Bilinear sample of one plane at output `(oy, ox)` with cell-center alignment.
pub fn bilinear_at(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize, oy: usize, ox: usize) -> f64 {
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let t = if i0 == i1 { 0.0 } else { s - i0 as f64 };
        (i0, i1, t)
    };
    let (y0, y1, ty) = coord(oy, h, oh);
    let (x0, x1, tx) = coord(ox, w, ow);
    let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
    let bot = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
    top * (1.0 - ty) + bot * ty
}

/// All-pairs boundary exclusion: a pixel is excluded when any differently
/// labelled pixel lies within `radius_m`.
pub fn brute_force_erosion(labels: &[u16], h: usize, w: usize, res: f64, radius_m: f64) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for a in 0..h * w {
        let (ay, ax) = ((a / w) as f64, (a % w) as f64);
        for b in 0..h * w {
            if labels[a] == labels[b] {
                continue;
            }
            let (by, bx) = ((b / w) as f64, (b % w) as f64);
            let d = (((ay - by) * res).powi(2) + ((ax - bx) * res).powi(2)).sqrt();
            if d <= radius_m + 1e-9 {
                out[a] = true;
                break;
            }
        }
    }
    out
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Reverse-mode gradient of a scalar-valued graph builder versus central
/// differences, for every input element. Returns the worst relative error.
pub fn check_inputs(
    inputs: &[Tensor<f64>],
    h: f64,
    floor: f64,
    build: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
) -> f64 {
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new(Mode::Train);
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone(), false).unwrap()).collect();
        let out = build(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new(Mode::Train);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true).unwrap()).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
        for i in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[i], numeric, floor));
        }
    }
    worst
}

/// Contracts a tensor node with fixed random weights, giving a scalar whose
/// gradient exercises every output element.
pub fn weighted_sum(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> Var {
    let mut r = rng(seed ^ 0xABCD);
    let w = rand_tensor(g.shape(x), &mut r);
    let wv = g.leaf(w, false).unwrap();
    let p = g.mul(x, wv).unwrap();
    g.sum(p).unwrap()
}

pub mod fixtures;
pub mod gradients;
pub mod oracles;

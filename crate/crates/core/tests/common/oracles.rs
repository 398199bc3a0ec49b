//! Seeded randomized comparisons of the engine against the brute-force oracles.

use rand::Rng;
use terracer::autodiff::{Graph, Mode};
use terracer::evaluation::erode_reference;
use terracer::ops::Interp;
use terracer::raster::{LabelRaster, NO_DATA};
use terracer::Tensor;

use super::{bilinear_at, brute_force_erosion, naive_conv3d, naive_maxpool, rand_tensor, rng};

pub const ORACLE_TOLERANCE: f64 = 1e-10;

pub type Case = fn(u64) -> Result<(), String>;

pub fn oracle_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d", conv2d_case),
        ("conv3d", conv3d_case),
        ("maxpool2d", maxpool_case),
        ("max_unpool2d", unpool_case),
        ("bilinear", bilinear_case),
    ]
}

fn close(name: &str, got: &[f64], want: &[f64]) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("{name}: {} values, oracle {}", got.len(), want.len()));
    }
    for (i, (a, b)) in got.iter().zip(want).enumerate() {
        if (a - b).abs() > ORACLE_TOLERANCE {
            return Err(format!("{name}[{i}]: {a} vs oracle {b}"));
        }
    }
    Ok(())
}

pub fn conv2d_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, cin, cout) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let k: usize = [1, 3, 5][r.gen_range(0..3)];
    let pad = r.gen_range(0..=k / 2);
    let stride = r.gen_range(1..=2);
    let h = r.gen_range(k.saturating_sub(2 * pad).max(1)..=9);
    let w = r.gen_range(k.saturating_sub(2 * pad).max(1)..=9);
    let x = rand_tensor(&[n, cin, h, w], &mut r);
    let wt = rand_tensor(&[cout, cin, k, k], &mut r);
    let b = rand_tensor(&[cout], &mut r);
    let mut g = Graph::<f64>::new(Mode::Eval);
    let (xv, wv, bv) = (g.input(x.clone()).unwrap(), g.input(wt.clone()).unwrap(), g.input(b.clone()).unwrap());
    let y = g.conv2d(xv, wv, bv, stride, pad).map_err(|e| e.to_string())?;
    let (want, ws) =
        naive_conv3d(x.data(), [n, cin, 1, h, w], wt.data(), [cout, cin, 1, k, k], b.data(), [1, stride, stride], [0, pad, pad]);
    if g.shape(y) != [ws[0], ws[1], ws[3], ws[4]] {
        return Err(format!("conv2d shape {:?} vs oracle {:?}", g.shape(y), ws));
    }
    close("conv2d", g.value(y).data(), &want)
}

pub fn conv3d_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, cin, cout) = (r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(1..=3));
    let kern = [[1, 3, 5][r.gen_range(0..3)], [1, 3][r.gen_range(0..2)], [1, 3][r.gen_range(0..2)]];
    let pad = [r.gen_range(0..=1), r.gen_range(0..=kern[1] / 2), r.gen_range(0..=kern[2] / 2)];
    let stride = [r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(1..=2)];
    let ext = |r: &mut rand_chacha::ChaCha8Rng, k: usize, p: usize| r.gen_range(k.saturating_sub(2 * p).max(1)..=9);
    let (d, h, w) = (ext(&mut r, kern[0], pad[0]), ext(&mut r, kern[1], pad[1]), ext(&mut r, kern[2], pad[2]));
    let x = rand_tensor(&[n, cin, d, h, w], &mut r);
    let wt = rand_tensor(&[cout, cin, kern[0], kern[1], kern[2]], &mut r);
    let b = rand_tensor(&[cout], &mut r);
    let mut g = Graph::<f64>::new(Mode::Eval);
    let (xv, wv, bv) = (g.input(x.clone()).unwrap(), g.input(wt.clone()).unwrap(), g.input(b.clone()).unwrap());
    let y = g.conv3d(xv, wv, bv, stride, pad).map_err(|e| e.to_string())?;
    let (want, ws) = naive_conv3d(x.data(), [n, cin, d, h, w], wt.data(), [cout, cin, kern[0], kern[1], kern[2]], b.data(), stride, pad);
    if g.shape(y) != ws {
        return Err(format!("conv3d shape {:?} vs oracle {:?}", g.shape(y), ws));
    }
    close("conv3d", g.value(y).data(), &want)
}

/// Coarse value grid so ties are common.
fn tied(shape: &[usize], r: &mut rand_chacha::ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(0..4) as f64)
}

pub fn maxpool_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let s = [r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=9), r.gen_range(1..=9)];
    let x = if r.gen_bool(0.5) { tied(&s, &mut r) } else { rand_tensor(&s, &mut r) };
    let mut g = Graph::<f64>::new(Mode::Eval);
    let xv = g.input(x.clone()).unwrap();
    let (y, map) = g.maxpool2d(xv).map_err(|e| e.to_string())?;
    let (vals, idx) = naive_maxpool(x.data(), s);
    close("maxpool2d", g.value(y).data(), &vals)?;
    let got: Vec<usize> = map.indices.iter().map(|&i| i as usize).collect();
    if got != idx {
        return Err(format!("maxpool2d indices {got:?} vs oracle {idx:?}"));
    }
    Ok(())
}

pub fn unpool_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let s = [r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=9), r.gen_range(1..=9)];
    let x = tied(&s, &mut r);
    let mut g = Graph::<f64>::new(Mode::Eval);
    let xv = g.input(x.clone()).unwrap();
    let (y, map) = g.maxpool2d(xv).unwrap();
    let v = rand_tensor(g.shape(y), &mut r);
    let vv = g.input(v.clone()).unwrap();
    let u = g.max_unpool2d(vv, &map).map_err(|e| e.to_string())?;
    let (_, idx) = naive_maxpool(x.data(), s);
    let (plane, pooled) = (s[2] * s[3], s[2].div_ceil(2) * s[3].div_ceil(2));
    let mut want = vec![0.0; x.numel()];
    for (o, &i) in idx.iter().enumerate() {
        want[(o / pooled) * plane + i] += v.data()[o];
    }
    if g.shape(u) != s {
        return Err(format!("unpool shape {:?} vs {:?}", g.shape(u), s));
    }
    close("max_unpool2d", g.value(u).data(), &want)
}

pub fn bilinear_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, c) = (r.gen_range(1..=2), r.gen_range(1..=2));
    let (h, w) = (r.gen_range(1..=9), r.gen_range(1..=9));
    let (oh, ow) = (r.gen_range(1..=9), r.gen_range(1..=9));
    let x = rand_tensor(&[n, c, h, w], &mut r);
    let mut g = Graph::<f64>::new(Mode::Eval);
    let xv = g.input(x.clone()).unwrap();
    let y = g.upsample(xv, (oh, ow), Interp::Bilinear).map_err(|e| e.to_string())?;
    let mut want = Vec::new();
    for plane in x.data().chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                want.push(bilinear_at(plane, h, w, oh, ow, oy, ox));
            }
        }
    }
    close("bilinear", g.value(y).data(), &want)
}

/// Random labels (with occasional NO_DATA) up to 32x32 at 20 or 300 m/px,
/// radius up to 400 m.
pub fn erosion_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (h, w) = (r.gen_range(1..=32), r.gen_range(1..=32));
    let res = if r.gen_bool(0.7) { 20.0 } else { 300.0 };
    let radius = [0.0, 20.0, 45.0, 200.0, 300.0, 424.3, r.gen_range(0.0..400.0)][r.gen_range(0..7)];
    let classes = r.gen_range(1..=4);
    let blocky = r.gen_range(1..=6);
    let data: Vec<u16> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w / blocky, i % w / blocky);
            if r.gen_bool(0.03) {
                NO_DATA
            } else {
                ((y * 7 + x * 3 + r.gen_bool(0.1) as usize) % classes) as u16
            }
        })
        .collect();
    let raster = LabelRaster::new(w, h, res, data.clone()).unwrap();
    let got = erode_reference(&raster, radius);
    let want = brute_force_erosion(&data, h, w, res, radius);
    if got != want {
        let bad = got.iter().zip(&want).position(|(a, b)| a != b).unwrap();
        return Err(format!("{h}x{w} at {res} m, radius {radius}: pixel {bad} differs"));
    }
    Ok(())
}

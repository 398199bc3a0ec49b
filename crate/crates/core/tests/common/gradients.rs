//! Finite-difference gradient checks for every differentiable operation and
//! for complete models.

use rand::seq::SliceRandom;
use rand::Rng;
use terracer::autodiff::{BnParams, Graph, Mode, ParamId, ParamKind, ParamStore};
use terracer::models::{preset, Model};
use terracer::ops::{BoxPool, Interp};
use terracer::raster::NO_DATA;
use terracer::training::{loss_multiscale, LossWeights};
use terracer::Tensor;

use super::{check_inputs, rand_away_from_zero, rand_tensor, rel_err, rng, weighted_sum};

pub const OP_STEP: f64 = 1e-5;
/// Whole networks hold thousands of relu/max kinks, so a large step can straddle
/// one while a small step drowns tiny gradients in cancellation noise. A
/// parameter passes when any step of the ladder agrees.
pub const MODEL_STEPS: [f64; 5] = [1e-5, 1e-6, 1e-7, 1e-4, 1e-8];
/// The ladder stops early once a step agrees this closely.
pub const MODEL_CLOSE: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
const FLOOR: f64 = 1e-7;

type OpCheck = fn(u64) -> f64;

/// Every differentiable operation with a per-seed worst relative error.
pub fn op_checks() -> Vec<(&'static str, OpCheck)> {
    vec![
        ("conv2d", conv2d),
        ("conv3d", conv3d),
        ("maxpool2d", maxpool2d),
        ("max_unpool2d", max_unpool2d),
        ("upsample_nearest", |s| upsample(s, Interp::Nearest)),
        ("upsample_bilinear", |s| upsample(s, Interp::Bilinear)),
        ("box_pool", box_pool),
        ("concat_channels", concat),
        ("residual_add", residual_add),
        ("mul", mul),
        ("scale", scale),
        ("relu", relu),
        ("reshape", reshape),
        ("sum", sum),
        ("mean_of", mean_of),
        ("batchnorm_train", batchnorm_train),
        ("batchnorm_eval", batchnorm_eval),
        ("softmax_cross_entropy", softmax_ce),
    ]
}

fn conv2d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (stride, pad) = (r.gen_range(1..=2), r.gen_range(0..=1));
    let k = if r.gen_bool(0.5) { 3 } else { 1 };
    let xs = [rand_tensor(&[2, 2, 5, 6], &mut r), rand_tensor(&[3, 2, k, k], &mut r), rand_tensor(&[3], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn conv3d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let pad = [r.gen_range(0..=1), 1, r.gen_range(0..=1)];
    let stride = [1, r.gen_range(1..=2), 1];
    let xs = [rand_tensor(&[1, 2, 4, 5, 4], &mut r), rand_tensor(&[2, 2, 3, 3, 3], &mut r), rand_tensor(&[2], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.conv3d(v[0], v[1], v[2], stride, pad).unwrap();
        weighted_sum(g, y, seed)
    })
}

/// Values with pairwise gaps far larger than the finite-difference step.
fn distinct(shape: &[usize], r: &mut rand_chacha::ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(r);
    Tensor::new(shape.to_vec(), order.into_iter().map(|i| i as f64 * 0.05 - 1.0).collect()).unwrap()
}

fn maxpool2d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (h, w) = (r.gen_range(2..=7), r.gen_range(2..=7));
    let xs = [distinct(&[1, 2, h, w], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let (y, _) = g.maxpool2d(v[0]).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn max_unpool2d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (h, w) = (r.gen_range(2..=7), r.gen_range(2..=7));
    let source = rand_tensor(&[1, 2, h, w], &mut r);
    let xs = [rand_tensor(&[1, 2, h.div_ceil(2), w.div_ceil(2)], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let s = g.leaf(source.clone(), false).unwrap();
        let (_, map) = g.maxpool2d(s).unwrap();
        let y = g.max_unpool2d(v[0], &map).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn upsample(seed: u64, mode: Interp) -> f64 {
    let mut r = rng(seed);
    let (h, w) = (r.gen_range(1..=5), r.gen_range(1..=5));
    let size = (r.gen_range(1..=9), r.gen_range(1..=9));
    let xs = [rand_tensor(&[2, 2, h, w], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.upsample(v[0], size, mode).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn box_pool(seed: u64) -> f64 {
    let mut r = rng(seed);
    let pool = BoxPool { cell: r.gen_range(1..=3), offset: (r.gen_range(0..=1), r.gen_range(0..=1)), cells: (2, 2) };
    let xs = [rand_tensor(&[1, 2, 8, 8], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.box_pool(v[0], pool).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn concat(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs = [rand_tensor(&[2, 1, 3, 3], &mut r), rand_tensor(&[2, 3, 3, 3], &mut r), rand_tensor(&[2, 2, 3, 3], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.concat_channels(v).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn residual_add(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs = [rand_tensor(&[1, 3, 4, 4], &mut r), rand_tensor(&[1, 3, 4, 4], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.residual_add(v[0], v[1]).unwrap();
        let y = g.mul(y, y).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn mul(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs = [rand_tensor(&[2, 5], &mut r), rand_tensor(&[2, 5], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.mul(v[0], v[1]).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn scale(seed: u64) -> f64 {
    let mut r = rng(seed);
    let s: f64 = r.gen_range(-3.0..3.0);
    let xs = [rand_tensor(&[3, 4], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.scale(v[0], s).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn relu(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs = [rand_away_from_zero(&[2, 3, 4], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.relu(v[0]).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn reshape(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs = [rand_tensor(&[2, 3, 4], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.reshape(v[0], vec![4, 6]).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn sum(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs = [rand_tensor(&[3, 3], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let sq = g.mul(v[0], v[0]).unwrap();
        g.sum(sq).unwrap()
    })
}

fn mean_of(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs = [rand_tensor(&[2, 4], &mut r), rand_tensor(&[2, 4], &mut r), rand_tensor(&[2, 4], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.mean_of(v).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn batchnorm_train(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs = [rand_tensor(&[2, 3, 3, 4], &mut r), rand_tensor(&[3], &mut r), rand_tensor(&[3], &mut r)];
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| {
        let y = g.batchnorm_with(v[0], v[1], v[2], 1e-5).unwrap();
        weighted_sum(g, y, seed)
    })
}

/// Running-statistics batchnorm: gradients with respect to the input and
/// the learned scale and shift, which live in a parameter store.
fn batchnorm_eval(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&[2, 3, 3, 3], &mut r);
    let mut store = ParamStore::new();
    let p = BnParams {
        gamma: store.add("g", ParamKind::Gamma, rand_tensor(&[3], &mut r)).unwrap(),
        beta: store.add("b", ParamKind::Beta, rand_tensor(&[3], &mut r)).unwrap(),
        running_mean: store.add("m", ParamKind::RunningMean, rand_tensor(&[3], &mut r)).unwrap(),
        running_var: store
            .add("v", ParamKind::RunningVar, Tensor::from_fn(vec![3], |_| r.gen_range(0.5..2.0)))
            .unwrap(),
    };
    let run = |store: &ParamStore<f64>, x: &Tensor<f64>, grad: bool| {
        let mut g = Graph::with_params(store, Mode::Eval);
        let xv = g.leaf(x.clone(), grad).unwrap();
        let y = g.batchnorm(xv, p, 1e-5, 0.1).unwrap();
        let l = weighted_sum(&mut g, y, seed);
        let value = g.value(l).item();
        let grads = grad.then(|| {
            let gr = g.backward(l).unwrap();
            (gr.wrt(xv).unwrap().clone(), gr.param(p.gamma).unwrap().clone(), gr.param(p.beta).unwrap().clone())
        });
        (value, grads)
    };
    let (_, grads) = run(&store, &x, true);
    let (gx, gg, gb) = grads.unwrap();
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let (mut a, mut b) = (x.clone(), x.clone());
        a.data_mut()[i] += OP_STEP;
        b.data_mut()[i] -= OP_STEP;
        let n = (run(&store, &a, false).0 - run(&store, &b, false).0) / (2.0 * OP_STEP);
        worst = worst.max(rel_err(gx.data()[i], n, FLOOR));
    }
    for (id, analytic) in [(p.gamma, gg), (p.beta, gb)] {
        for i in 0..3 {
            let mut s = store.clone();
            s.tensor_mut(id).data_mut()[i] += OP_STEP;
            let up = run(&s, &x, false).0;
            s.tensor_mut(id).data_mut()[i] -= 2.0 * OP_STEP;
            let down = run(&s, &x, false).0;
            worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * OP_STEP), FLOOR));
        }
    }
    worst
}

fn softmax_ce(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs = [rand_tensor(&[2, 5, 3, 3], &mut r)];
    let labels: Vec<u16> = (0..18).map(|_| if r.gen_bool(0.15) { NO_DATA } else { r.gen_range(0..5) }).collect();
    check_inputs(&xs, OP_STEP, FLOOR, &|g, v| g.softmax_cross_entropy(v[0], &labels, NO_DATA).unwrap())
}

/// Batch size of the end-to-end check; SegNet's cost is dominated by its
/// convolutions, so it runs on a single image.
pub fn tiny_batch(id: &str) -> usize {
    if id.starts_with("segnet") {
        1
    } else {
        2
    }
}

/// Input extent used for end-to-end checks of a preset.
pub fn tiny_extent(id: &str) -> usize {
    if id.starts_with("segnet") {
        32
    } else {
        16
    }
}

/// End-to-end check of a preset on a tiny input with 3 classes. The training
/// loss is differentiated along a random direction through all trainable
/// parameters and against `scalars` randomly chosen individual parameters.
pub fn model_check(id: &str, seed: u64, scalars: usize) -> f64 {
    let cfg = preset(id).unwrap().with_classes(3);
    let mut model: Model<f64> = Model::build(&cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5151);
    let e = tiny_extent(id);
    let n = tiny_batch(id);
    let x = rand_tensor(&[n, cfg.input_bands(), e, e], &mut r);
    let segnet = cfg.is_segnet();
    let pool = BoxPool::covering(e, e, 15);
    let n_labels = if segnet { n * pool.cells.0 * pool.cells.1 } else { n * e * e };
    let labels: Vec<u16> = (0..n_labels).map(|_| r.gen_range(0..3)).collect();
    let weights = LossWeights::default();
    let loss = |m: &Model<f64>, grad: bool| {
        let mut g = Graph::with_params(&m.params, Mode::Train);
        let xv = g.input(x.clone()).unwrap();
        let heads = m.forward(&mut g, xv).unwrap();
        let l = if segnet {
            loss_multiscale(&mut g, &heads, (e, e), pool, &labels, &weights).unwrap().loss
        } else {
            g.softmax_cross_entropy(heads[0], &labels, NO_DATA).unwrap()
        };
        let v = g.value(l).item();
        (v, grad.then(|| g.backward(l).unwrap().into_param_grads(m.params.len())))
    };
    let grads = loss(&model, true).1.unwrap();
    let trainable: Vec<_> = model.params.iter().filter(|(_, e)| e.kind.trainable()).map(|(id, _)| id).collect();
    let grad_at = |id: ParamId, k: usize| grads[id.index()].as_ref().map_or(0.0, |t| t.data()[k]);

    // Directional derivative along a random unit vector of equal-magnitude
    // entries over every trainable scalar; signs are stored as bits.
    let orig: Vec<Vec<f64>> = trainable.iter().map(|&id| model.params.tensor(id).data().to_vec()).collect();
    let unit = 1.0 / (orig.iter().map(Vec::len).sum::<usize>() as f64).sqrt();
    let mut sr = rng(seed ^ 0xd1d1);
    let signs: Vec<Vec<u64>> = orig.iter().map(|o| (0..o.len().div_ceil(64)).map(|_| sr.gen()).collect()).collect();
    let dir = |bits: &[u64], i: usize| if bits[i / 64] >> (i % 64) & 1 == 1 { unit } else { -unit };
    let analytic: f64 = trainable
        .iter()
        .zip(&signs)
        .filter_map(|(&id, b)| grads[id.index()].as_ref().map(|g| g.data().iter().enumerate().map(|(i, a)| a * dir(b, i)).sum::<f64>()))
        .sum();
    let mut worst = ladder(analytic, |h| {
        for ((&id, o), b) in trainable.iter().zip(&orig).zip(&signs) {
            for (i, (p, &v)) in model.params.tensor_mut(id).data_mut().iter_mut().zip(o).enumerate() {
                *p = v + h * dir(b, i);
            }
        }
        loss(&model, false).0
    });
    for (&id, o) in trainable.iter().zip(&orig) {
        model.params.tensor_mut(id).data_mut().copy_from_slice(o);
    }

    for _ in 0..scalars {
        let id = *trainable.choose(&mut r).unwrap();
        let k = r.gen_range(0..model.params.tensor(id).numel());
        let orig = model.params.tensor(id).data()[k];
        let err = ladder(grad_at(id, k), |h| {
            model.params.tensor_mut(id).data_mut()[k] = orig + h;
            let v = loss(&model, false).0;
            model.params.tensor_mut(id).data_mut()[k] = orig;
            v
        });
        worst = worst.max(err);
    }
    worst
}

/// Best agreement between `analytic` and central differences of `f` over
/// [`MODEL_STEPS`], stopping at the first step within [`MODEL_CLOSE`].
fn ladder(analytic: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for h in MODEL_STEPS {
        best = best.min(rel_err(analytic, (f(h) - f(-h)) / (2.0 * h), FLOOR));
        if best < MODEL_CLOSE {
            break;
        }
    }
    best
}

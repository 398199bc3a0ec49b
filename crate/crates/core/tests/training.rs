mod common;

use common::fixtures::{config, fine_tiles, fixture_model, scenes, FIXTURE_CLASSES};
use common::{rand_tensor, rng};
use rand::Rng;
use terracer::autodiff::{Graph, Mode};
use terracer::evaluation::predict_map;
use terracer::models::{preset, upsample_heads, Model};
use terracer::ops::BoxPool;
use terracer::raster::NO_DATA;
use terracer::training::{loss_multiscale, train_on, LossWeights, RunInfo, Strategy, TileSet};
use terracer::Tensor;

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn identical_configs_give_identical_trajectories() {
    let model_cfg = fixture_model("dn-e23-g12");
    let set = fine_tiles(&model_cfg);
    let run = |dir: &std::path::Path| {
        let cfg = config("dn-e23-g12", "fine", dir, serde_json::json!({"batch_size": 2, "max_steps": 10, "seed": 4}));
        train_on(&cfg, Model::build(&model_cfg, 4).unwrap(), &set).unwrap()
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (a, b) = (run(d1.path()), run(d2.path()));
    assert_eq!(a.metrics.len(), 10);
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!((x.step, x.epoch, x.loss.to_bits(), x.train_oa.to_bits()), (y.step, y.epoch, y.loss.to_bits(), y.train_oa.to_bits()));
    }
    for (id, e) in a.model.params.iter() {
        assert_eq!(bits(&e.tensor), bits(b.model.params.tensor(id)), "{}", e.name);
    }
}

#[test]
fn single_class_loss_trends_down() {
    let model_cfg = fixture_model("dn-e23-g12");
    let mut sc = scenes(&[7], 128, FIXTURE_CLASSES, &model_cfg);
    for v in &mut sc[0].labels.data {
        *v = 2;
    }
    let set = TileSet::new(sc, 64, 32, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("dn-e23-g12", "fine", dir.path(), serde_json::json!({"batch_size": 2, "max_steps": 15}));
    let out = train_on(&cfg, Model::build(&model_cfg, 0).unwrap(), &set).unwrap();
    let losses: Vec<f64> = out.metrics.iter().map(|m| m.loss).collect();
    let avg: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(avg.last().unwrap() < avg.first().unwrap(), "moving averages {avg:?}");
}

#[test]
fn no_data_pixels_receive_no_gradient() {
    let mut r = rng(3);
    // fine: per-pixel cross-entropy
    let z = rand_tensor(&[2, 4, 6, 5], &mut r);
    let labels: Vec<u16> = (0..60).map(|_| if r.gen_bool(0.3) { NO_DATA } else { r.gen_range(0..4) }).collect();
    let mut g = Graph::new(Mode::Train);
    let zv = g.leaf(z, true).unwrap();
    let l = g.softmax_cross_entropy(zv, &labels, NO_DATA).unwrap();
    let gr = g.backward(l).unwrap();
    let gz = gr.wrt(zv).unwrap().data();
    for (p, &lab) in labels.iter().enumerate() {
        let (n, px) = (p / 30, p % 30);
        for c in 0..4 {
            let v = gz[(n * 4 + c) * 30 + px];
            assert!(lab != NO_DATA || v == 0.0, "pixel {p} class {c}: {v}");
        }
    }
    // coarse: pixels under a no-data label cell
    let (e, cell) = (30, 15);
    let pool = BoxPool::covering(e, e, cell);
    let cells: Vec<u16> = vec![1, NO_DATA, NO_DATA, 0];
    let coarse = rand_tensor(&[1, 3, 15, 15], &mut r);
    let fine = rand_tensor(&[1, 3, e, e], &mut r);
    let mut g = Graph::new(Mode::Train);
    let (cv, fv) = (g.leaf(coarse, true).unwrap(), g.leaf(fine, true).unwrap());
    let m = loss_multiscale(&mut g, &[cv, fv], (e, e), pool, &cells, &LossWeights::default()).unwrap();
    let gf = g.backward(m.loss).unwrap().wrt(fv).unwrap().clone();
    let mut nonzero = 0;
    for c in 0..3 {
        for y in 0..e {
            for x in 0..e {
                let v = gf.data()[(c * e + y) * e + x];
                if cells[(y / cell) * 2 + x / cell] == NO_DATA {
                    assert_eq!(v, 0.0, "({c},{y},{x})");
                } else {
                    nonzero += (v != 0.0) as usize;
                }
            }
        }
    }
    assert!(nonzero > 0);
}

#[test]
fn checkpoint_reload_reproduces_forward_bitwise() {
    let model_cfg = fixture_model("dn-e23-g12");
    let set = fine_tiles(&model_cfg);
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("dn-e23-g12", "fine", dir.path(), serde_json::json!({"batch_size": 2, "max_steps": 3}));
    let out = train_on(&cfg, Model::build(&model_cfg, 9).unwrap(), &set).unwrap();
    let (info, reloaded) = RunInfo::load_model(out.checkpoints.last().unwrap()).unwrap();
    assert_eq!(info.model, model_cfg);
    assert_eq!(info.strategy, Strategy::Fine);
    let scene = &scenes(&[55], 64, FIXTURE_CLASSES, &model_cfg)[0];
    let forward = |m: &Model<f32>| {
        let mut g = Graph::with_params(&m.params, Mode::Eval);
        let x = g.input(scene.as_batch()).unwrap();
        let y = m.fused_logits(&mut g, x).unwrap();
        g.value(y).clone()
    };
    assert_eq!(bits(&forward(&out.model)), bits(&forward(&reloaded)));
}

#[test]
fn one_fine_epoch_beats_majority_class() {
    let model_cfg = fixture_model("dn-e23-g12");
    let set = fine_tiles(&model_cfg);
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("dn-e23-g12", "fine", dir.path(), serde_json::json!({"batch_size": 2, "epochs": 1}));
    let out = train_on(&cfg, Model::build(&model_cfg, 1).unwrap(), &set).unwrap();
    assert_eq!(out.metrics.len(), 4);
    let (mut hit, mut total) = (0usize, 0usize);
    let mut hist = [0usize; FIXTURE_CLASSES];
    for s in scenes(&[100, 101], 128, FIXTURE_CLASSES, &model_cfg) {
        let reference = s.fine_labels().unwrap();
        let pred = predict_map(&out.model, &s, Strategy::Fine, None).unwrap();
        for (&r, &p) in reference.data.iter().zip(&pred.data) {
            if r != NO_DATA {
                total += 1;
                hit += (r == p) as usize;
                hist[r as usize] += 1;
            }
        }
    }
    let oa = hit as f64 / total as f64;
    let majority = *hist.iter().max().unwrap() as f64 / total as f64;
    assert!(oa > majority, "OA {oa} vs majority {majority}");
}

fn segnet_setup() -> (Model<f64>, Tensor<f64>, BoxPool, Vec<u16>) {
    let cfg = preset("segnet-13").unwrap().with_classes(3);
    let model = Model::build(&cfg, 2).unwrap();
    let mut r = rng(21);
    let x = rand_tensor(&[1, 13, 32, 32], &mut r);
    let pool = BoxPool::covering(32, 32, 15);
    let labels = (0..9).map(|_| r.gen_range(0..3)).collect();
    (model, x, pool, labels)
}

type ParamGrads = Vec<Option<Tensor<f64>>>;

/// Loss value and parameter gradients of `f` applied to the SegNet heads.
fn segnet_loss(
    model: &Model<f64>,
    x: &Tensor<f64>,
    f: impl Fn(&mut Graph<'_, f64>, &[terracer::autodiff::Var]) -> terracer::autodiff::Var,
) -> (f64, ParamGrads) {
    let mut g = Graph::with_params(&model.params, Mode::Train);
    let xv = g.input(x.clone()).unwrap();
    let heads = model.forward(&mut g, xv).unwrap();
    let l = f(&mut g, &heads);
    (g.value(l).item(), g.backward(l).unwrap().into_param_grads(model.params.len()))
}

fn assert_grads_close(a: &ParamGrads, b: &ParamGrads, tol: f64) {
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        match (x, y) {
            (Some(x), Some(y)) => {
                for (u, v) in x.data().iter().zip(y.data()) {
                    assert!((u - v).abs() <= tol * (1.0 + u.abs().max(v.abs())), "param {i}: {u} vs {v}");
                }
            }
            (None, None) => {}
            (x, y) => panic!("param {i}: gradient presence differs ({} vs {})", x.is_some(), y.is_some()),
        }
    }
}

#[test]
fn zero_head_weight_drops_that_auxiliary_term() {
    let (model, x, pool, labels) = segnet_setup();
    let ce_of = |g: &mut Graph<'_, f64>, v| {
        let p = g.box_pool(v, pool).unwrap();
        g.softmax_cross_entropy(p, &labels, NO_DATA).unwrap()
    };
    // averaged path only
    let only = LossWeights { averaged: 1.0, head: 0.0, per_head: vec![] };
    let a = segnet_loss(&model, &x, |g, h| loss_multiscale(g, h, (32, 32), pool, &labels, &only).unwrap().loss);
    let b = segnet_loss(&model, &x, |g, h| {
        let ups = upsample_heads(g, h, (32, 32)).unwrap();
        let avg = g.mean_of(&ups).unwrap();
        ce_of(g, avg)
    });
    assert!((a.0 - b.0).abs() <= 1e-12 * b.0.abs());
    assert_grads_close(&a.1, &b.1, 1e-12);
    // one head switched off equals the full loss minus that head's term
    let full = LossWeights::default();
    let mut off = full.clone();
    off.per_head = vec![0.25, 0.25, 0.0, 0.25, 0.25];
    let c = segnet_loss(&model, &x, |g, h| loss_multiscale(g, h, (32, 32), pool, &labels, &off).unwrap().loss);
    let d = segnet_loss(&model, &x, |g, h| {
        let l = loss_multiscale(g, h, (32, 32), pool, &labels, &full).unwrap().loss;
        let ups = upsample_heads(g, h, (32, 32)).unwrap();
        let aux = ce_of(g, ups[2]);
        let aux = g.scale(aux, -0.25).unwrap();
        g.add(l, aux).unwrap()
    });
    assert!((c.0 - d.0).abs() <= 1e-12 * d.0.abs());
    assert_grads_close(&c.1, &d.1, 1e-10);
}

#[test]
fn uniform_weights_are_invariant_to_head_order() {
    let mut r = rng(8);
    let sizes = [4, 8, 16, 32];
    let heads: Vec<Tensor<f64>> = sizes.iter().map(|&s| rand_tensor(&[2, 3, s, s], &mut r)).collect();
    let pool = BoxPool::covering(32, 32, 15);
    let labels: Vec<u16> = (0..18).map(|_| r.gen_range(0..3)).collect();
    let run = |order: &[usize]| {
        let mut g = Graph::new(Mode::Train);
        let vars: Vec<_> = heads.iter().map(|t| g.leaf(t.clone(), true).unwrap()).collect();
        let ordered: Vec<_> = order.iter().map(|&i| vars[i]).collect();
        let l = loss_multiscale(&mut g, &ordered, (32, 32), pool, &labels, &LossWeights::default()).unwrap().loss;
        let gr = g.backward(l).unwrap();
        (g.value(l).item(), vars.iter().map(|&v| gr.wrt(v).unwrap().clone()).collect::<Vec<_>>())
    };
    let (l0, g0) = run(&[0, 1, 2, 3]);
    for order in [[3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]] {
        let (l, gs) = run(&order);
        assert!((l - l0).abs() <= 1e-12 * l0.abs(), "{order:?}");
        for (a, b) in gs.iter().zip(&g0) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }
}

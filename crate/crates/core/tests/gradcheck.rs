mod common;

use common::gradients::{model_check, op_checks, MODEL_TOLERANCE, OP_TOLERANCE};
use terracer::models::PRESETS;

#[test]
fn every_op_matches_central_differences() {
    for (name, check) in op_checks() {
        for seed in 0..20 {
            let err = check(seed);
            assert!(err < OP_TOLERANCE, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn every_preset_matches_central_differences() {
    for id in PRESETS {
        for seed in 100..102 {
            let err = model_check(id, seed, 2);
            assert!(err < MODEL_TOLERANCE, "{id} seed {seed}: relative error {err:e}");
        }
    }
}

use memtrans_core::cost::predict_steps;
use memtrans_core::crossbar::{CrossbarConfig, CrossbarEngine};
use std::collections::BTreeMap;

use memtrans_core::decompose::{decompose_attention, decompose_layer, Buffer, Program, Step};
use memtrans_core::dense::{store_weights, DenseConfig};
use memtrans_core::exec::{execute, run_layer, IntegerEngine, QuantizedWeights, WeightBank};
use memtrans_core::trace::Bandwidths;
use memtrans_core::{LayerSpec, WeightSet};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    spec: LayerSpec,
    bank: WeightBank,
    x: Array2<f64>,
}

fn case(n: usize, m: usize, heads: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = LayerSpec::new(n, m, 2 * m, heads).unwrap();
    let w = WeightSet::random(&spec, &mut rng);
    let x = Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
    Case {
        bank: WeightBank::new(&spec, &w).unwrap(),
        spec,
        x,
    }
}

fn exact_cfg() -> CrossbarConfig {
    CrossbarConfig {
        noise_fraction: 0.0,
        ideal_adc: true,
        ..Default::default()
    }
}

#[test]
fn ideal_crossbar_equals_integer_engine() {
    for (n, m, heads) in [(1, 2, 1), (2, 4, 2), (4, 8, 2), (3, 6, 3)] {
        for seed in 0..3 {
            let c = case(n, m, heads, seed);
            let program = decompose_layer(&c.spec);
            let qw = QuantizedWeights::new(&c.bank, 8).unwrap();
            let cfg = exact_cfg();
            let xbar = run_layer(&program, c.x.view(), &c.bank, &CrossbarEngine::new(cfg, &qw).unwrap()).unwrap();
            let int = run_layer(&program, c.x.view(), &c.bank, &IntegerEngine::new(&qw, cfg.precision())).unwrap();
            assert_eq!(xbar.buffers, int.buffers, "n={n} m={m} heads={heads} seed={seed}");
        }
    }
}

#[test]
fn tiled_inner_dimension_stays_exact() {
    // inner length 2 * 8 + 1 spans three 8-row tiles
    let c = case(2, 8, 1, 9);
    let program = decompose_layer(&c.spec);
    let qw = QuantizedWeights::new(&c.bank, 8).unwrap();
    let cfg = CrossbarConfig { rows: 8, ..exact_cfg() };
    let xbar = run_layer(&program, c.x.view(), &c.bank, &CrossbarEngine::new(cfg, &qw).unwrap()).unwrap();
    let int = run_layer(&program, c.x.view(), &c.bank, &IntegerEngine::new(&qw, cfg.precision())).unwrap();
    assert_eq!(xbar.buffers, int.buffers);
}

#[test]
fn dense_backed_weights_read_back_exactly() {
    let c = case(2, 4, 2, 3);
    let program = decompose_layer(&c.spec);
    let qw = QuantizedWeights::new(&c.bank, 8).unwrap();
    let dense = DenseConfig::default();
    let store = store_weights(&program, &qw, &dense).unwrap();
    let cfg = exact_cfg();
    let plain = run_layer(&program, c.x.view(), &c.bank, &CrossbarEngine::new(cfg, &qw).unwrap()).unwrap();
    let engine = CrossbarEngine::new(cfg, &qw).unwrap().with_dense(&store, dense.noise_amp());
    let backed = run_layer(&program, c.x.view(), &c.bank, &engine).unwrap();
    assert_eq!(plain.buffers, backed.buffers);
    let summary = engine.summarize(&backed, Bandwidths::default());
    assert!(summary.totals.dense_cell_reads > 0);
    assert_eq!(summary.dense_banks_used, 1);
}

#[test]
fn noisy_runs_are_deterministic_per_seed() {
    let c = case(4, 8, 2, 1);
    let program = decompose_layer(&c.spec);
    let qw = QuantizedWeights::new(&c.bank, 8).unwrap();
    let run = |seed| {
        let cfg = CrossbarConfig { seed, ..Default::default() };
        run_layer(&program, c.x.view(), &c.bank, &CrossbarEngine::new(cfg, &qw).unwrap())
            .unwrap()
            .output()
            .unwrap()
            .clone()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn predicted_steps_match_trace() {
    for (n, m, heads) in [(1, 2, 1), (4, 8, 2), (8, 8, 4)] {
        let c = case(n, m, heads, 2);
        let program = decompose_layer(&c.spec);
        let qw = QuantizedWeights::new(&c.bank, 8).unwrap();
        for dup in [1, 2, 4] {
            for s in [1, 2, 3] {
                let cfg = CrossbarConfig {
                    dup_factor: dup,
                    scale_factor: s,
                    ..exact_cfg()
                };
                let engine = CrossbarEngine::new(cfg, &qw).unwrap();
                let run = run_layer(&program, c.x.view(), &c.bank, &engine).unwrap();
                let summary = engine.summarize(&run, Bandwidths::default());
                assert_eq!(summary.total_steps(), predict_steps(&program, &cfg).unwrap());
            }
        }
    }
}

#[test]
fn noisy_softmax_rows_stay_normalized() {
    let n = 4;
    let spec = LayerSpec::new(n, n, 1, 1).unwrap();
    let program = Program {
        layer: spec,
        steps: decompose_attention(&spec)
            .into_iter()
            .filter(|o| (4..=6).contains(&o.origin.row))
            .map(Step::SubOp)
            .collect(),
    };
    let bank = WeightBank::new(&spec, &WeightSet::zeros(&spec)).unwrap();
    let qw = QuantizedWeights::new(&bank, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut worst, mut total, mut rows) = (0.0f64, 0.0, 0);
    for seed in 0..1000 {
        let q = Array2::from_shape_fn((n, n), |_| rng.random_range(-2.0..2.0));
        let k = Array2::from_shape_fn((n, n), |_| rng.random_range(-2.0..2.0));
        let inputs = BTreeMap::from([
            (Buffer::Query { head: 0 }, q),
            (Buffer::KeyScaled { head: 0 }, k),
            (Buffer::Value { head: 0 }, Array2::eye(n)),
        ]);
        let cfg = CrossbarConfig { seed, ..Default::default() };
        let run = execute(&program, inputs, &bank, &CrossbarEngine::new(cfg, &qw).unwrap()).unwrap();
        for row in run.buffer(Buffer::HeadsConcat).unwrap().rows() {
            let off = (row.sum() - 1.0).abs();
            worst = worst.max(off);
            total += off;
            rows += 1;
        }
    }
    let mean = total / rows as f64;
    assert!(mean <= 0.02, "mean row-sum error {mean}");
    // numerator and a_i are read independently, each within 5%, plus ADC rounding
    assert!(worst <= 1.05 / 0.95 - 1.0 + 0.02, "worst row-sum error {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn duplication_halves_steps(
        rows_mult in 1usize..6,
        k in 1usize..4,
        inner in 1usize..400,
        digits in 1u32..7,
    ) {
        let rows = rows_mult * 2 * k;
        let step = |d| CrossbarConfig { dup_factor: d, ..Default::default() }.session_steps(digits, rows, inner);
        prop_assert_eq!(step(2 * k) * 2, step(k));
    }
}

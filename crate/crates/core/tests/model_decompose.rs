use std::collections::BTreeMap;

use memtrans_core::decompose::{decompose_attention, decompose_layer, Block, Buffer, MultiplyKind, Program, Step};
use memtrans_core::exec::{execute, RealEngine, WeightBank};
use memtrans_core::model::{encode_layer, load_layer, parse_layer, quantize, QuantTensor};
use memtrans_core::oracle::{layer_norm, softmax_rows, variance_by_identity, SoftmaxMode};
use memtrans_core::{Error, LayerSpec, NormParams, WeightSet};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy() -> (LayerSpec, WeightSet) {
    let spec = LayerSpec::new(3, 4, 8, 2).unwrap();
    let w = WeightSet::random(&spec, &mut ChaCha8Rng::seed_from_u64(5));
    (spec, w)
}

#[test]
fn layer_file_round_trip() {
    let (spec, w) = toy();
    let (bytes, meta) = encode_layer(&spec, &w).unwrap();
    let (spec2, w2) = parse_layer(&meta, &bytes).unwrap();
    assert_eq!(spec2, spec);
    let (bytes2, meta2) = encode_layer(&spec2, &w2).unwrap();
    assert_eq!(bytes2, bytes);
    assert_eq!(meta2, meta);
}

#[test]
fn loader_errors_are_typed() {
    let (spec, w) = toy();
    let (bytes, meta) = encode_layer(&spec, &w).unwrap();

    let mut missing = meta.clone();
    missing.tensors.retain(|t| t.name != "w_k");
    assert!(matches!(parse_layer(&missing, &bytes), Err(Error::Schema(_))));

    let mut reshaped = meta.clone();
    reshaped.tensors[0].shape = vec![2, 8];
    assert!(matches!(parse_layer(&reshaped, &bytes), Err(Error::Dimension { .. })));

    assert!(matches!(parse_layer(&meta, &bytes[..bytes.len() - 4]), Err(Error::Data(_))));

    let mut nan = bytes.clone();
    nan[..4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(parse_layer(&meta, &nan), Err(Error::Data(_))));

    let mut bad_heads = meta.clone();
    bad_heads.layer.n_heads = 3;
    assert!(parse_layer(&bad_heads, &bytes).is_err());
}

#[test]
fn malformed_sidecar_is_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, w) = toy();
    let (bytes, _) = encode_layer(&spec, &w).unwrap();
    let wpath = dir.path().join("w.f32");
    let mpath = dir.path().join("w.json");
    std::fs::write(&wpath, bytes).unwrap();
    std::fs::write(&mpath, "{\"layer\": {}, \"tensors\": [").unwrap();
    assert!(matches!(load_layer(&wpath, &mpath), Err(Error::Schema(_))));
    let missing = dir.path().join("nope.json");
    assert!(matches!(load_layer(&wpath, &missing), Err(Error::Io { .. })));
}

#[test]
fn subop_counts() {
    let one = decompose_layer(&LayerSpec::new(4, 8, 16, 1).unwrap());
    assert_eq!(one.subops().count(), 13);
    assert_eq!(one.epilogues().count(), 2);
    let attn = one.subops().filter(|s| s.origin.block == Block::Attention).count();
    let ff = one.subops().filter(|s| s.origin.block == Block::FeedForward).count();
    let ln = one.subops().filter(|s| s.origin.block == Block::LayerNorm).count();
    assert_eq!((attn, ff, ln), (7, 2, 4));

    let sixteen = decompose_attention(&LayerSpec::new(4, 64, 16, 16).unwrap());
    assert_eq!(sixteen.len(), 16 * 6 + 1);

    let masked = decompose_layer(&LayerSpec::new(4, 8, 16, 1).unwrap().without_attention());
    assert_eq!(masked.subops().count(), 4);
    assert_eq!(masked.epilogues().count(), 1);
}

#[test]
fn multiply_kinds_per_row() {
    let ops = decompose_attention(&LayerSpec::new(2, 4, 8, 1).unwrap());
    let kinds: Vec<(u8, MultiplyKind)> = ops.iter().map(|o| (o.origin.row, o.multiply_kind)).collect();
    use MultiplyKind::{NonWeightStationary as NW, WeightStationary as WS};
    assert_eq!(
        kinds,
        [(1, WS), (2, WS), (3, WS), (4, NW), (5, NW), (6, NW), (7, WS)]
    );
}

#[test]
fn program_json_is_stable() {
    let spec = LayerSpec::new(2, 4, 8, 1).unwrap();
    let a = serde_json::to_string(&decompose_layer(&spec)).unwrap();
    let b = serde_json::to_string(&decompose_layer(&spec)).unwrap();
    assert_eq!(a, b);
    let back: Program = serde_json::from_str(&a).unwrap();
    assert_eq!(back, decompose_layer(&spec));
}

/// Rows 4-6 of one head run with `Q = S`, `K/sqrt(d_k) = I`.
pub fn softmax_by_subops(s: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
    let n = s.nrows();
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
    let inputs = BTreeMap::from([
        (Buffer::Query { head: 0 }, s.clone()),
        (Buffer::KeyScaled { head: 0 }, Array2::eye(n)),
        (Buffer::Value { head: 0 }, v.clone()),
    ]);
    let run = execute(&program, inputs, &bank, &RealEngine::new(&bank)).unwrap();
    run.buffer(Buffer::HeadsConcat).unwrap().clone()
}

fn matrix(n: usize, m: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, n * m).prop_map(move |v| Array2::from_shape_vec((n, m), v).unwrap())
}

proptest! {
    #[test]
    fn softmax_is_three_subops(
        (s, v) in (1usize..7).prop_flat_map(|n| (matrix(n, n, -10.0, 10.0), matrix(n, n, -10.0, 10.0)))
    ) {
        let got = softmax_by_subops(&s, &v);
        let want = softmax_rows(s.view(), SoftmaxMode::Literal).dot(&v);
        for (a, b) in got.iter().zip(want.iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn literal_and_stable_softmax_agree(s in (1usize..6).prop_flat_map(|n| matrix(n, n + 1, -20.0, 20.0))) {
        let a = softmax_rows(s.view(), SoftmaxMode::Literal);
        let b = softmax_rows(s.view(), SoftmaxMode::Stabilized);
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for row in a.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_identity(u in (1usize..5, 2usize..9).prop_flat_map(|(n, m)| matrix(n, m, -3.0, 3.0))) {
        let var = variance_by_identity(u.view());
        for (row, v) in u.rows().into_iter().zip(var.iter()) {
            let mean = row.mean().unwrap();
            let direct = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / row.len() as f64;
            prop_assert!((direct - v).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(u in (1usize..4, 3usize..9).prop_flat_map(|(n, m)| matrix(n, m, -3.0, 3.0))) {
        let out = layer_norm(u.view(), NormParams { gamma: 1.0, beta: 0.0, epsilon: 0.0 });
        for (row, src) in out.rows().into_iter().zip(u.rows()) {
            let spread = src.iter().fold(0.0f64, |a, &b| a.max((b - src[0]).abs()));
            prop_assume!(spread > 1e-3);
            prop_assert!(row.mean().unwrap().abs() < 1e-9);
            prop_assert!((row.mapv(|x| x * x).mean().unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quantize_is_odd(t in matrix(3, 4, -5.0, 5.0), bits in 2u32..=16) {
        let q = quantize(t.view(), bits).unwrap();
        let neg = quantize((-&t).view(), bits).unwrap();
        prop_assert_eq!(neg.data, q.data.mapv(|x| -x));
        prop_assert_eq!(neg.scale, q.scale);
    }

    #[test]
    fn quantize_error_is_half_a_step(t in matrix(3, 4, -5.0, 5.0), bits in 2u32..=16) {
        let q = quantize(t.view(), bits).unwrap();
        let limit = QuantTensor::limit(bits);
        prop_assert!(q.data.iter().all(|x| x.abs() <= limit));
        for (a, b) in t.iter().zip(q.dequantize().iter()) {
            prop_assert!((a - b).abs() <= q.scale * 0.5 * (1.0 + 1e-12));
        }
    }
}

#[test]
fn quantize_rejects_bad_input() {
    let t = Array2::from_elem((2, 2), 1.0);
    assert!(matches!(quantize(t.view(), 1), Err(Error::Config(_))));
    let nan = Array2::from_elem((1, 1), f64::NAN);
    assert!(matches!(quantize(nan.view(), 8), Err(Error::Data(_))));
    let z = quantize(Array2::<f64>::zeros((2, 2)).view(), 8).unwrap();
    assert_eq!(z.scale, 1.0);
}

#[test]
fn real_execution_matches_oracle_for_random_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let n = rng.random_range(1..5);
        let heads = rng.random_range(1..3);
        let m = heads * rng.random_range(1..4);
        let spec = LayerSpec::new(n, m, 2 * m, heads).unwrap();
        let w = WeightSet::random(&spec, &mut rng);
        let x = Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
        let bank = WeightBank::new(&spec, &w).unwrap();
        let run = memtrans_core::exec::run_layer(&decompose_layer(&spec), x.view(), &bank, &RealEngine::new(&bank)).unwrap();
        let want = memtrans_core::oracle::layer_forward(x.view(), &w, &spec, Default::default()).unwrap();
        for (a, b) in run.output().unwrap().iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

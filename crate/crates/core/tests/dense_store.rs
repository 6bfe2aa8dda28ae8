use memtrans_core::crossbar::session_rng;
use memtrans_core::decompose::decompose_layer;
use memtrans_core::dense::{cells_to_weight, plan_layout, read_column, store_weights, weight_to_cells, DenseBank, DenseConfig, BASE_READ_NOISE};
use memtrans_core::exec::{QuantizedWeights, WeightBank};
use memtrans_core::{LayerSpec, WeightSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cells misread over `reads` full-column reads of a randomly programmed bank.
fn readback_errors(bits_per_cell: u32, multiplier: f64, reads: usize, seed: u64) -> usize {
    let rows = 1024;
    let mut bank = DenseBank::new(rows, 4, bits_per_cell);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = bank.levels();
    let values: Vec<u8> = (0..rows * 4).map(|_| rng.random_range(0..=top)).collect();
    bank.write(0, &values).unwrap();
    let mut errors = 0;
    for r in 0..reads {
        let col = r % 4;
        let got = read_column(&bank, col, &mut rng, multiplier * BASE_READ_NOISE).unwrap();
        errors += got.iter().zip(&values[col * rows..(col + 1) * rows]).filter(|(a, b)| a != b).count();
    }
    errors
}

#[test]
fn no_readback_errors_within_margin() {
    assert_eq!(readback_errors(2, 5.0, 200, 1), 0);
    assert_eq!(readback_errors(1, 18.0, 200, 2), 0);
}

#[test]
fn errors_appear_past_the_margin() {
    assert!(readback_errors(2, 10.0, 50, 3) > 0);
    assert!(readback_errors(1, 40.0, 50, 4) > 0);
}

#[test]
fn layout_packs_every_weight_column_once() {
    let spec = LayerSpec::new(4, 16, 32, 2).unwrap();
    let program = decompose_layer(&spec);
    let cfg = DenseConfig { rows: 64, cols: 256, ..Default::default() };
    let layout = plan_layout(&program, &cfg).unwrap();
    let cells_per = cfg.cells_per_weight();
    let mut starts: Vec<(usize, usize, usize)> = layout
        .entries
        .iter()
        .map(|e| (e.bank, e.start_col * cfg.rows + e.start_row, e.cells))
        .collect();
    starts.sort();
    for w in starts.windows(2) {
        if w[0].0 == w[1].0 {
            assert!(w[0].1 + w[0].2 <= w[1].1, "overlap {w:?}");
        }
    }
    let total: usize = layout.entries.iter().map(|e| e.weights).sum();
    assert_eq!(total as u64, spec.crossbar_param_count());
    assert_eq!(layout.mapped_bits, total as u64 * cfg.weight_bits as u64);
    for e in &layout.entries {
        assert_eq!(e.cells, e.weights * cells_per);
        if e.cells <= cfg.rows {
            let (a, b) = e.column_span(cfg.rows);
            assert_eq!(a, b, "short column straddles: {e:?}");
        }
    }
}

#[test]
fn stored_weights_read_back_noiselessly() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = LayerSpec::new(2, 8, 16, 2).unwrap();
    let bank = WeightBank::new(&spec, &WeightSet::random(&spec, &mut rng)).unwrap();
    let qw = QuantizedWeights::new(&bank, 8).unwrap();
    let program = decompose_layer(&spec);
    let store = store_weights(&program, &qw, &DenseConfig::default()).unwrap();
    for e in &store.layout().entries {
        let mut r = session_rng(0, e.subop, e.t);
        let read = store.read_session(e.subop, e.t, 0.0, &mut r).unwrap();
        assert_eq!(read.weights.len(), e.weights);
    }
    assert!(store.read_session(9999, 1, 0.0, &mut rng).is_err());
}

proptest! {
    #[test]
    fn cell_codec_round_trip(w in -128i32..=127, per_cell in prop::sample::select(vec![1u32, 2, 4, 8])) {
        let cells = weight_to_cells(w, 8, per_cell);
        prop_assert_eq!(cells.len() as u32, 8 / per_cell);
        prop_assert!(cells.iter().all(|&c| (c as u32) < (1 << per_cell)));
        prop_assert_eq!(cells_to_weight(&cells, 8, per_cell), w);
    }
}

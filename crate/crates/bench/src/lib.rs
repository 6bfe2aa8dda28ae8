//! Shared fixtures for the benchmarks.

use memtrans_core::decompose::{decompose_layer, Program};
use memtrans_core::exec::{QuantizedWeights, WeightBank};
use memtrans_core::model::toy_layer;
use memtrans_core::ndarray::Array2;
use memtrans_core::LayerSpec;

pub struct Fixture {
    pub spec: LayerSpec,
    pub program: Program,
    pub bank: WeightBank,
    pub quantized: QuantizedWeights,
    pub input: Array2<f64>,
}

/// Random layer with `ff = 4 * hidden` and 8-bit quantized weights.
pub fn fixture(tokens: usize, hidden: usize, heads: usize, seed: u64) -> Fixture {
    let spec = LayerSpec::new(tokens, hidden, 4 * hidden, heads).expect("valid toy shape");
    let (weights, input) = toy_layer(&spec, seed);
    let bank = WeightBank::new(&spec, &weights).expect("weights match spec");
    let quantized = QuantizedWeights::new(&bank, 8).expect("8-bit quantization");
    Fixture {
        program: decompose_layer(&spec),
        spec,
        bank,
        quantized,
        input,
    }
}

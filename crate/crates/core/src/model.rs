//! Transformer layer description, weights, quantized tensors and the
//! raw-f32 + JSON sidecar file format.
//!
//! A weight file is a concatenation of row-major little-endian `f32`
//! tensors. The sidecar names every tensor with its shape and byte offset:
//!
//! ```json
//! {"layer": {"n_tokens": 4, "hidden": 8, "ff_width": 16, "head_width": 4,
//!            "n_heads": 2, "has_attention": true},
//!  "tensors": [{"name": "w_q", "shape": [8, 8], "offset_bytes": 0}, ...]}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of one transformer layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Sequence length.
    pub n_tokens: usize,
    pub hidden: usize,
    pub ff_width: usize,
    pub head_width: usize,
    pub n_heads: usize,
    /// Whether the attention component is present (it is masked in some models).
    pub has_attention: bool,
}

impl LayerSpec {
    pub fn new(n_tokens: usize, hidden: usize, ff_width: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || !hidden.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "hidden width {hidden} is not divisible by {n_heads} heads"
            )));
        }
        let spec = LayerSpec {
            n_tokens,
            hidden,
            ff_width,
            head_width: hidden / n_heads,
            n_heads,
            has_attention: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn without_attention(mut self) -> Self {
        self.has_attention = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_tokens", self.n_tokens),
            ("hidden", self.hidden),
            ("ff_width", self.ff_width),
            ("head_width", self.head_width),
            ("n_heads", self.n_heads),
        ] {
            if v == 0 {
                return Err(Error::Schema(format!("layer field `{name}` must be at least 1")));
            }
        }
        if self.n_heads * self.head_width != self.hidden {
            return Err(Error::dim(
                "layer.head_width",
                format!("n_heads x head_width == {}", self.hidden),
                format!("{} x {}", self.n_heads, self.head_width),
            ));
        }
        Ok(())
    }

    /// Parameters that live in the dense crossbar: every matrix and bias
    /// consumed by a weight-stationary sub-operation.
    pub fn crossbar_param_count(&self) -> u64 {
        let (m, h) = (self.hidden as u64, self.ff_width as u64);
        let ff = 2 * m * h + h + m;
        if self.has_attention {
            4 * m * m + ff
        } else {
            ff
        }
    }

    /// All parameters including the layer-norm scalars (three per norm block).
    pub fn param_count(&self) -> u64 {
        self.crossbar_param_count() + 3 * self.norm_blocks() as u64
    }

    pub fn norm_blocks(&self) -> usize {
        if self.has_attention {
            2
        } else {
            1
        }
    }
}

/// Per-block layer-norm parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for NormParams {
    fn default() -> Self {
        NormParams {
            gamma: 1.0,
            beta: 0.0,
            epsilon: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub norm: NormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardWeights {
    pub w_a: Array2<f64>,
    pub b_a: Array1<f64>,
    pub w_b: Array2<f64>,
    pub b_b: Array1<f64>,
    pub norm: NormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub attention: Option<AttentionWeights>,
    pub feed_forward: FeedForwardWeights,
}

impl WeightSet {
    pub fn zeros(spec: &LayerSpec) -> Self {
        let (m, h) = (spec.hidden, spec.ff_width);
        let attention = spec.has_attention.then(|| AttentionWeights {
            w_q: Array2::zeros((m, m)),
            w_k: Array2::zeros((m, m)),
            w_v: Array2::zeros((m, m)),
            w_o: Array2::zeros((m, m)),
            norm: NormParams::default(),
        });
        WeightSet {
            attention,
            feed_forward: FeedForwardWeights {
                w_a: Array2::zeros((m, h)),
                b_a: Array1::zeros(h),
                w_b: Array2::zeros((h, m)),
                b_b: Array1::zeros(m),
                norm: NormParams::default(),
            },
        }
    }

    /// Uniform random weights scaled by `1/sqrt(fan_in)`; biases in ±0.1.
    pub fn random<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Self {
        let (m, h) = (spec.hidden, spec.ff_width);
        let mut mat = |rows: usize, cols: usize| {
            let a = 1.0 / (rows as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..=a))
        };
        let attention = spec.has_attention.then(|| AttentionWeights {
            w_q: mat(m, m),
            w_k: mat(m, m),
            w_v: mat(m, m),
            w_o: mat(m, m),
            norm: NormParams::default(),
        });
        let w_a = mat(m, h);
        let w_b = mat(h, m);
        let b_a = Array1::from_shape_fn(h, |_| rng.random_range(-0.1..=0.1));
        let b_b = Array1::from_shape_fn(m, |_| rng.random_range(-0.1..=0.1));
        WeightSet {
            attention,
            feed_forward: FeedForwardWeights {
                w_a,
                b_a,
                w_b,
                b_b,
                norm: NormParams::default(),
            },
        }
    }

    pub fn validate(&self, spec: &LayerSpec) -> Result<()> {
        let (m, h) = (spec.hidden, spec.ff_width);
        let check = |name: &str, found: &[usize], expected: &[usize]| {
            if found != expected {
                Err(Error::dim(name, format!("{expected:?}"), format!("{found:?}")))
            } else {
                Ok(())
            }
        };
        match (&self.attention, spec.has_attention) {
            (Some(a), true) => {
                check("w_q", a.w_q.shape(), &[m, m])?;
                check("w_k", a.w_k.shape(), &[m, m])?;
                check("w_v", a.w_v.shape(), &[m, m])?;
                check("w_o", a.w_o.shape(), &[m, m])?;
                check_norm("attn_norm", &a.norm)?;
            }
            (None, false) => {}
            (None, true) => return Err(Error::Schema("attention weights missing".into())),
            (Some(_), false) => {
                return Err(Error::Schema(
                    "attention weights present but has_attention is false".into(),
                ))
            }
        }
        let ff = &self.feed_forward;
        check("w_a", ff.w_a.shape(), &[m, h])?;
        check("b_a", ff.b_a.shape(), &[h])?;
        check("w_b", ff.w_b.shape(), &[h, m])?;
        check("b_b", ff.b_b.shape(), &[m])?;
        check_norm("ff_norm", &ff.norm)
    }
}

fn check_norm(block: &str, norm: &NormParams) -> Result<()> {
    if !(norm.epsilon > 0.0) {
        return Err(Error::Data(format!("{block}.epsilon must be > 0, got {}", norm.epsilon)));
    }
    if !norm.gamma.is_finite() || !norm.beta.is_finite() || !norm.epsilon.is_finite() {
        return Err(Error::Data(format!("{block} has non-finite parameters")));
    }
    Ok(())
}

/// Symmetric per-tensor quantized integer matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    pub data: Array2<i32>,
    pub scale: f64,
    pub bits: u32,
}

impl QuantTensor {
    /// Largest representable magnitude, `2^(bits-1) - 1`.
    pub fn limit(bits: u32) -> i32 {
        (1i32 << (bits - 1)) - 1
    }

    pub fn dequantize(&self) -> Array2<f64> {
        self.data.mapv(|q| q as f64 * self.scale)
    }
}

/// Per-tensor symmetric quantization with round-half-away-from-zero.
///
/// `-2^(bits-1)` is never produced, so `quantize(-t) == -quantize(t)`.
pub fn quantize(t: ArrayView2<f64>, bits: u32) -> Result<QuantTensor> {
    if !(2..=16).contains(&bits) {
        return Err(Error::Config(format!("quantization bits must be in [2, 16], got {bits}")));
    }
    let mut max_abs = 0.0f64;
    for &v in t.iter() {
        if !v.is_finite() {
            return Err(Error::Data("cannot quantize non-finite value".into()));
        }
        max_abs = max_abs.max(v.abs());
    }
    let limit = QuantTensor::limit(bits);
    let scale = if max_abs == 0.0 { 1.0 } else { max_abs / limit as f64 };
    let lim = limit as f64;
    let data = t.mapv(|v| (v / scale).round().clamp(-lim, lim) as i32);
    Ok(QuantTensor { data, scale, bits })
}

/// Random weights and an input drawn uniformly from `[-1, 1)`, reproducible
/// from `seed`.
pub fn toy_layer(spec: &LayerSpec, seed: u64) -> (WeightSet, Array2<f64>) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let weights = WeightSet::random(spec, &mut rng);
    let x = Array2::from_shape_fn((spec.n_tokens, spec.hidden), |_| rng.random_range(-1.0..1.0));
    (weights, x)
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerMeta {
    pub layer: LayerSpec,
    pub tensors: Vec<TensorEntry>,
}

const NORM_FIELDS: [&str; 3] = ["gamma", "beta", "epsilon"];

/// Tensor names and shapes a layer of this spec must provide, in file order.
pub fn expected_tensors(spec: &LayerSpec) -> Vec<(String, Vec<usize>)> {
    let (m, h) = (spec.hidden, spec.ff_width);
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    if spec.has_attention {
        for name in ["w_q", "w_k", "w_v", "w_o"] {
            out.push((name.into(), vec![m, m]));
        }
        for f in NORM_FIELDS {
            out.push((format!("attn_norm.{f}"), vec![1]));
        }
    }
    out.push(("w_a".into(), vec![m, h]));
    out.push(("b_a".into(), vec![h]));
    out.push(("w_b".into(), vec![h, m]));
    out.push(("b_b".into(), vec![m]));
    for f in NORM_FIELDS {
        out.push((format!("ff_norm.{f}"), vec![1]));
    }
    out
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Load and validate a layer from a raw weight file and its JSON sidecar.
pub fn load_layer(weights_path: &Path, meta_path: &Path) -> Result<(LayerSpec, WeightSet)> {
    let meta_text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: LayerMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Schema(format!("{}: {e}", meta_path.display())))?;
    let bytes = fs::read(weights_path).map_err(|e| Error::io(weights_path, e))?;
    parse_layer(&meta, &bytes)
}

/// Build a layer from already-read sidecar metadata and weight bytes.
pub fn parse_layer(meta: &LayerMeta, bytes: &[u8]) -> Result<(LayerSpec, WeightSet)> {
    let spec = meta.layer;
    spec.validate()?;

    let mut by_name: BTreeMap<&str, &TensorEntry> = BTreeMap::new();
    for entry in &meta.tensors {
        if by_name.insert(entry.name.as_str(), entry).is_some() {
            return Err(Error::Schema(format!("tensor `{}` listed twice", entry.name)));
        }
    }
    let expected = expected_tensors(&spec);
    for name in by_name.keys() {
        if !expected.iter().any(|(n, _)| n == name) {
            return Err(Error::Schema(format!("unexpected tensor `{name}`")));
        }
    }

    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (name, shape) in &expected {
        let entry = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Schema(format!("missing tensor `{name}`")))?;
        if &entry.shape != shape {
            return Err(Error::dim(name.as_str(), format!("{shape:?}"), format!("{:?}", entry.shape)));
        }
        let len: usize = shape.iter().product();
        let start = usize::try_from(entry.offset_bytes)
            .map_err(|_| Error::Data(format!("tensor `{name}` offset too large")))?;
        let end = start
            .checked_add(len * 4)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Data(format!(
                    "tensor `{name}` spans bytes {start}..{} but the weight file has {} bytes",
                    start + len * 4,
                    bytes.len()
                ))
            })?;
        let data: Vec<f64> = decode_f32(&bytes[start..end]).into_iter().map(f64::from).collect();
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("tensor `{name}` has a non-finite value at index {pos}")));
        }
        values.insert(name.clone(), data);
    }

    let mut take_mat = |name: &str, rows: usize, cols: usize| -> Array2<f64> {
        Array2::from_shape_vec((rows, cols), values.remove(name).unwrap_or_default())
            .expect("shape checked above")
    };
    let (m, h) = (spec.hidden, spec.ff_width);
    let attention_mats = spec
        .has_attention
        .then(|| (take_mat("w_q", m, m), take_mat("w_k", m, m), take_mat("w_v", m, m), take_mat("w_o", m, m)));
    let w_a = take_mat("w_a", m, h);
    let w_b = take_mat("w_b", h, m);
    let scalar = |name: String| values[&name][0];
    let norm = |block: &str| NormParams {
        gamma: scalar(format!("{block}.gamma")),
        beta: scalar(format!("{block}.beta")),
        epsilon: scalar(format!("{block}.epsilon")),
    };
    let attention = attention_mats.map(|(w_q, w_k, w_v, w_o)| AttentionWeights {
        w_q,
        w_k,
        w_v,
        w_o,
        norm: norm("attn_norm"),
    });
    let weights = WeightSet {
        attention,
        feed_forward: FeedForwardWeights {
            w_a,
            b_a: Array1::from(values["b_a"].clone()),
            w_b,
            b_b: Array1::from(values["b_b"].clone()),
            norm: norm("ff_norm"),
        },
    };
    weights.validate(&spec)?;
    Ok((spec, weights))
}

/// Serialize a layer into weight bytes plus sidecar metadata.
pub fn encode_layer(spec: &LayerSpec, weights: &WeightSet) -> Result<(Vec<u8>, LayerMeta)> {
    weights.validate(spec)?;
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape) in expected_tensors(spec) {
        let data: Vec<f64> = tensor_values(weights, &name);
        tensors.push(TensorEntry {
            name,
            shape,
            offset_bytes: bytes.len() as u64,
        });
        for v in data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok((bytes, LayerMeta { layer: *spec, tensors }))
}

fn tensor_values(w: &WeightSet, name: &str) -> Vec<f64> {
    let ff = &w.feed_forward;
    let norm_of = |block: &str| match block {
        "attn_norm" => w.attention.as_ref().map(|a| a.norm).unwrap_or_default(),
        _ => ff.norm,
    };
    if let Some((block, field)) = name.split_once('.') {
        let n = norm_of(block);
        return vec![match field {
            "gamma" => n.gamma,
            "beta" => n.beta,
            _ => n.epsilon,
        }];
    }
    let a = w.attention.as_ref();
    let mat = |m: &Array2<f64>| m.iter().copied().collect();
    match name {
        "w_q" => mat(&a.expect("validated").w_q),
        "w_k" => mat(&a.expect("validated").w_k),
        "w_v" => mat(&a.expect("validated").w_v),
        "w_o" => mat(&a.expect("validated").w_o),
        "w_a" => mat(&ff.w_a),
        "w_b" => mat(&ff.w_b),
        "b_a" => ff.b_a.to_vec(),
        "b_b" => ff.b_b.to_vec(),
        _ => unreachable!("unknown tensor {name}"),
    }
}

// ---------------------------------------------------------------------------
// Plain matrices (input sequences, simulation outputs)
// ---------------------------------------------------------------------------

/// Sidecar for a single row-major f32 matrix file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixMeta {
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
}

pub fn encode_matrix(m: &Array2<f64>) -> (Vec<u8>, MatrixMeta) {
    let mut bytes = Vec::with_capacity(m.len() * 4);
    for &v in m.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let (rows, cols) = m.dim();
    (bytes, MatrixMeta { rows, cols, dtype: Dtype::F32 })
}

pub fn decode_matrix(bytes: &[u8], meta: &MatrixMeta) -> Result<Array2<f64>> {
    let len = meta.rows * meta.cols;
    if bytes.len() != len * 4 {
        return Err(Error::dim(
            "matrix file",
            format!("{} bytes ({} x {} f32)", len * 4, meta.rows, meta.cols),
            format!("{} bytes", bytes.len()),
        ));
    }
    let data: Vec<f64> = decode_f32(bytes).into_iter().map(f64::from).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("matrix file contains non-finite values".into()));
    }
    Ok(Array2::from_shape_vec((meta.rows, meta.cols), data).expect("length checked"))
}

pub fn load_matrix(data_path: &Path, meta_path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: MatrixMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", meta_path.display())))?;
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    decode_matrix(&bytes, &meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quantize_zero_matrix_has_unit_scale() {
        let q = quantize(Array2::<f64>::zeros((2, 2)).view(), 8).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(q.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn quantize_range_endpoints() {
        let q = quantize(array![[127.0, -127.0]].view(), 8).unwrap();
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.data, array![[127, -127]]);
    }

    #[test]
    fn quantize_rounds_half_away_from_zero() {
        // 0.5 * 127 = 63.5 -> 64, 0.25 * 127 = 31.75 -> 32
        let q = quantize(array![[0.5, -1.0, 0.25]].view(), 8).unwrap();
        assert!((q.scale - 1.0 / 127.0).abs() < 1e-15);
        assert_eq!(q.data, array![[64, -127, 32]]);
        let neg = quantize(array![[-0.5, 1.0, -0.25]].view(), 8).unwrap();
        assert_eq!(neg.data, array![[-64, 127, -32]]);
    }

    #[test]
    fn quantize_rejects_non_finite_and_bad_bits() {
        assert!(matches!(quantize(array![[f64::NAN]].view(), 8), Err(Error::Data(_))));
        assert!(matches!(quantize(array![[1.0]].view(), 1), Err(Error::Config(_))));
        assert!(matches!(quantize(array![[1.0]].view(), 17), Err(Error::Config(_))));
    }

    #[test]
    fn spec_requires_heads_to_tile_hidden() {
        let mut spec = LayerSpec::new(2, 4, 8, 2).unwrap();
        spec.head_width = 3;
        assert!(matches!(spec.validate(), Err(Error::Dimension { .. })));
        assert!(LayerSpec::new(2, 5, 8, 2).is_err());
    }

    #[test]
    fn param_count_of_bert_large_shape() {
        let spec = LayerSpec::new(256, 1024, 4096, 16).unwrap();
        let direct: u64 = expected_tensors(&spec)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>() as u64)
            .sum();
        assert_eq!(spec.param_count(), direct);
        assert_eq!(spec.param_count(), 4 * 1024 * 1024 + 2 * 1024 * 4096 + 4096 + 1024 + 6);
    }

    #[test]
    fn masked_attention_drops_attention_tensors() {
        let spec = LayerSpec::new(2, 4, 8, 1).unwrap().without_attention();
        assert_eq!(spec.crossbar_param_count(), 2 * 4 * 8 + 8 + 4);
        assert_eq!(spec.norm_blocks(), 1);
        assert!(expected_tensors(&spec).iter().all(|(n, _)| !n.starts_with("w_q")));
    }
}

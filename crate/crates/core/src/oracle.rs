//! Full-precision reference execution of one transformer layer.
//!
//! Everything here is plain dense linear algebra in `f64`; the simulator's
//! results are judged against these functions.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::{LayerSpec, NormParams, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SoftmaxMode {
    /// `exp(s_ij) / sum_j exp(s_ij)` with no shift.
    Literal,
    /// Subtract the row maximum before exponentiating.
    #[default]
    Stabilized,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleOptions {
    pub softmax: SoftmaxMode,
    /// Mask scores above the diagonal (decoder-style attention).
    pub causal: bool,
}

fn check_shape(name: &str, x: ArrayView2<f64>, rows: usize, cols: usize) -> Result<()> {
    if x.dim() != (rows, cols) {
        return Err(Error::dim(name, format!("{rows}x{cols}"), format!("{}x{}", x.nrows(), x.ncols())));
    }
    Ok(())
}

pub fn softmax_rows(scores: ArrayView2<f64>, mode: SoftmaxMode) -> Array2<f64> {
    let mut out = scores.to_owned();
    for mut row in out.rows_mut() {
        let shift = match mode {
            SoftmaxMode::Literal => 0.0,
            SoftmaxMode::Stabilized => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        let shift = if shift.is_finite() { shift } else { 0.0 };
        row.mapv_inplace(|v| (v - shift).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Multi-head attention output `concat(Y_h) · W_o` (no residual).
pub fn attention_forward(
    x: ArrayView2<f64>,
    w: &WeightSet,
    spec: &LayerSpec,
    opts: OracleOptions,
) -> Result<Array2<f64>> {
    check_shape("x", x, spec.n_tokens, spec.hidden)?;
    w.validate(spec)?;
    let a = w
        .attention
        .as_ref()
        .ok_or_else(|| Error::Schema("layer has no attention block".into()))?;
    let q = x.dot(&a.w_q);
    let k = x.dot(&a.w_k);
    let v = x.dot(&a.w_v);
    let dk = spec.head_width;
    let inv_sqrt = 1.0 / (dk as f64).sqrt();
    let mut concat = Array2::zeros((spec.n_tokens, spec.hidden));
    for h in 0..spec.n_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * inv_sqrt;
        if opts.causal {
            for ((i, j), s) in scores.indexed_iter_mut() {
                if j > i {
                    *s = f64::NEG_INFINITY;
                }
            }
        }
        let probs = softmax_rows(scores.view(), opts.softmax);
        concat.slice_mut(cols).assign(&probs.dot(&v.slice(cols)));
    }
    Ok(concat.dot(&a.w_o))
}

/// `ReLU(X W_a + b_a) W_b + b_b` (no residual).
pub fn feedforward_forward(x: ArrayView2<f64>, w: &WeightSet, spec: &LayerSpec) -> Result<Array2<f64>> {
    check_shape("x", x, spec.n_tokens, spec.hidden)?;
    w.validate(spec)?;
    let ff = &w.feed_forward;
    let hidden = (x.dot(&ff.w_a) + &ff.b_a).mapv(|v| v.max(0.0));
    Ok(hidden.dot(&ff.w_b) + &ff.b_b)
}

/// Row-wise layer normalization of `X + Z`.
pub fn add_norm(x: ArrayView2<f64>, z: ArrayView2<f64>, norm: NormParams) -> Result<Array2<f64>> {
    if x.dim() != z.dim() {
        return Err(Error::dim("z", format!("{:?}", x.dim()), format!("{:?}", z.dim())));
    }
    Ok(layer_norm((&x + &z).view(), norm))
}

pub fn layer_norm(u: ArrayView2<f64>, norm: NormParams) -> Array2<f64> {
    let mut out = u.to_owned();
    for mut row in out.rows_mut() {
        let mean = row.mean().unwrap_or(0.0);
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
        let alpha = norm.gamma / (var + norm.epsilon).sqrt();
        row.mapv_inplace(|v| (v - mean) * alpha + norm.beta);
    }
    out
}

/// `E(u^2) - E(u)^2` per row.
pub fn variance_by_identity(u: ArrayView2<f64>) -> Array1<f64> {
    let m = u.ncols() as f64;
    let mean = u.sum_axis(Axis(1)) / m;
    let mean_sq = u.mapv(|v| v * v).sum_axis(Axis(1)) / m;
    &mean_sq - &mean.mapv(|e| e * e)
}

/// Attention add&norm (when present) followed by feed-forward add&norm.
pub fn layer_forward(
    x: ArrayView2<f64>,
    w: &WeightSet,
    spec: &LayerSpec,
    opts: OracleOptions,
) -> Result<Array2<f64>> {
    let after_attention = match &w.attention {
        Some(a) if spec.has_attention => {
            let z = attention_forward(x, w, spec, opts)?;
            add_norm(x, z.view(), a.norm)?
        }
        _ => x.to_owned(),
    };
    let z = feedforward_forward(after_attention.view(), w, spec)?;
    add_norm(after_attention.view(), z.view(), w.feed_forward.norm)
}

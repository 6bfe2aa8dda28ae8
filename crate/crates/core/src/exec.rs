//! Program execution: walks the steps of a [`Program`], gathers operands
//! from named buffers, hands each sub-operation to a MAC engine and applies
//! the additional function to every output column.
//!
//! Engines differ only in how `X · col_t(Y)` is evaluated:
//!
//! * [`RealEngine`]: `f64` dot products, the decomposition in exact arithmetic.
//! * [`IntegerEngine`]: per-tensor symmetric quantization of both operands and
//!   an exact integer dot product.
//! * [`crate::crossbar::CrossbarEngine`]: digit-serial analog simulation.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::crossbar::{apply_additional_fn, FnContext};
use crate::decompose::{AdditionalFn, Buffer, Lhs, NormBlock, NormEpilogue, Program, Rhs, Step, SubOp, WeightId};
use crate::error::{Error, Result};
use crate::model::{quantize, LayerSpec, NormParams, QuantTensor, WeightSet};
use crate::trace::SessionTrace;

/// Real-valued weight matrices as the sub-operations see them, with the
/// feed-forward biases appended as a final row.
#[derive(Debug, Clone)]
pub struct WeightBank {
    mats: BTreeMap<WeightId, Array2<f64>>,
    attention_norm: Option<NormParams>,
    ff_norm: NormParams,
}

fn with_bias_row(w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    concatenate![Axis(0), w.view(), b.view().insert_axis(Axis(0))]
}

impl WeightBank {
    pub fn new(spec: &LayerSpec, weights: &WeightSet) -> Result<Self> {
        weights.validate(spec)?;
        let mut mats = BTreeMap::new();
        if let Some(a) = &weights.attention {
            mats.insert(WeightId::Wq, a.w_q.clone());
            mats.insert(WeightId::Wk, a.w_k.clone());
            mats.insert(WeightId::Wv, a.w_v.clone());
            mats.insert(WeightId::Wo, a.w_o.clone());
        }
        let ff = &weights.feed_forward;
        mats.insert(WeightId::Wa, with_bias_row(&ff.w_a, &ff.b_a));
        mats.insert(WeightId::Wb, with_bias_row(&ff.w_b, &ff.b_b));
        Ok(WeightBank {
            mats,
            attention_norm: weights.attention.as_ref().map(|a| a.norm),
            ff_norm: ff.norm,
        })
    }

    pub fn matrix(&self, id: WeightId) -> Result<&Array2<f64>> {
        self.mats
            .get(&id)
            .ok_or_else(|| Error::Scheduling(format!("weight {id:?} is not loaded")))
    }

    pub fn norm(&self, block: NormBlock) -> Result<NormParams> {
        match block {
            NormBlock::Attention => self
                .attention_norm
                .ok_or_else(|| Error::Scheduling("attention norm parameters missing".into())),
            NormBlock::FeedForward => Ok(self.ff_norm),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = WeightId> + '_ {
        self.mats.keys().copied()
    }
}

/// The activation operand of one sub-operation.
#[derive(Debug, Clone)]
pub struct LhsOperand {
    /// Full matrix, already augmented with the ones column where required.
    pub matrix: Array2<f64>,
    /// Session `t` uses only row `t`.
    pub per_session_row: bool,
    /// Buffer the rows came from (selects the quantization width).
    pub source: Buffer,
}

impl LhsOperand {
    pub fn inner_len(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rows streamed through the crossbar in one session.
    pub fn session_rows(&self) -> usize {
        if self.per_session_row {
            1
        } else {
            self.matrix.nrows()
        }
    }
}

/// Column `t` of `Y` for every session.
#[derive(Debug, Clone)]
pub enum RhsOperand {
    /// Columns `first_col..first_col + sessions` of a stored weight matrix.
    Weight { id: WeightId, first_col: usize, sessions: usize },
    /// `K x T` matrix; column `j` is the operand of the `j`-th session.
    Runtime(Array2<f64>),
    /// The all-ones column, identical for every session.
    Ones { len: usize, sessions: usize },
}

impl RhsOperand {
    pub fn sessions(&self) -> usize {
        match self {
            RhsOperand::Weight { sessions, .. } => *sessions,
            RhsOperand::Runtime(m) => m.ncols(),
            RhsOperand::Ones { sessions, .. } => *sessions,
        }
    }
}

/// Raw products `X · col_t(Y)` of every session, before F.
#[derive(Debug, Clone)]
pub struct Products {
    /// `rows x sessions`; rows is 1 for per-session-row operands.
    pub values: Array2<f64>,
    /// Per-session hardware records; empty for engines without a cost view.
    pub sessions: Vec<SessionTrace>,
}

pub trait MacEngine: Sync {
    fn name(&self) -> &'static str;

    fn products(&self, op: &SubOp, lhs: &LhsOperand, rhs: &RhsOperand) -> Result<Products>;

    /// Optional re-quantization width of every sub-op output.
    fn intermediate_bits(&self) -> Option<u32> {
        None
    }
}

/// Ascending left fold, the reduction order every real-valued path uses.
#[inline]
pub fn dot_ascending(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Exact real arithmetic.
pub struct RealEngine<'a> {
    bank: &'a WeightBank,
}

impl<'a> RealEngine<'a> {
    pub fn new(bank: &'a WeightBank) -> Self {
        RealEngine { bank }
    }
}

impl MacEngine for RealEngine<'_> {
    fn name(&self) -> &'static str {
        "real"
    }

    fn products(&self, _op: &SubOp, lhs: &LhsOperand, rhs: &RhsOperand) -> Result<Products> {
        let t_count = rhs.sessions();
        let rows = lhs.session_rows();
        let mut values = Array2::zeros((rows, t_count));
        let ones;
        let rhs_mat: ArrayView2<f64> = match rhs {
            RhsOperand::Weight { id, first_col, sessions } => {
                self.bank.matrix(*id)?.slice(s![.., *first_col..first_col + sessions])
            }
            RhsOperand::Runtime(m) => m.view(),
            RhsOperand::Ones { len, sessions } => {
                ones = Array2::ones((*len, *sessions));
                ones.view()
            }
        };
        for (j, col) in rhs_mat.columns().into_iter().enumerate() {
            if lhs.per_session_row {
                values[[0, j]] = dot_ascending(lhs.matrix.row(j), col);
            } else {
                for (r, row) in lhs.matrix.rows().into_iter().enumerate() {
                    values[[r, j]] = dot_ascending(row, col);
                }
            }
        }
        Ok(Products {
            values,
            sessions: Vec::new(),
        })
    }
}

/// Bit widths of the quantized operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Precision {
    pub act_bits: u32,
    pub weight_bits: u32,
    /// Width of `EXP(S)` entries when they feed a product.
    pub exp_bits: u32,
}

impl Default for Precision {
    fn default() -> Self {
        Precision {
            act_bits: 8,
            weight_bits: 8,
            exp_bits: 16,
        }
    }
}

impl Precision {
    pub fn lhs_bits(&self, source: Buffer) -> u32 {
        match source {
            Buffer::ExpScores { .. } => self.exp_bits,
            _ => self.act_bits,
        }
    }
}

/// Every stored weight matrix quantized per tensor.
#[derive(Debug, Clone)]
pub struct QuantizedWeights {
    mats: BTreeMap<WeightId, QuantTensor>,
}

impl QuantizedWeights {
    pub fn new(bank: &WeightBank, bits: u32) -> Result<Self> {
        let mut mats = BTreeMap::new();
        for id in bank.ids() {
            mats.insert(id, quantize(bank.matrix(id)?.view(), bits)?);
        }
        Ok(QuantizedWeights { mats })
    }

    pub fn get(&self, id: WeightId) -> Result<&QuantTensor> {
        self.mats
            .get(&id)
            .ok_or_else(|| Error::Scheduling(format!("weight {id:?} is not loaded")))
    }
}

/// Quantized rhs: integer columns and one scale.
pub(crate) enum QuantRhs<'a> {
    Weight { q: &'a QuantTensor, first_col: usize },
    Runtime(QuantTensor),
    Ones,
}

impl QuantRhs<'_> {
    pub(crate) fn scale(&self) -> f64 {
        match self {
            QuantRhs::Weight { q, .. } => q.scale,
            QuantRhs::Runtime(q) => q.scale,
            QuantRhs::Ones => 1.0,
        }
    }

    /// Integer column of session `j` (0-based within the sub-op).
    pub(crate) fn column(&self, j: usize, len: usize) -> Vec<i32> {
        match self {
            QuantRhs::Weight { q, first_col } => q.data.column(first_col + j).to_vec(),
            QuantRhs::Runtime(q) => q.data.column(j).to_vec(),
            QuantRhs::Ones => vec![1; len],
        }
    }
}

pub(crate) fn quantize_rhs<'a>(rhs: &RhsOperand, weights: &'a QuantizedWeights, bits: u32) -> Result<QuantRhs<'a>> {
    Ok(match rhs {
        RhsOperand::Weight { id, first_col, .. } => QuantRhs::Weight {
            q: weights.get(*id)?,
            first_col: *first_col,
        },
        RhsOperand::Runtime(m) => QuantRhs::Runtime(quantize(m.view(), bits)?),
        RhsOperand::Ones { .. } => QuantRhs::Ones,
    })
}

/// Quantized operands with an exact integer dot product.
pub struct IntegerEngine<'a> {
    weights: &'a QuantizedWeights,
    precision: Precision,
}

impl<'a> IntegerEngine<'a> {
    pub fn new(weights: &'a QuantizedWeights, precision: Precision) -> Self {
        IntegerEngine { weights, precision }
    }
}

impl MacEngine for IntegerEngine<'_> {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn products(&self, _op: &SubOp, lhs: &LhsOperand, rhs: &RhsOperand) -> Result<Products> {
        let ql = quantize(lhs.matrix.view(), self.precision.lhs_bits(lhs.source))?;
        let qr = quantize_rhs(rhs, self.weights, self.precision.weight_bits)?;
        let (sl, sr) = (ql.scale, qr.scale());
        let k = lhs.inner_len();
        let t_count = rhs.sessions();
        let rows = lhs.session_rows();
        let mut values = Array2::zeros((rows, t_count));
        for j in 0..t_count {
            let w = qr.column(j, k);
            let row_range = if lhs.per_session_row { j..j + 1 } else { 0..ql.data.nrows() };
            for (out_r, r) in row_range.enumerate() {
                let acc: i64 = ql
                    .data
                    .row(r)
                    .iter()
                    .zip(&w)
                    .map(|(&x, &y)| x as i64 * y as i64)
                    .sum();
                values[[out_r, j]] = acc as f64 * sl * sr;
            }
        }
        Ok(Products {
            values,
            sessions: Vec::new(),
        })
    }
}

/// Result of running a program.
#[derive(Debug, Clone)]
pub struct Execution {
    pub layer: LayerSpec,
    pub buffers: BTreeMap<Buffer, Array2<f64>>,
    /// Every executed sub-op with its session records, in program order.
    pub subops: Vec<(SubOp, Vec<SessionTrace>)>,
    pub epilogue_rows: u64,
}

impl Execution {
    pub fn buffer(&self, b: Buffer) -> Result<&Array2<f64>> {
        self.buffers
            .get(&b)
            .ok_or_else(|| Error::Scheduling(format!("buffer {b} was never written")))
    }

    pub fn output(&self) -> Result<&Array2<f64>> {
        self.buffer(Buffer::Output)
    }
}

fn fetch<'b>(buffers: &'b BTreeMap<Buffer, Array2<f64>>, b: Buffer, op: &SubOp) -> Result<&'b Array2<f64>> {
    buffers
        .get(&b)
        .ok_or_else(|| Error::Scheduling(format!("sub-op {} reads {b} before it is produced", op.id)))
}

pub(crate) fn gather_lhs(buffers: &BTreeMap<Buffer, Array2<f64>>, op: &SubOp) -> Result<LhsOperand> {
    Ok(match op.lhs {
        Lhs::Matrix { buffer, append_ones } => {
            let m = fetch(buffers, buffer, op)?;
            let matrix = if append_ones {
                concatenate![Axis(1), m.view(), Array2::ones((m.nrows(), 1))]
            } else {
                m.clone()
            };
            LhsOperand {
                matrix,
                per_session_row: false,
                source: buffer,
            }
        }
        Lhs::SessionRow { buffer } => LhsOperand {
            matrix: fetch(buffers, buffer, op)?.clone(),
            per_session_row: true,
            source: buffer,
        },
    })
}

pub(crate) fn gather_rhs(buffers: &BTreeMap<Buffer, Array2<f64>>, op: &SubOp, inner: usize) -> Result<RhsOperand> {
    let range = op.session_range.indices();
    let rhs = match op.rhs {
        Rhs::WeightColumn { weight, col_offset } => RhsOperand::Weight {
            id: weight,
            first_col: col_offset + range.start,
            sessions: range.len(),
        },
        Rhs::TransposedColumn { buffer } | Rhs::SessionRowTransposed { buffer } => {
            let m = fetch(buffers, buffer, op)?;
            check_range(op, m.nrows())?;
            RhsOperand::Runtime(m.slice(s![range, ..]).t().to_owned())
        }
        Rhs::Column { buffer } => {
            let m = fetch(buffers, buffer, op)?;
            check_range(op, m.ncols())?;
            RhsOperand::Runtime(m.slice(s![.., range]).to_owned())
        }
        Rhs::Ones => RhsOperand::Ones {
            len: inner,
            sessions: range.len(),
        },
    };
    if let RhsOperand::Runtime(m) = &rhs {
        if m.nrows() != inner {
            return Err(Error::dim(
                format!("sub-op {} rhs column", op.id),
                inner,
                m.nrows(),
            ));
        }
    }
    Ok(rhs)
}

fn check_range(op: &SubOp, available: usize) -> Result<()> {
    if op.session_range.is_empty() || op.session_range.first == 0 || op.session_range.last > available {
        return Err(Error::Scheduling(format!(
            "sub-op {} session range {}..={} exceeds {available} columns",
            op.id, op.session_range.first, op.session_range.last
        )));
    }
    Ok(())
}

/// Run a program starting from the given buffers (at least its inputs).
pub fn execute<E: MacEngine + ?Sized>(
    program: &Program,
    inputs: BTreeMap<Buffer, Array2<f64>>,
    bank: &WeightBank,
    engine: &E,
) -> Result<Execution> {
    let spec = program.layer;
    let mut buffers = inputs;
    let mut subops = Vec::new();
    let mut epilogue_rows = 0;
    for step in &program.steps {
        match step {
            Step::SubOp(op) => {
                let traces = run_subop(&spec, op, &mut buffers, bank, engine)?;
                subops.push((*op, traces));
            }
            Step::NormEpilogue(ep) => {
                let out = norm_epilogue(&buffers, ep, bank.norm(ep.block)?)?;
                epilogue_rows += out.nrows() as u64;
                buffers.insert(ep.dest, out);
            }
        }
    }
    Ok(Execution {
        layer: spec,
        buffers,
        subops,
        epilogue_rows,
    })
}

/// Run a whole layer on input `x`.
pub fn run_layer<E: MacEngine + ?Sized>(
    program: &Program,
    x: ArrayView2<f64>,
    bank: &WeightBank,
    engine: &E,
) -> Result<Execution> {
    let spec = program.layer;
    if x.dim() != (spec.n_tokens, spec.hidden) {
        return Err(Error::dim(
            "input",
            format!("{}x{}", spec.n_tokens, spec.hidden),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    execute(program, BTreeMap::from([(Buffer::Input, x.to_owned())]), bank, engine)
}

fn run_subop<E: MacEngine + ?Sized>(
    spec: &LayerSpec,
    op: &SubOp,
    buffers: &mut BTreeMap<Buffer, Array2<f64>>,
    bank: &WeightBank,
    engine: &E,
) -> Result<Vec<SessionTrace>> {
    let lhs = gather_lhs(buffers, op)?;
    let rhs = gather_rhs(buffers, op, lhs.inner_len())?;
    if let RhsOperand::Weight { id, first_col, sessions } = rhs {
        let w = bank.matrix(id)?;
        if w.nrows() != lhs.inner_len() || first_col + sessions > w.ncols() {
            return Err(Error::dim(
                format!("{id:?} for sub-op {}", op.id),
                format!("{} rows, >= {} cols", lhs.inner_len(), first_col + sessions),
                format!("{}x{}", w.nrows(), w.ncols()),
            ));
        }
    }
    if lhs.per_session_row && op.session_range.last > lhs.matrix.nrows() {
        return Err(Error::Scheduling(format!("sub-op {} has more sessions than rows", op.id)));
    }
    let Products { mut values, mut sessions } = engine.products(op, &lhs, &rhs)?;

    let row_scalars = match op.f {
        AdditionalFn::DivideByRowScalar(b) => Some(fetch(buffers, b, op)?.column(0).to_owned()),
        _ => None,
    };
    let residual = match op.f {
        AdditionalFn::AddResidualColumn(b) => Some(fetch(buffers, b, op)?.clone()),
        _ => None,
    };
    for (j, mut col) in values.columns_mut().into_iter().enumerate() {
        let t0 = op.session_range.first - 1 + j;
        let res_col = residual.as_ref().map(|r| {
            if lhs.per_session_row {
                r.slice(s![t0..t0 + 1, op.dest.col_offset + t0]).to_owned()
            } else {
                r.column(op.dest.col_offset + t0).to_owned()
            }
        });
        let ctx = FnContext {
            head_width: spec.head_width,
            hidden: spec.hidden,
            row_scalars: row_scalars.as_ref().map(|a| {
                if lhs.per_session_row {
                    a.slice(s![t0..t0 + 1])
                } else {
                    a.view()
                }
            }),
            residual: res_col.as_ref().map(|c| c.view()),
        };
        let out = apply_additional_fn(op.f, col.view(), &ctx)?;
        col.assign(&out);
    }
    if let Some(bits) = engine.intermediate_bits() {
        values = quantize(values.view(), bits)?.dequantize();
    }

    let (rows, cols) = crate::decompose::buffer_shape(spec, op.dest.buffer);
    let dest = buffers.entry(op.dest.buffer).or_insert_with(|| Array2::zeros((rows, cols)));
    for (j, col) in values.columns().into_iter().enumerate() {
        let t0 = op.session_range.first - 1 + j;
        if lhs.per_session_row {
            dest[[t0, op.dest.col_offset]] = col[0];
        } else {
            dest.column_mut(op.dest.col_offset + t0).assign(&col);
        }
        if let Some(tr) = sessions.get_mut(j) {
            tr.outputs = col.to_vec();
        }
    }
    Ok(sessions)
}

/// `Var = E(u^2) - E(u)^2` (clamped at 0), `alpha = gamma / sqrt(Var + eps)`,
/// output `(u - E) * alpha + beta`.
pub fn norm_epilogue(
    buffers: &BTreeMap<Buffer, Array2<f64>>,
    ep: &NormEpilogue,
    norm: NormParams,
) -> Result<Array2<f64>> {
    let get = |b: Buffer| {
        buffers
            .get(&b)
            .ok_or_else(|| Error::Scheduling(format!("norm epilogue reads {b} before it is produced")))
    };
    let (u, mean, mean_sq) = (get(ep.input)?, get(ep.mean)?, get(ep.mean_square)?);
    let mut out = u.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let e = mean[[i, 0]];
        let var = (mean_sq[[i, 0]] - e * e).max(0.0);
        let alpha = norm.gamma / (var + norm.epsilon).sqrt();
        if !alpha.is_finite() {
            return Err(Error::Numeric(format!("norm scaling factor for row {i} is not finite")));
        }
        row.mapv_inplace(|v| (v - e) * alpha + norm.beta);
    }
    Ok(out)
}

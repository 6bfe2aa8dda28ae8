//! Compilation of a transformer layer into standardized sub-operations.
//!
//! Every linear step has the form `F(X · col_t(Y))`, executed one session
//! (one column `t` of `Y`) at a time. The attention block yields seven
//! templates per head (the output projection is shared across heads), the
//! feed-forward block two, and each layer-norm block two plus a scalar
//! epilogue that turns `E(u)` and `E(u^2)` into the normalized row.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::LayerSpec;

/// Which layer-norm block a buffer or epilogue belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormBlock {
    Attention,
    FeedForward,
}

/// Named intermediate matrices. Shapes are given by [`buffer_shape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "buffer", rename_all = "snake_case")]
pub enum Buffer {
    /// Layer input `X`.
    Input,
    Query { head: usize },
    /// `K / sqrt(d_k)` for one head.
    KeyScaled { head: usize },
    Value { head: usize },
    /// `EXP(S)` for one head.
    ExpScores { head: usize },
    /// Row sums `a` of `EXP(S)`.
    RowSums { head: usize },
    /// Softmax outputs of all heads side by side.
    HeadsConcat,
    /// `Z + X` after the attention projection.
    AttnResidual,
    AttnNormOut,
    /// `ReLU(X W_a + b_a)`.
    FfHidden,
    FfResidual,
    /// Final layer output.
    Output,
    Mean { block: NormBlock },
    MeanSquare { block: NormBlock },
}

impl fmt::Display for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Buffer::Query { head } => write!(f, "Q[{head}]"),
            Buffer::KeyScaled { head } => write!(f, "K/sqrt(dk)[{head}]"),
            Buffer::Value { head } => write!(f, "V[{head}]"),
            Buffer::ExpScores { head } => write!(f, "EXP(S)[{head}]"),
            Buffer::RowSums { head } => write!(f, "a[{head}]"),
            other => write!(f, "{other:?}"),
        }
    }
}

/// `(rows, cols)` of a buffer for this layer.
pub fn buffer_shape(spec: &LayerSpec, buffer: Buffer) -> (usize, usize) {
    let n = spec.n_tokens;
    match buffer {
        Buffer::Query { .. } | Buffer::KeyScaled { .. } | Buffer::Value { .. } => (n, spec.head_width),
        Buffer::ExpScores { .. } => (n, n),
        Buffer::RowSums { .. } | Buffer::Mean { .. } | Buffer::MeanSquare { .. } => (n, 1),
        Buffer::FfHidden => (n, spec.ff_width),
        Buffer::Input
        | Buffer::HeadsConcat
        | Buffer::AttnResidual
        | Buffer::AttnNormOut
        | Buffer::FfResidual
        | Buffer::Output => (n, spec.hidden),
    }
}

/// Weight matrices held in the dense crossbar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightId {
    Wq,
    Wk,
    Wv,
    Wo,
    /// `[W_a; b_a]`
    Wa,
    /// `[W_b; b_b]`
    Wb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiplyKind {
    #[serde(rename = "WS")]
    WeightStationary,
    #[serde(rename = "NW")]
    NonWeightStationary,
}

/// The per-column function applied after the linear product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum AdditionalFn {
    #[serde(rename = "None")]
    Identity,
    ScaleByInvSqrtDk,
    Exp,
    /// Divide row `i` by `a_i` taken from the payload buffer.
    DivideByRowScalar(Buffer),
    /// Add column `t` of the payload buffer.
    AddResidualColumn(Buffer),
    ReLU,
    ScaleByInvM,
}

impl AdditionalFn {
    pub fn payload(&self) -> Option<Buffer> {
        match *self {
            AdditionalFn::DivideByRowScalar(b) | AdditionalFn::AddResidualColumn(b) => Some(b),
            _ => None,
        }
    }
}

/// Where the activation operand `X` of a sub-operation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Lhs {
    /// The whole buffer, optionally augmented with a trailing all-ones column.
    Matrix { buffer: Buffer, append_ones: bool },
    /// Only row `t` of the buffer takes part in session `t`.
    SessionRow { buffer: Buffer },
}

impl Lhs {
    pub fn buffer(&self) -> Buffer {
        match *self {
            Lhs::Matrix { buffer, .. } | Lhs::SessionRow { buffer } => buffer,
        }
    }
}

/// Where column `t` of `Y` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Rhs {
    /// Column `col_offset + t` of a dense-crossbar weight matrix
    /// (bias row included for [`WeightId::Wa`] / [`WeightId::Wb`]).
    WeightColumn { weight: WeightId, col_offset: usize },
    /// Column `t` of the transposed buffer, i.e. row `t`.
    TransposedColumn { buffer: Buffer },
    Column { buffer: Buffer },
    /// Row `t` of the buffer, transposed into a column.
    SessionRowTransposed { buffer: Buffer },
    /// The all-ones vector.
    Ones,
}

impl Rhs {
    pub fn buffer(&self) -> Option<Buffer> {
        match *self {
            Rhs::TransposedColumn { buffer } | Rhs::Column { buffer } | Rhs::SessionRowTransposed { buffer } => {
                Some(buffer)
            }
            _ => None,
        }
    }
}

/// Output location: session `t` writes column `col_offset + t`
/// (or row `t` when the lhs is a [`Lhs::SessionRow`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dest {
    #[serde(flatten)]
    pub buffer: Buffer,
    pub col_offset: usize,
}

/// Inclusive, 1-based session index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRange {
    pub first: usize,
    pub last: usize,
}

impl SessionRange {
    pub fn upto(last: usize) -> Self {
        SessionRange { first: 1, last }
    }

    pub fn single() -> Self {
        SessionRange { first: 1, last: 1 }
    }

    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }

    /// Zero-based session indices.
    pub fn indices(&self) -> std::ops::Range<usize> {
        self.first - 1..self.last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Attention,
    FeedForward,
    LayerNorm,
}

/// Which template row a sub-operation instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub block: Block,
    pub row: u8,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub head: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub norm: Option<NormBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubOp {
    pub id: usize,
    pub origin: Origin,
    pub multiply_kind: MultiplyKind,
    pub lhs: Lhs,
    pub rhs: Rhs,
    pub session_range: SessionRange,
    #[serde(rename = "fn")]
    pub f: AdditionalFn,
    pub dest: Dest,
}

impl SubOp {
    pub fn is_weight_stationary(&self) -> bool {
        self.multiply_kind == MultiplyKind::WeightStationary
    }

    /// Rows of `X` streamed through the crossbar in one session.
    pub fn activation_rows(&self, spec: &LayerSpec) -> usize {
        match self.lhs {
            Lhs::Matrix { buffer, .. } => buffer_shape(spec, buffer).0,
            Lhs::SessionRow { .. } => 1,
        }
    }

    /// Length of the dot products (weights applied simultaneously).
    pub fn inner_len(&self, spec: &LayerSpec) -> usize {
        match self.lhs {
            Lhs::Matrix { buffer, append_ones } => buffer_shape(spec, buffer).1 + usize::from(append_ones),
            Lhs::SessionRow { buffer } => buffer_shape(spec, buffer).1,
        }
    }
}

/// Scalar unit step finishing a layer norm: variance from the two means,
/// `alpha = gamma / sqrt(Var + eps)`, then `(u - E) * alpha + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormEpilogue {
    pub block: NormBlock,
    pub input: Buffer,
    pub mean: Buffer,
    pub mean_square: Buffer,
    pub dest: Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    SubOp(SubOp),
    NormEpilogue(NormEpilogue),
}

/// Ordered steps for one full layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub layer: LayerSpec,
    pub steps: Vec<Step>,
}

impl Program {
    pub fn subops(&self) -> impl Iterator<Item = &SubOp> {
        self.steps.iter().filter_map(|s| match s {
            Step::SubOp(op) => Some(op),
            Step::NormEpilogue(_) => None,
        })
    }

    pub fn epilogues(&self) -> impl Iterator<Item = &NormEpilogue> {
        self.steps.iter().filter_map(|s| match s {
            Step::NormEpilogue(e) => Some(e),
            Step::SubOp(_) => None,
        })
    }

    /// Buffer holding the layer output.
    pub fn output(&self) -> Buffer {
        Buffer::Output
    }
}

fn origin(block: Block, row: u8) -> Origin {
    Origin {
        block,
        row,
        head: None,
        norm: None,
    }
}

/// Attention templates: rows 1-6 per head, then the shared output projection.
/// Empty when the layer has no attention block.
pub fn decompose_attention(spec: &LayerSpec) -> Vec<SubOp> {
    use MultiplyKind::*;
    if !spec.has_attention {
        return Vec::new();
    }
    let (n, dk, m) = (spec.n_tokens, spec.head_width, spec.hidden);
    let x = Lhs::Matrix {
        buffer: Buffer::Input,
        append_ones: false,
    };
    let mut ops = Vec::with_capacity(6 * spec.n_heads + 1);
    let mut push = |row: u8, head: Option<usize>, kind, lhs, rhs, range, f, dest: Buffer, col_offset| {
        ops.push(SubOp {
            id: ops.len(),
            origin: Origin {
                head,
                ..origin(Block::Attention, row)
            },
            multiply_kind: kind,
            lhs,
            rhs,
            session_range: range,
            f,
            dest: Dest { buffer: dest, col_offset },
        });
    };
    for head in 0..spec.n_heads {
        let h = Some(head);
        let offset = head * dk;
        let w = |weight| Rhs::WeightColumn { weight, col_offset: offset };
        push(1, h, WeightStationary, x, w(WeightId::Wq), SessionRange::upto(dk), AdditionalFn::Identity, Buffer::Query { head }, 0);
        push(2, h, WeightStationary, x, w(WeightId::Wk), SessionRange::upto(dk), AdditionalFn::ScaleByInvSqrtDk, Buffer::KeyScaled { head }, 0);
        push(3, h, WeightStationary, x, w(WeightId::Wv), SessionRange::upto(dk), AdditionalFn::Identity, Buffer::Value { head }, 0);
        let exp_s = Lhs::Matrix {
            buffer: Buffer::ExpScores { head },
            append_ones: false,
        };
        push(
            4,
            h,
            NonWeightStationary,
            Lhs::Matrix {
                buffer: Buffer::Query { head },
                append_ones: false,
            },
            Rhs::TransposedColumn {
                buffer: Buffer::KeyScaled { head },
            },
            SessionRange::upto(n),
            AdditionalFn::Exp,
            Buffer::ExpScores { head },
            0,
        );
        push(5, h, NonWeightStationary, exp_s, Rhs::Ones, SessionRange::single(), AdditionalFn::Identity, Buffer::RowSums { head }, 0);
        push(
            6,
            h,
            NonWeightStationary,
            exp_s,
            Rhs::Column {
                buffer: Buffer::Value { head },
            },
            SessionRange::upto(dk),
            AdditionalFn::DivideByRowScalar(Buffer::RowSums { head }),
            Buffer::HeadsConcat,
            offset,
        );
    }
    push(
        7,
        None,
        WeightStationary,
        Lhs::Matrix {
            buffer: Buffer::HeadsConcat,
            append_ones: false,
        },
        Rhs::WeightColumn {
            weight: WeightId::Wo,
            col_offset: 0,
        },
        SessionRange::upto(m),
        AdditionalFn::AddResidualColumn(Buffer::Input),
        Buffer::AttnResidual,
        0,
    );
    ops
}

/// Buffer the feed-forward block reads: the attention norm output, or the
/// raw input when attention is masked.
pub fn feedforward_input(spec: &LayerSpec) -> Buffer {
    if spec.has_attention {
        Buffer::AttnNormOut
    } else {
        Buffer::Input
    }
}

/// Feed-forward templates with biases folded in as an all-ones input column.
pub fn decompose_feedforward(spec: &LayerSpec) -> Vec<SubOp> {
    let input = feedforward_input(spec);
    vec![
        SubOp {
            id: 0,
            origin: origin(Block::FeedForward, 1),
            multiply_kind: MultiplyKind::WeightStationary,
            lhs: Lhs::Matrix {
                buffer: input,
                append_ones: true,
            },
            rhs: Rhs::WeightColumn {
                weight: WeightId::Wa,
                col_offset: 0,
            },
            session_range: SessionRange::upto(spec.ff_width),
            f: AdditionalFn::ReLU,
            dest: Dest {
                buffer: Buffer::FfHidden,
                col_offset: 0,
            },
        },
        SubOp {
            id: 1,
            origin: origin(Block::FeedForward, 2),
            multiply_kind: MultiplyKind::WeightStationary,
            lhs: Lhs::Matrix {
                buffer: Buffer::FfHidden,
                append_ones: true,
            },
            rhs: Rhs::WeightColumn {
                weight: WeightId::Wb,
                col_offset: 0,
            },
            session_range: SessionRange::upto(spec.hidden),
            f: AdditionalFn::AddResidualColumn(input),
            dest: Dest {
                buffer: Buffer::FfResidual,
                col_offset: 0,
            },
        },
    ]
}

/// Mean and mean-square templates of one layer-norm block plus its epilogue.
pub fn decompose_layernorm(spec: &LayerSpec, block: NormBlock) -> (Vec<SubOp>, NormEpilogue) {
    let (input, dest) = match block {
        NormBlock::Attention => (Buffer::AttnResidual, Buffer::AttnNormOut),
        NormBlock::FeedForward => (Buffer::FfResidual, Buffer::Output),
    };
    let row = Lhs::SessionRow { buffer: input };
    let mk = |id, r, rhs, out| SubOp {
        id,
        origin: Origin {
            norm: Some(block),
            ..origin(Block::LayerNorm, r)
        },
        multiply_kind: MultiplyKind::NonWeightStationary,
        lhs: row,
        rhs,
        session_range: SessionRange::upto(spec.n_tokens),
        f: AdditionalFn::ScaleByInvM,
        dest: Dest {
            buffer: out,
            col_offset: 0,
        },
    };
    let ops = vec![
        mk(0, 1, Rhs::Ones, Buffer::Mean { block }),
        mk(1, 2, Rhs::SessionRowTransposed { buffer: input }, Buffer::MeanSquare { block }),
    ];
    let epilogue = NormEpilogue {
        block,
        input,
        mean: Buffer::Mean { block },
        mean_square: Buffer::MeanSquare { block },
        dest,
    };
    (ops, epilogue)
}

/// The complete layer: attention, its add&norm, feed-forward, its add&norm.
pub fn decompose_layer(spec: &LayerSpec) -> Program {
    let mut steps = Vec::new();
    let mut next_id = 0;
    let mut add = |ops: Vec<SubOp>, steps: &mut Vec<Step>| {
        for mut op in ops {
            op.id = next_id;
            next_id += 1;
            steps.push(Step::SubOp(op));
        }
    };
    if spec.has_attention {
        add(decompose_attention(spec), &mut steps);
        let (ops, ep) = decompose_layernorm(spec, NormBlock::Attention);
        add(ops, &mut steps);
        steps.push(Step::NormEpilogue(ep));
    }
    add(decompose_feedforward(spec), &mut steps);
    let (ops, ep) = decompose_layernorm(spec, NormBlock::FeedForward);
    add(ops, &mut steps);
    steps.push(Step::NormEpilogue(ep));
    Program { layer: *spec, steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use MultiplyKind::*;

    fn kinds(ops: &[SubOp]) -> Vec<MultiplyKind> {
        ops.iter().map(|o| o.multiply_kind).collect()
    }

    #[test]
    fn single_head_attention_types() {
        let spec = LayerSpec::new(4, 8, 16, 1).unwrap();
        let ops = decompose_attention(&spec);
        assert_eq!(ops.len(), 7);
        assert_eq!(
            kinds(&ops),
            vec![WeightStationary, WeightStationary, WeightStationary, NonWeightStationary, NonWeightStationary, NonWeightStationary, WeightStationary]
        );
        let fs: Vec<AdditionalFn> = ops.iter().map(|o| o.f).collect();
        assert_eq!(
            fs,
            vec![
                AdditionalFn::Identity,
                AdditionalFn::ScaleByInvSqrtDk,
                AdditionalFn::Identity,
                AdditionalFn::Exp,
                AdditionalFn::Identity,
                AdditionalFn::DivideByRowScalar(Buffer::RowSums { head: 0 }),
                AdditionalFn::AddResidualColumn(Buffer::Input),
            ]
        );
        let ranges: Vec<usize> = ops.iter().map(|o| o.session_range.len()).collect();
        assert_eq!(ranges, vec![8, 8, 8, 4, 1, 8, 8]);
        assert_eq!(ops[4].session_range, SessionRange { first: 1, last: 1 });
    }

    #[test]
    fn sixteen_heads_share_one_projection() {
        let spec = LayerSpec::new(8, 1024, 4096, 16).unwrap();
        let ops = decompose_attention(&spec);
        assert_eq!(ops.len(), 6 * 16 + 1);
        assert_eq!(ops.iter().filter(|o| o.origin.row == 7).count(), 1);
        assert_eq!(ops.last().unwrap().session_range.len(), 1024);
        assert!(ops[..96].iter().all(|o| o.origin.row != 7));
    }

    #[test]
    fn masked_attention_is_empty() {
        let spec = LayerSpec::new(4, 8, 16, 2).unwrap().without_attention();
        assert!(decompose_attention(&spec).is_empty());
    }

    #[test]
    fn feedforward_templates() {
        let spec = LayerSpec::new(3, 1024, 4096, 16).unwrap();
        let ops = decompose_feedforward(&spec);
        assert_eq!(kinds(&ops), vec![WeightStationary, WeightStationary]);
        assert_eq!(ops[0].session_range.len(), 4096);
        assert_eq!(ops[1].session_range.len(), 1024);
        assert_eq!(ops[0].f, AdditionalFn::ReLU);
        assert_eq!(ops[0].inner_len(&spec), 1025);
    }

    #[test]
    fn layernorm_templates() {
        let spec = LayerSpec::new(5, 8, 16, 2).unwrap();
        let (ops, ep) = decompose_layernorm(&spec, NormBlock::FeedForward);
        assert_eq!(kinds(&ops), vec![NonWeightStationary, NonWeightStationary]);
        assert!(ops.iter().all(|o| o.session_range == SessionRange::upto(5)));
        assert!(ops.iter().all(|o| o.f == AdditionalFn::ScaleByInvM));
        assert_eq!(ep.dest, Buffer::Output);
    }

    #[test]
    fn weight_stationary_iff_weight_rhs() {
        let spec = LayerSpec::new(3, 4, 6, 2).unwrap();
        let prog = decompose_layer(&spec);
        for op in prog.subops() {
            assert_eq!(op.is_weight_stationary(), matches!(op.rhs, Rhs::WeightColumn { .. }), "{op:?}");
            let has_payload = matches!(op.f, AdditionalFn::DivideByRowScalar(_) | AdditionalFn::AddResidualColumn(_));
            assert_eq!(has_payload, op.f.payload().is_some());
        }
        let ids: Vec<usize> = prog.subops().map(|o| o.id).collect();
        assert_eq!(ids, (0..ids.len()).collect::<Vec<_>>());
    }

    #[test]
    fn layer_program_counts() {
        let one_head = LayerSpec::new(2, 4, 8, 1).unwrap();
        assert_eq!(decompose_layer(&one_head).subops().count(), 7 + 2 + 4);
        assert_eq!(decompose_layer(&one_head).epilogues().count(), 2);
        let masked = one_head.without_attention();
        assert_eq!(decompose_layer(&masked).subops().count(), 2 + 2);
    }

    #[test]
    fn subop_json_shape() {
        let spec = LayerSpec::new(2, 4, 8, 1).unwrap();
        let op = decompose_attention(&spec)[5];
        let v = serde_json::to_value(op).unwrap();
        assert_eq!(v["multiply_kind"], "NW");
        assert_eq!(v["fn"]["kind"], "DivideByRowScalar");
        assert_eq!(v["fn"]["payload"]["buffer"], "row_sums");
        assert_eq!(v["session_range"]["last"], 4);
        let none = serde_json::to_value(decompose_attention(&spec)[0].f).unwrap();
        assert_eq!(none, serde_json::json!({"kind": "None"}));
        let back: SubOp = serde_json::from_value(v).unwrap();
        assert_eq!(back, op);
    }
}

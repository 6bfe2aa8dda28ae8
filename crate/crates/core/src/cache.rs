//! Intermediate storage: caches D1, D2, T1, T2 and S, and static plans that
//! schedule the attention and feed-forward blocks through them.
//!
//! Attention runs in two parts per head. Part (a) builds `EXP(S)`: for each
//! phase a block of at most `c_k` columns of `Q` (T1) and `K/sqrt(d_k)` (T2)
//! is produced and its contribution to the scores is accumulated in S; the
//! exponential is applied once the last phase is done. Part (b) takes the
//! row sums into the `a` register, then per phase writes a block of `V` to
//! T1 and of `R / a` to T2 and accumulates the output projection in D2. The
//! residual `+X` is applied after the last head.

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::crossbar::{apply_additional_fn, FnContext};
use crate::decompose::{AdditionalFn, Buffer, WeightId};
use crate::error::{Error, Result};
use crate::exec::{dot_ascending, WeightBank};
use crate::model::LayerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sizing {
    /// T1 = T2 = l_s * c_k.
    #[default]
    Typical,
    /// T1 = T2 = l_s * d_k.
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    /// Sequence length the caches are sized for.
    pub l_s: usize,
    /// Token dimension.
    pub d_k: usize,
    /// Columns a temporary cache holds under typical sizing.
    pub c_k: usize,
    #[serde(default = "default_bits")]
    pub element_bits: u32,
    /// Width of the S-cache entries.
    #[serde(default = "default_bits")]
    pub s_element_bits: u32,
    #[serde(default)]
    pub sizing: Sizing,
    #[serde(default = "default_dup")]
    pub dup_factor: usize,
}

impl Default for CacheConfig {
    /// 256 tokens of 1024 dimensions with 64-column temporaries.
    fn default() -> Self {
        CacheConfig {
            l_s: 256,
            d_k: 1024,
            c_k: 64,
            element_bits: 8,
            s_element_bits: 8,
            sizing: Sizing::Typical,
            dup_factor: 1,
        }
    }
}

fn default_bits() -> u32 {
    8
}

fn default_dup() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CacheId {
    D1,
    D2,
    T1,
    T2,
    S,
    /// Row-sum register `a`.
    A,
}

pub const CACHES: [CacheId; 6] = [CacheId::D1, CacheId::D2, CacheId::T1, CacheId::T2, CacheId::S, CacheId::A];

impl CacheConfig {
    pub fn for_layer(spec: &LayerSpec, c_k: usize, sizing: Sizing) -> Self {
        CacheConfig {
            l_s: spec.n_tokens,
            d_k: spec.hidden,
            c_k,
            element_bits: 8,
            s_element_bits: 8,
            sizing,
            dup_factor: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_s == 0 || self.d_k == 0 || self.c_k == 0 {
            return Err(Error::Config("cache dimensions l_s, d_k and c_k must be at least 1".into()));
        }
        if self.c_k > self.d_k {
            return Err(Error::Config(format!("c_k = {} exceeds d_k = {}", self.c_k, self.d_k)));
        }
        if self.element_bits == 0 || self.s_element_bits == 0 {
            return Err(Error::Config("cache element widths must be positive".into()));
        }
        if self.sizing == Sizing::Typical && self.dup_factor > self.c_k {
            return Err(Error::Capacity {
                what: format!(
                    "temporary caches (duplication factor {} exceeds c_k = {}; use maximum sizing)",
                    self.dup_factor, self.c_k
                ),
                required: (self.l_s * self.dup_factor) as u64,
                available: (self.l_s * self.c_k) as u64,
            });
        }
        Ok(())
    }

    /// Capacity in elements.
    pub fn capacity(&self, cache: CacheId) -> u64 {
        let (l, d) = (self.l_s as u64, self.d_k as u64);
        match cache {
            CacheId::D1 | CacheId::D2 => l * d,
            CacheId::T1 | CacheId::T2 => match self.sizing {
                Sizing::Typical => l * self.c_k as u64,
                Sizing::Maximum => l * d,
            },
            CacheId::S => l * l,
            CacheId::A => l,
        }
    }

    pub fn element_bits_of(&self, cache: CacheId) -> u32 {
        match cache {
            CacheId::S => self.s_element_bits,
            _ => self.element_bits,
        }
    }

    pub fn capacity_bytes(&self, cache: CacheId) -> u64 {
        (self.capacity(cache) * self.element_bits_of(cache) as u64).div_ceil(8)
    }

    /// Total storage of the five caches in bits (the `a` register excluded).
    pub fn total_bits(&self) -> u64 {
        CACHES[..5]
            .iter()
            .map(|&c| self.capacity(c) * self.element_bits_of(c) as u64)
            .sum()
    }
}

/// Matrices the plans move through the caches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "tensor", rename_all = "snake_case")]
pub enum Tensor {
    X,
    Q { head: usize },
    K { head: usize },
    V { head: usize },
    ExpS { head: usize },
    A { head: usize },
    R { head: usize },
    /// Output projection accumulator, `Z + X` once finished.
    Z,
    FfIn,
    FfOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub cache: CacheId,
    #[serde(flatten)]
    pub tensor: Tensor,
    /// Footprint while resident.
    pub elements: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    /// Sub-ops 1, 2, 4.
    A,
    /// Sub-ops 3, 5, 6, 7.
    B,
    FeedForward,
}

/// What a plan step computes. Column ranges are head-local and 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PlanOp {
    LoadInput,
    /// Sub-op 1 (`Q`), 2 (`K/sqrt(d_k)`) or 3 (`V`) for a block of columns.
    Project { row: u8, head: usize, cols: Range<usize> },
    /// Sub-op 4 product restricted to a block of inner columns, accumulated.
    ScorePartial { head: usize, cols: Range<usize> },
    /// Sub-op 4 additional function, applied in place.
    ScoreExp { head: usize },
    /// Sub-op 5.
    RowSum { head: usize },
    /// Sub-op 6 for a block of columns.
    Weighted { head: usize, cols: Range<usize> },
    /// Sub-op 7 product over the inner rows of one block, accumulated.
    ProjectPartial { head: usize, cols: Range<usize> },
    /// Sub-op 7 additional function.
    Residual,
    /// Feed-forward: each hidden column is produced and immediately folded
    /// into the output accumulator.
    FfStream,
    /// Bias row and residual of the second feed-forward sub-op.
    FfFinish,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub index: usize,
    pub part: Part,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub phase: Option<usize>,
    #[serde(flatten)]
    pub op: PlanOp,
    pub reads: Vec<Slot>,
    pub writes: Vec<Slot>,
    pub frees: Vec<Slot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachePlan {
    pub config: CacheConfig,
    pub layer: LayerSpec,
    /// Phases per head.
    pub phases: usize,
    pub steps: Vec<PlanStep>,
}

/// Column blocks of at most `c_k` columns covering `0..width`.
fn blocks(width: usize, c_k: usize) -> Vec<Range<usize>> {
    (0..width.div_ceil(c_k)).map(|p| p * c_k..((p + 1) * c_k).min(width)).collect()
}

fn slot(cache: CacheId, tensor: Tensor, elements: usize) -> Slot {
    Slot {
        cache,
        tensor,
        elements: elements as u64,
    }
}

struct Builder {
    steps: Vec<PlanStep>,
}

impl Builder {
    fn push(&mut self, part: Part, phase: Option<usize>, op: PlanOp, reads: Vec<Slot>, writes: Vec<Slot>, frees: Vec<Slot>) {
        let index = self.steps.len();
        self.steps.push(PlanStep {
            index,
            part,
            phase,
            op,
            reads,
            writes,
            frees,
        });
    }
}

/// Temporary block width: `c_k` under typical sizing, the whole head otherwise.
fn block_width(spec: &LayerSpec, cfg: &CacheConfig) -> usize {
    match cfg.sizing {
        Sizing::Typical => cfg.c_k.min(spec.head_width),
        Sizing::Maximum => cfg.c_k.min(spec.head_width).max(1),
    }
}

pub fn plan_mha(spec: &LayerSpec, cfg: &CacheConfig) -> Result<CachePlan> {
    cfg.validate()?;
    if !spec.has_attention {
        return Err(Error::Config("layer has no attention block to plan".into()));
    }
    let (n, m, dk) = (spec.n_tokens, spec.hidden, spec.head_width);
    let width = block_width(spec, cfg);
    let blks = blocks(dk, width);
    let x = slot(CacheId::D1, Tensor::X, n * m);
    let z = slot(CacheId::D2, Tensor::Z, n * m);
    let mut b = Builder { steps: Vec::new() };
    b.push(Part::A, None, PlanOp::LoadInput, vec![], vec![x], vec![]);
    for head in 0..spec.n_heads {
        let s_cache = slot(CacheId::S, Tensor::ExpS { head }, n * n);
        for (p, cols) in blks.iter().enumerate() {
            let phase = Some(p + 1);
            let w = cols.len();
            let q = slot(CacheId::T1, Tensor::Q { head }, n * w);
            let k = slot(CacheId::T2, Tensor::K { head }, n * w);
            b.push(Part::A, phase, PlanOp::Project { row: 1, head, cols: cols.clone() }, vec![x], vec![q], vec![]);
            b.push(Part::A, phase, PlanOp::Project { row: 2, head, cols: cols.clone() }, vec![x], vec![k], vec![]);
            b.push(Part::A, phase, PlanOp::ScorePartial { head, cols: cols.clone() }, vec![q, k], vec![s_cache], vec![]);
            b.push(Part::A, phase, PlanOp::Free, vec![], vec![], vec![q, k]);
        }
        b.push(Part::A, None, PlanOp::ScoreExp { head }, vec![s_cache], vec![s_cache], vec![]);
        let a = slot(CacheId::A, Tensor::A { head }, n);
        b.push(Part::B, None, PlanOp::RowSum { head }, vec![s_cache], vec![a], vec![]);
        for (p, cols) in blks.iter().enumerate() {
            let phase = Some(p + 1);
            let w = cols.len();
            let v = slot(CacheId::T1, Tensor::V { head }, n * w);
            let r = slot(CacheId::T2, Tensor::R { head }, n * w);
            b.push(Part::B, phase, PlanOp::Project { row: 3, head, cols: cols.clone() }, vec![x], vec![v], vec![]);
            b.push(Part::B, phase, PlanOp::Weighted { head, cols: cols.clone() }, vec![s_cache, v, a], vec![r], vec![]);
            b.push(Part::B, phase, PlanOp::ProjectPartial { head, cols: cols.clone() }, vec![r], vec![z], vec![]);
            b.push(Part::B, phase, PlanOp::Free, vec![], vec![], vec![v, r]);
        }
        b.push(Part::B, None, PlanOp::Free, vec![], vec![], vec![s_cache, a]);
    }
    b.push(Part::B, None, PlanOp::Residual, vec![x, z], vec![z], vec![]);
    let plan = CachePlan {
        config: *cfg,
        layer: *spec,
        phases: blks.len(),
        steps: b.steps,
    };
    check_residency(&plan)?;
    Ok(plan)
}

pub fn plan_ff(spec: &LayerSpec, cfg: &CacheConfig) -> Result<CachePlan> {
    cfg.validate()?;
    let (n, m) = (spec.n_tokens, spec.hidden);
    let input = slot(CacheId::D1, Tensor::FfIn, n * m);
    let out = slot(CacheId::D2, Tensor::FfOut, n * m);
    let mut b = Builder { steps: Vec::new() };
    b.push(Part::FeedForward, None, PlanOp::LoadInput, vec![], vec![input], vec![]);
    b.push(Part::FeedForward, None, PlanOp::FfStream, vec![input], vec![out], vec![]);
    b.push(Part::FeedForward, None, PlanOp::FfFinish, vec![input, out], vec![out], vec![]);
    let plan = CachePlan {
        config: *cfg,
        layer: *spec,
        phases: 1,
        steps: b.steps,
    };
    check_residency(&plan)?;
    Ok(plan)
}

/// Occupancy of every cache after each step and the high-water marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidencyReport {
    pub capacity: BTreeMap<CacheId, u64>,
    pub high_water: BTreeMap<CacheId, u64>,
    /// `per_step[i][c]`: elements resident in cache `c` after step `i`.
    pub per_step: Vec<BTreeMap<CacheId, u64>>,
}

/// Replay the plan's allocations. Fails if a step reads a tensor that is not
/// resident or if any cache exceeds its capacity.
pub fn check_residency(plan: &CachePlan) -> Result<ResidencyReport> {
    let cfg = &plan.config;
    let mut resident: BTreeMap<(CacheId, Tensor), u64> = BTreeMap::new();
    let zero: BTreeMap<CacheId, u64> = CACHES.iter().map(|&c| (c, 0)).collect();
    let mut high_water = zero.clone();
    let mut per_step = Vec::with_capacity(plan.steps.len());
    for step in &plan.steps {
        for r in &step.reads {
            if !resident.contains_key(&(r.cache, r.tensor)) {
                return Err(Error::Scheduling(format!(
                    "plan step {} reads {:?} from {:?} before it is written",
                    step.index, r.tensor, r.cache
                )));
            }
        }
        for w in &step.writes {
            resident.entry((w.cache, w.tensor)).or_insert(w.elements);
        }
        let mut occ = zero.clone();
        for (&(c, _), &e) in &resident {
            *occ.get_mut(&c).expect("known cache") += e;
        }
        for (&c, &e) in &occ {
            let cap = cfg.capacity(c);
            if e > cap {
                return Err(Error::Capacity {
                    what: format!("cache {c:?} at plan step {}", step.index),
                    required: e,
                    available: cap,
                });
            }
            let hw = high_water.get_mut(&c).expect("known cache");
            *hw = (*hw).max(e);
        }
        for f in &step.frees {
            resident.remove(&(f.cache, f.tensor));
        }
        let mut after = zero.clone();
        for (&(c, _), &e) in &resident {
            *after.get_mut(&c).expect("known cache") += e;
        }
        per_step.push(after);
    }
    Ok(ResidencyReport {
        capacity: CACHES.iter().map(|&c| (c, cfg.capacity(c))).collect(),
        high_water,
        per_step,
    })
}

/// True when nothing part (a) left in T1/T2 is read during part (b).
pub fn temporaries_dead_at_boundary(plan: &CachePlan) -> bool {
    let temp = |s: &Slot| matches!(s.cache, CacheId::T1 | CacheId::T2);
    let written_in_a: Vec<Tensor> = plan
        .steps
        .iter()
        .filter(|s| s.part == Part::A)
        .flat_map(|s| s.writes.iter().filter(|w| temp(w)).map(|w| w.tensor))
        .collect();
    let freed_in_a: Vec<Tensor> = plan
        .steps
        .iter()
        .filter(|s| s.part == Part::A)
        .flat_map(|s| s.frees.iter().filter(|f| temp(f)).map(|f| f.tensor))
        .collect();
    let read_in_b = plan
        .steps
        .iter()
        .filter(|s| s.part == Part::B)
        .flat_map(|s| s.reads.iter())
        .any(|r| temp(r) && written_in_a.contains(&r.tensor));
    written_in_a.iter().all(|t| freed_in_a.contains(t)) && !read_in_b
}

// ---------------------------------------------------------------------------
// Plan execution
// ---------------------------------------------------------------------------

struct Store {
    data: BTreeMap<(CacheId, Tensor), Array2<f64>>,
}

impl Store {
    fn get(&self, s: &Slot, step: usize) -> Result<&Array2<f64>> {
        self.data
            .get(&(s.cache, s.tensor))
            .ok_or_else(|| Error::Scheduling(format!("plan step {step}: {:?} not resident in {:?}", s.tensor, s.cache)))
    }

    fn put(&mut self, s: &Slot, v: Array2<f64>) -> Result<()> {
        if v.len() as u64 > s.elements {
            return Err(Error::Capacity {
                what: format!("{:?} in cache {:?}", s.tensor, s.cache),
                required: v.len() as u64,
                available: s.elements,
            });
        }
        self.data.insert((s.cache, s.tensor), v);
        Ok(())
    }
}

/// Continue an ascending fold from `init` over the terms `a_k * b_k`.
fn fold_from(init: f64, a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).fold(init, |acc, (x, y)| acc + x * y)
}

fn apply_cols(f: AdditionalFn, m: &mut Array2<f64>, ctx: &FnContext) -> Result<()> {
    for mut col in m.columns_mut() {
        let out = apply_additional_fn(f, col.view(), ctx)?;
        col.assign(&out);
    }
    Ok(())
}

/// Execute the attention plan in real arithmetic; returns `Z + X`.
pub fn execute_mha_plan(plan: &CachePlan, x: ArrayView2<f64>, bank: &WeightBank) -> Result<Array2<f64>> {
    check_residency(plan)?;
    let spec = plan.layer;
    let dk = spec.head_width;
    let mut store = Store { data: BTreeMap::new() };
    let ctx = FnContext {
        head_width: dk,
        hidden: spec.hidden,
        ..Default::default()
    };
    for step in &plan.steps {
        let i = step.index;
        match &step.op {
            PlanOp::LoadInput => store.put(&step.writes[0], x.to_owned())?,
            PlanOp::Project { row, head, cols } => {
                let (id, f) = match row {
                    1 => (WeightId::Wq, AdditionalFn::Identity),
                    2 => (WeightId::Wk, AdditionalFn::ScaleByInvSqrtDk),
                    _ => (WeightId::Wv, AdditionalFn::Identity),
                };
                let xin = store.get(&step.reads[0], i)?;
                let w = bank.matrix(id)?;
                let off = head * dk;
                let mut out = Array2::zeros((xin.nrows(), cols.len()));
                for (j, c) in cols.clone().enumerate() {
                    for r in 0..xin.nrows() {
                        out[[r, j]] = dot_ascending(xin.row(r), w.column(off + c));
                    }
                }
                apply_cols(f, &mut out, &ctx)?;
                store.put(&step.writes[0], out)?;
            }
            PlanOp::ScorePartial { .. } => {
                let q = store.get(&step.reads[0], i)?;
                let k = store.get(&step.reads[1], i)?;
                let n = q.nrows();
                let mut acc = match store.data.get(&(step.writes[0].cache, step.writes[0].tensor)) {
                    Some(prev) => prev.clone(),
                    None => Array2::zeros((n, n)),
                };
                for r in 0..n {
                    for t in 0..n {
                        acc[[r, t]] = fold_from(acc[[r, t]], q.row(r).iter().copied(), k.row(t).iter().copied());
                    }
                }
                store.put(&step.writes[0], acc)?;
            }
            PlanOp::ScoreExp { .. } => {
                let mut sc = store.get(&step.reads[0], i)?.clone();
                apply_cols(AdditionalFn::Exp, &mut sc, &ctx)?;
                store.put(&step.writes[0], sc)?;
            }
            PlanOp::RowSum { .. } => {
                let sc = store.get(&step.reads[0], i)?;
                let ones = Array1::ones(sc.ncols());
                let a = Array2::from_shape_fn((sc.nrows(), 1), |(r, _)| dot_ascending(sc.row(r), ones.view()));
                store.put(&step.writes[0], a)?;
            }
            PlanOp::Weighted { .. } => {
                let sc = store.get(&step.reads[0], i)?;
                let v = store.get(&step.reads[1], i)?;
                let a = store.get(&step.reads[2], i)?.column(0).to_owned();
                let mut out = Array2::zeros(v.dim());
                for j in 0..v.ncols() {
                    for r in 0..sc.nrows() {
                        out[[r, j]] = dot_ascending(sc.row(r), v.column(j));
                    }
                }
                let div_ctx = FnContext {
                    row_scalars: Some(a.view()),
                    ..ctx.clone()
                };
                apply_cols(AdditionalFn::DivideByRowScalar(Buffer::RowSums { head: 0 }), &mut out, &div_ctx)?;
                store.put(&step.writes[0], out)?;
            }
            PlanOp::ProjectPartial { head, cols } => {
                let y = store.get(&step.reads[0], i)?;
                let w = bank.matrix(WeightId::Wo)?;
                let n = y.nrows();
                let mut z = match store.data.get(&(step.writes[0].cache, step.writes[0].tensor)) {
                    Some(prev) => prev.clone(),
                    None => Array2::zeros((n, spec.hidden)),
                };
                let inner = w.slice(s![head * dk + cols.start..head * dk + cols.end, ..]);
                for r in 0..n {
                    for c in 0..spec.hidden {
                        z[[r, c]] = fold_from(z[[r, c]], y.row(r).iter().copied(), inner.column(c).iter().copied());
                    }
                }
                store.put(&step.writes[0], z)?;
            }
            PlanOp::Residual => {
                let xin = store.get(&step.reads[0], i)?;
                let z = store.get(&step.reads[1], i)?;
                let out = z + xin;
                store.put(&step.writes[0], out)?;
            }
            PlanOp::Free => {
                for f in &step.frees {
                    store.data.remove(&(f.cache, f.tensor));
                }
                continue;
            }
            PlanOp::FfStream | PlanOp::FfFinish => {
                return Err(Error::Scheduling(format!("plan step {i} is not an attention step")));
            }
        }
        for f in &step.frees {
            store.data.remove(&(f.cache, f.tensor));
        }
    }
    store
        .data
        .remove(&(CacheId::D2, Tensor::Z))
        .ok_or_else(|| Error::Scheduling("attention plan left no output in D2".into()))
}

/// Execute the feed-forward plan in real arithmetic; returns `Z + input`.
pub fn execute_ff_plan(plan: &CachePlan, input: ArrayView2<f64>, bank: &WeightBank) -> Result<Array2<f64>> {
    check_residency(plan)?;
    let spec = plan.layer;
    let (n, m, h) = (spec.n_tokens, spec.hidden, spec.ff_width);
    let wa = bank.matrix(WeightId::Wa)?;
    let wb = bank.matrix(WeightId::Wb)?;
    let mut store = Store { data: BTreeMap::new() };
    for step in &plan.steps {
        let i = step.index;
        match &step.op {
            PlanOp::LoadInput => store.put(&step.writes[0], input.to_owned())?,
            PlanOp::FfStream => {
                let xin = store.get(&step.reads[0], i)?;
                let mut z: Array2<f64> = Array2::zeros((n, m));
                let mut y = Array1::zeros(n);
                for t in 0..h {
                    for r in 0..n {
                        // [x | 1] . [w_a; b_a] column t, ascending, then ReLU
                        let acc = dot_ascending(xin.row(r), wa.slice(s![..m, t]));
                        y[r] = (acc + 1.0 * wa[[m, t]]).max(0.0);
                    }
                    for r in 0..n {
                        for c in 0..m {
                            z[[r, c]] += y[r] * wb[[t, c]];
                        }
                    }
                }
                store.put(&step.writes[0], z)?;
            }
            PlanOp::FfFinish => {
                let xin = store.get(&step.reads[0], i)?.clone();
                let mut z = store.get(&step.reads[1], i)?.clone();
                for r in 0..n {
                    for c in 0..m {
                        z[[r, c]] = (z[[r, c]] + 1.0 * wb[[h, c]]) + xin[[r, c]];
                    }
                }
                store.put(&step.writes[0], z)?;
            }
            _ => return Err(Error::Scheduling(format!("plan step {i} is not a feed-forward step"))),
        }
    }
    store
        .data
        .remove(&(CacheId::D2, Tensor::FfOut))
        .ok_or_else(|| Error::Scheduling("feed-forward plan left no output in D2".into()))
}

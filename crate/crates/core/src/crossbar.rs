//! Digit-serial simulation of the computation crossbar.
//!
//! Weights of one session drive the rows through DACs; each column holds the
//! switch states of one activation row. For every digit (most significant
//! first) the column current is sampled, perturbed by read noise, converted
//! by the ADC, and folded into the shift-and-add accumulator as
//! `acc * base + code`. `d_c` columns process different activation rows of
//! the same session in parallel.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::{AdditionalFn, SubOp};
use crate::dense::DenseStore;
use crate::encoding::{digit_to_switch_states, encode, DigitCode, EncodingScheme};
use crate::error::{Error, Result};
use crate::exec::{quantize_rhs, Execution, LhsOperand, MacEngine, Precision, Products, QuantRhs, QuantizedWeights, RhsOperand};
use crate::model::{quantize, QuantTensor};
use crate::trace::{Bandwidths, EventCounts, SessionTrace, SubOpTrace, TraceSummary};

/// Timing of the analog array and its shared converters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    /// Analog evaluation of one digit step.
    pub cycle_ns: f64,
    /// One ADC conversion.
    pub adc_sample_ns: f64,
    /// ADCs per crossbar, shared round-robin by all columns.
    pub adcs: usize,
    /// One row of the layer-norm scalar unit.
    pub epilogue_ns: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            cycle_ns: 100.0,
            adc_sample_ns: 0.78125,
            adcs: 1,
            epilogue_ns: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
    /// Columns computing the same session in parallel.
    pub dup_factor: usize,
    pub scale_factor: u32,
    pub act_bits: u32,
    pub weight_bits: u32,
    pub exp_bits: u32,
    pub adc_bits: u32,
    /// Unbounded converter with unit step; used for exactness checks.
    pub ideal_adc: bool,
    pub dac_bits: u32,
    /// Bound of the multiplicative column-read noise, as a fraction of signal.
    pub noise_fraction: f64,
    pub seed: u64,
    /// Re-quantize every sub-op output to this width before caching.
    pub intermediate_bits: Option<u32>,
    pub timing: Timing,
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        CrossbarConfig {
            rows: 128,
            cols: 128,
            dup_factor: 1,
            scale_factor: 2,
            act_bits: 8,
            weight_bits: 8,
            exp_bits: 16,
            adc_bits: 8,
            ideal_adc: false,
            dac_bits: 8,
            noise_fraction: 0.05,
            seed: 0,
            intermediate_bits: None,
            timing: Timing::default(),
        }
    }
}

impl CrossbarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("crossbar rows and cols must be at least 1".into()));
        }
        if self.dup_factor == 0 || self.dup_factor > self.cols {
            return Err(Error::Config(format!(
                "duplication factor {} must be in [1, {}]",
                self.dup_factor, self.cols
            )));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(Error::Config(format!("noise fraction must be in [0, 1), got {}", self.noise_fraction)));
        }
        if !(1..=32).contains(&self.adc_bits) || !(1..=32).contains(&self.dac_bits) {
            return Err(Error::Config("converter widths must be in [1, 32]".into()));
        }
        if self.weight_bits > self.dac_bits {
            return Err(Error::Config(format!(
                "{}-bit weights cannot be driven by {}-bit DACs",
                self.weight_bits, self.dac_bits
            )));
        }
        for (name, bits) in [("act_bits", self.act_bits), ("weight_bits", self.weight_bits), ("exp_bits", self.exp_bits)] {
            if !(2..=16).contains(&bits) {
                return Err(Error::Config(format!("{name} must be in [2, 16], got {bits}")));
            }
        }
        if let Some(b) = self.intermediate_bits {
            if !(2..=16).contains(&b) {
                return Err(Error::Config(format!("intermediate_bits must be in [2, 16], got {b}")));
            }
        }
        let t = &self.timing;
        if !(t.cycle_ns >= 0.0 && t.adc_sample_ns >= 0.0 && t.epilogue_ns >= 0.0) || t.adcs == 0 {
            return Err(Error::Config("timing values must be non-negative with at least one ADC".into()));
        }
        EncodingScheme::new(self.scale_factor, self.act_bits)?;
        Ok(())
    }

    pub fn precision(&self) -> Precision {
        Precision {
            act_bits: self.act_bits,
            weight_bits: self.weight_bits,
            exp_bits: self.exp_bits,
        }
    }

    pub fn scheme(&self, bits: u32) -> Result<EncodingScheme> {
        EncodingScheme::new(self.scale_factor, bits)
    }

    /// Steps of one session: digits x row groups x inner-dimension tiles.
    pub fn session_steps(&self, n_digits: u32, activation_rows: usize, inner: usize) -> u64 {
        n_digits as u64 * activation_rows.div_ceil(self.dup_factor) as u64 * inner.div_ceil(self.rows) as u64
    }
}

// ---------------------------------------------------------------------------
// Digit-serial MAC
// ---------------------------------------------------------------------------

/// Step-by-step record of one digit-serial multiply-accumulate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitSerialMac {
    /// Column sum of every digit step.
    pub contributions: Vec<i64>,
    /// Accumulator after every step.
    pub accumulators: Vec<i64>,
    pub result: i64,
}

/// Noise-free MAC of one activation row: `sum_i w_i * x_i`, where `x_i` is
/// given by its digit code. Negative weights drive the swapped columns.
pub fn mac_digit_serial(weights: &[i32], codes: &[DigitCode], scheme: &EncodingScheme) -> Result<DigitSerialMac> {
    if weights.len() != codes.len() {
        return Err(Error::dim("activation codes", weights.len(), codes.len()));
    }
    let n = scheme.n_digits() as usize;
    let bound = scheme.digit_bound();
    for c in codes {
        if c.digits.len() != n {
            return Err(Error::Encoding(format!(
                "code has {} digits, scheme expects {n}",
                c.digits.len()
            )));
        }
        if let Some(d) = c.digits.iter().find(|d| d.abs() > bound) {
            return Err(Error::Encoding(format!("digit {d} outside ±{bound}")));
        }
    }
    let mut acc = 0i64;
    let mut contributions = Vec::with_capacity(n);
    let mut accumulators = Vec::with_capacity(n);
    for k in 0..n {
        let mut column = 0i64;
        for (&w, code) in weights.iter().zip(codes) {
            let states = digit_to_switch_states(code.digits[k], scheme.scale_factor());
            let states = if w < 0 { states.swapped() } else { states };
            column += w.unsigned_abs() as i64 * states.signed_sum() as i64;
        }
        acc = scheme.times_base(acc) + column;
        contributions.push(column);
        accumulators.push(acc);
    }
    Ok(DigitSerialMac {
        contributions,
        accumulators,
        result: acc,
    })
}

// ---------------------------------------------------------------------------
// Noise and ADC
// ---------------------------------------------------------------------------

/// Zero-mean normal with `3 sigma = bound`, resampled until `|x| <= bound`.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    normal: Option<Normal<f64>>,
    bound: f64,
}

impl TruncatedNormal {
    pub fn new(bound: f64) -> Self {
        TruncatedNormal {
            normal: (bound > 0.0).then(|| Normal::new(0.0, bound / 3.0).expect("positive sigma")),
            bound,
        }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Always 0 (and draws nothing) when the bound is 0.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let Some(n) = self.normal else { return 0.0 };
        loop {
            let x = n.sample(rng);
            if x.abs() <= self.bound {
                return x;
            }
        }
    }
}

/// ADC transfer function for one session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adc {
    /// Value of one output code.
    pub lsb: f64,
    /// Largest code magnitude; `None` for an unbounded converter.
    pub max_code: Option<i64>,
}

impl Adc {
    /// Range the converter to the largest column sum the session can produce.
    pub fn ranged(full_scale: i64, bits: u32, ideal: bool) -> Self {
        if ideal {
            return Adc { lsb: 1.0, max_code: None };
        }
        let max_code = (1i64 << (bits - 1)) - 1;
        let max_code = max_code.max(1);
        let lsb = if full_scale <= max_code {
            1.0
        } else {
            full_scale as f64 / max_code as f64
        };
        Adc {
            lsb,
            max_code: Some(max_code),
        }
    }
}

/// Multiplicative read noise on one column sum followed by conversion with
/// saturation. Returns the output code.
pub fn apply_noise_and_adc<R: Rng + ?Sized>(analog_sum: f64, adc: &Adc, noise: &TruncatedNormal, rng: &mut R) -> i64 {
    let perturbed = if analog_sum == 0.0 {
        0.0
    } else {
        analog_sum * (1.0 + noise.sample(rng))
    };
    let code = (perturbed / adc.lsb).round() as i64;
    match adc.max_code {
        Some(m) => code.clamp(-m, m),
        None => code,
    }
}

// ---------------------------------------------------------------------------
// Additional function
// ---------------------------------------------------------------------------

/// Operands an additional function may need besides the column itself.
#[derive(Debug, Clone, Default)]
pub struct FnContext<'a> {
    pub head_width: usize,
    pub hidden: usize,
    /// `a_i` for every output row.
    pub row_scalars: Option<ArrayView1<'a, f64>>,
    /// Residual column `x_{.t}`.
    pub residual: Option<ArrayView1<'a, f64>>,
}

pub fn apply_additional_fn(f: AdditionalFn, col: ArrayView1<f64>, ctx: &FnContext) -> Result<ndarray::Array1<f64>> {
    let need = |v: Option<ArrayView1<'_, f64>>, what: &str| -> Result<ndarray::Array1<f64>> {
        let v = v.ok_or_else(|| Error::Scheduling(format!("{what} is not available to the F unit")))?;
        if v.len() != col.len() {
            return Err(Error::dim(what, col.len(), v.len()));
        }
        Ok(v.to_owned())
    };
    Ok(match f {
        AdditionalFn::Identity => col.to_owned(),
        AdditionalFn::ScaleByInvSqrtDk => {
            let inv = 1.0 / (ctx.head_width as f64).sqrt();
            col.mapv(|v| v * inv)
        }
        AdditionalFn::Exp => {
            let out = col.mapv(f64::exp);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("exponential overflowed".into()));
            }
            out
        }
        AdditionalFn::DivideByRowScalar(_) => {
            let a = need(ctx.row_scalars, "row scalar register")?;
            if let Some(i) = a.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Numeric(format!("row scalar a[{i}] = {} is not positive", a[i])));
            }
            &col / &a
        }
        AdditionalFn::AddResidualColumn(_) => &col + &need(ctx.residual, "residual column")?,
        AdditionalFn::ReLU => col.mapv(|v| v.max(0.0)),
        AdditionalFn::ScaleByInvM => col.mapv(|v| v / ctx.hidden as f64),
    })
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// Per-session random stream derived from `(seed, sub-op id, t)`.
pub fn session_rng(seed: u64, subop: usize, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((subop as u64) << 32) | t as u64);
    rng
}

/// Digit-serial crossbar engine. Weight-stationary columns are read from the
/// dense store when one is attached.
pub struct CrossbarEngine<'a> {
    cfg: CrossbarConfig,
    weights: &'a QuantizedWeights,
    dense: Option<(&'a DenseStore, f64)>,
}

impl<'a> CrossbarEngine<'a> {
    pub fn new(cfg: CrossbarConfig, weights: &'a QuantizedWeights) -> Result<Self> {
        cfg.validate()?;
        Ok(CrossbarEngine {
            cfg,
            weights,
            dense: None,
        })
    }

    /// Read weight columns from `store` with read noise bounded by `noise_amp`
    /// (fraction of the cell's full-scale range).
    pub fn with_dense(mut self, store: &'a DenseStore, noise_amp: f64) -> Self {
        self.dense = Some((store, noise_amp));
        self
    }

    pub fn config(&self) -> &CrossbarConfig {
        &self.cfg
    }

    #[allow(clippy::too_many_arguments)]
    fn session(
        &self,
        op: &SubOp,
        j: usize,
        ql: &QuantTensor,
        digits: &[i32],
        lhs: &LhsOperand,
        qr: &QuantRhs,
        rhs: &RhsOperand,
        scheme: &EncodingScheme,
    ) -> Result<(Vec<f64>, SessionTrace)> {
        let cfg = &self.cfg;
        let t = op.session_range.first + j;
        let k = lhs.inner_len();
        let nd = scheme.n_digits() as usize;
        let mut rng = session_rng(cfg.seed, op.id, t);

        let mut events = EventCounts::default();
        let w: Vec<i32> = match (self.dense, rhs) {
            (Some((store, amp)), RhsOperand::Weight { .. }) => {
                let read = store.read_session(op.id, t, amp, &mut rng)?;
                events.dense_column_activations += read.columns as u64;
                events.dense_cell_reads += read.cells as u64;
                read.weights
            }
            _ => qr.column(j, k),
        };
        if w.len() != k {
            return Err(Error::dim(format!("weight column of sub-op {} session {t}", op.id), k, w.len()));
        }
        let dac_limit = (1i64 << (cfg.dac_bits - 1)) - 1;
        if let Some(&bad) = w.iter().find(|v| (v.unsigned_abs() as i64) > dac_limit) {
            return Err(Error::Range {
                what: format!("{}-bit DAC", cfg.dac_bits),
                value: bad as i64,
                limit: dac_limit,
            });
        }

        let rows: Vec<usize> = if lhs.per_session_row { vec![t - 1] } else { (0..ql.data.nrows()).collect() };
        let noise = TruncatedNormal::new(cfg.noise_fraction);
        let bound = scheme.digit_bound() as i64;
        let mut outputs = vec![0.0; rows.len()];
        let n_tiles = k.div_ceil(cfg.rows);
        let mut resistors = 0u64;
        for tile in 0..n_tiles {
            let span = tile * cfg.rows..((tile + 1) * cfg.rows).min(k);
            let full_scale: i64 = w[span.clone()].iter().map(|&v| v.unsigned_abs() as i64 * bound).sum();
            let adc = Adc::ranged(full_scale, cfg.adc_bits, cfg.ideal_adc);
            for (out, &r) in outputs.iter_mut().zip(&rows) {
                let base = r * k * nd;
                let mut acc = 0i64;
                for step in 0..nd {
                    let mut column = 0i64;
                    for i in span.clone() {
                        let d = digits[base + i * nd + step];
                        if d != 0 {
                            column += w[i] as i64 * d as i64;
                            if w[i] != 0 {
                                resistors += d.unsigned_abs().count_ones() as u64;
                            }
                        }
                    }
                    let code = apply_noise_and_adc(column as f64, &adc, &noise, &mut rng);
                    acc = scheme.times_base(acc) + code;
                }
                *out += acc as f64 * adc.lsb;
            }
        }
        for v in &mut outputs {
            *v = *v * ql.scale * qr.scale();
        }

        let n_rows = rows.len();
        let groups = n_rows.div_ceil(cfg.dup_factor);
        let steps = cfg.session_steps(nd as u32, n_rows, k);
        let reads_per_digit = (n_rows * n_tiles) as u64;
        events.dac += (nd * groups * k) as u64;
        events.adc += reads_per_digit * nd as u64;
        events.sample_hold += reads_per_digit * nd as u64;
        events.shift_add += reads_per_digit * nd as u64;
        events.resistor += resistors;
        events.encoder += (n_rows * k) as u64;
        events.register_bits += (n_rows * k * nd) as u64 * (1 + cfg.scale_factor as u64);
        events.f_unit += n_rows as u64;
        let lhs_bits = ql.bits as u64;
        let mut activation_read_bits = (n_rows * k) as u64 * lhs_bits;
        if let RhsOperand::Runtime(_) = rhs {
            activation_read_bits += k as u64 * cfg.weight_bits as u64;
        }
        events.cache_read_bits += activation_read_bits;
        events.cache_write_bits += n_rows as u64 * cfg.act_bits as u64;
        let weight_stream_bits = match rhs {
            RhsOperand::Weight { .. } => k as u64 * cfg.weight_bits as u64,
            _ => 0,
        };

        let mut compute_ns = 0.0;
        let tm = &cfg.timing;
        for _ in 0..n_tiles {
            for g in 0..groups {
                let active = (n_rows - g * cfg.dup_factor).min(cfg.dup_factor);
                let step_ns = tm.cycle_ns.max(active as f64 * tm.adc_sample_ns / tm.adcs as f64);
                compute_ns += step_ns * nd as f64;
            }
        }

        let trace = SessionTrace {
            t,
            weights_loaded: k as u64,
            steps_executed: steps,
            outputs: Vec::new(),
            events,
            compute_seconds: compute_ns * 1e-9,
            activation_read_bits,
            weight_stream_bits,
        };
        Ok((outputs, trace))
    }

    /// Aggregate an execution of this engine into a trace summary.
    pub fn summarize(&self, run: &Execution, bandwidths: Bandwidths) -> TraceSummary {
        summarize(run, &self.cfg, self.name(), bandwidths, self.dense.map(|(s, _)| s))
    }
}

impl MacEngine for CrossbarEngine<'_> {
    fn name(&self) -> &'static str {
        "crossbar"
    }

    fn products(&self, op: &SubOp, lhs: &LhsOperand, rhs: &RhsOperand) -> Result<Products> {
        let bits = self.cfg.precision().lhs_bits(lhs.source);
        let scheme = self.cfg.scheme(bits)?;
        let ql = quantize(lhs.matrix.view(), bits)?;
        let qr = quantize_rhs(rhs, self.weights, self.cfg.weight_bits)?;
        let nd = scheme.n_digits() as usize;
        let mut digits = Vec::with_capacity(ql.data.len() * nd);
        for &x in ql.data.iter() {
            digits.extend(encode(x as i64, &scheme)?.digits);
        }
        let t_count = rhs.sessions();
        let results: Vec<(Vec<f64>, SessionTrace)> = (0..t_count)
            .into_par_iter()
            .map(|j| self.session(op, j, &ql, &digits, lhs, &qr, rhs, &scheme))
            .collect::<Result<_>>()?;
        let rows = lhs.session_rows();
        let mut values = Array2::zeros((rows, t_count));
        let mut sessions = Vec::with_capacity(t_count);
        for (j, (out, trace)) in results.into_iter().enumerate() {
            for (r, v) in out.into_iter().enumerate() {
                values[[r, j]] = v;
            }
            sessions.push(trace);
        }
        Ok(Products { values, sessions })
    }

    fn intermediate_bits(&self) -> Option<u32> {
        self.cfg.intermediate_bits
    }
}

/// Trace summary of any execution; engines without session records yield
/// zero counters.
pub fn summarize(
    run: &Execution,
    cfg: &CrossbarConfig,
    engine: &str,
    bandwidths: Bandwidths,
    dense: Option<&DenseStore>,
) -> TraceSummary {
    let mut totals = EventCounts::default();
    let mut subops = Vec::with_capacity(run.subops.len());
    let mut seen_activations = std::collections::BTreeSet::new();
    let mut activation_elements = 0u64;
    for (op, sessions) in &run.subops {
        let src = op.lhs.buffer();
        if seen_activations.insert(src) {
            if let Some(b) = run.buffers.get(&src) {
                activation_elements += b.len() as u64;
            }
        }
        let mut agg = SubOpTrace {
            id: op.id,
            origin: op.origin,
            multiply_kind: op.multiply_kind,
            sessions: op.session_range.len() as u64,
            steps: 0,
            weights_loaded: 0,
            activation_read_bits: 0,
            weight_stream_bits: 0,
            session_seconds: 0.0,
            events: EventCounts::default(),
        };
        for s in sessions {
            agg.steps += s.steps_executed;
            agg.weights_loaded += s.weights_loaded;
            agg.activation_read_bits += s.activation_read_bits;
            agg.weight_stream_bits += s.weight_stream_bits;
            agg.session_seconds += s.compute_seconds.max(s.activation_read_bits as f64 / bandwidths.activation_bps);
            agg.events += s.events;
        }
        totals += agg.events;
        subops.push(agg);
    }
    totals.epilogue_ops += run.epilogue_rows;
    TraceSummary {
        layer: run.layer,
        engine: engine.to_string(),
        scale_factor: cfg.scale_factor,
        dup_factor: cfg.dup_factor,
        activation_bits: cfg.act_bits,
        weight_bits: cfg.weight_bits,
        bandwidths,
        subops,
        epilogue_rows: run.epilogue_rows,
        epilogue_seconds: run.epilogue_rows as f64 * cfg.timing.epilogue_ns * 1e-9,
        activation_elements,
        dense_banks_used: dense.map_or(0, |d| d.layout().banks_used),
        dense_mapped_bits: dense.map_or(0, |d| d.layout().mapped_bits),
        totals,
    }
}

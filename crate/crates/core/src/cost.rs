//! Area, energy and latency accounting.
//!
//! Unit costs come from a TOML table ([`ComponentCosts`]); event counts come
//! from simulation traces. Conventional crossbar architectures that keep
//! every parameter resident are modelled analytically for comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::CacheConfig;
use crate::crossbar::CrossbarConfig;
use crate::decompose::Program;
use crate::dense::DenseConfig;
use crate::error::{Error, Result};
use crate::model::LayerSpec;
use crate::trace::{Bandwidths, TraceSummary, EVENT_NAMES};

/// Built-in cost table.
pub const DEFAULT_COSTS_TOML: &str = include_str!("costs_default.toml");

const UM2_PER_MM2: f64 = 1e6;
const PJ_PER_MJ: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitCost {
    pub area_um2: f64,
    pub energy_pj: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterCost {
    pub bits: u32,
    pub area_um2: f64,
    pub energy_pj: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputationParams {
    pub crossbars: usize,
    pub registers: u64,
    pub register_width: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseParams {
    pub registers: u64,
    pub register_width: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineCrossbar {
    pub cell_bits: u32,
    pub dac_bits: u32,
    pub adc_bits: u32,
    pub adcs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineParams {
    pub rows: usize,
    pub cols: usize,
    pub weight_bits: u32,
    pub cycle_ns: f64,
    pub adc_sample_ns: f64,
    pub crossbars_per_chip: u64,
    pub multi_bit: Option<BaselineCrossbar>,
    pub single_bit: Option<BaselineCrossbar>,
    pub traditional: Option<BaselineCrossbar>,
}

/// Per-unit areas and per-event energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentCosts {
    pub technology: String,
    pub dac: Vec<ConverterCost>,
    pub adc: Vec<ConverterCost>,
    pub memristor_cell: UnitCost,
    pub dense_cell: UnitCost,
    pub resistor: UnitCost,
    pub register_bit: UnitCost,
    pub shift_add: UnitCost,
    pub f_unit: UnitCost,
    pub encoder: UnitCost,
    pub sample_hold: UnitCost,
    pub cache_bit: UnitCost,
    pub epilogue: UnitCost,
    pub computation: ComputationParams,
    pub dense: DenseParams,
    pub baseline: BaselineParams,
}

impl Default for ComponentCosts {
    fn default() -> Self {
        ComponentCosts::from_toml(DEFAULT_COSTS_TOML).expect("built-in cost table parses")
    }
}

impl ComponentCosts {
    pub fn from_toml(text: &str) -> Result<Self> {
        let costs: ComponentCosts = toml::from_str(text).map_err(|e| Error::Schema(format!("cost table: {e}")))?;
        costs.validate()?;
        Ok(costs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ComponentCosts::from_toml(&text).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let units = [
            ("memristor_cell", self.memristor_cell),
            ("dense_cell", self.dense_cell),
            ("resistor", self.resistor),
            ("register_bit", self.register_bit),
            ("shift_add", self.shift_add),
            ("f_unit", self.f_unit),
            ("encoder", self.encoder),
            ("sample_hold", self.sample_hold),
            ("cache_bit", self.cache_bit),
            ("epilogue", self.epilogue),
        ];
        for (name, u) in units {
            if !(u.area_um2 >= 0.0 && u.energy_pj >= 0.0) {
                return Err(Error::Config(format!("cost table: `{name}` has a negative or missing cost")));
            }
        }
        for (name, table) in [("dac", &self.dac), ("adc", &self.adc)] {
            let mut sorted = table.clone();
            sorted.sort_by_key(|c| c.bits);
            for c in &sorted {
                if !(c.area_um2 >= 0.0 && c.energy_pj >= 0.0) {
                    return Err(Error::Config(format!("cost table: {name} {}-bit has a negative cost", c.bits)));
                }
            }
            for w in sorted.windows(2) {
                if w[0].bits == w[1].bits {
                    return Err(Error::Config(format!("cost table: duplicate {name} entry for {} bits", w[0].bits)));
                }
                if w[1].area_um2 < w[0].area_um2 || w[1].energy_pj < w[0].energy_pj {
                    return Err(Error::Config(format!(
                        "cost table: {name} cost decreases from {} to {} bits",
                        w[0].bits, w[1].bits
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dac(&self, bits: u32) -> Result<UnitCost> {
        converter(&self.dac, "dac", bits)
    }

    pub fn adc(&self, bits: u32) -> Result<UnitCost> {
        converter(&self.adc, "adc", bits)
    }

    fn baseline_crossbar(&self, arch: BaselineArch) -> Result<BaselineCrossbar> {
        let entry = match arch {
            BaselineArch::MultiBit => self.baseline.multi_bit,
            BaselineArch::SingleBit => self.baseline.single_bit,
            BaselineArch::Traditional => self.baseline.traditional,
        };
        entry.ok_or_else(|| Error::Config(format!("cost table has no [baseline.{}] entry", arch.key())))
    }
}

fn converter(table: &[ConverterCost], name: &str, bits: u32) -> Result<UnitCost> {
    table
        .iter()
        .find(|c| c.bits == bits)
        .map(|c| UnitCost {
            area_um2: c.area_um2,
            energy_pj: c.energy_pj,
        })
        .ok_or_else(|| Error::Config(format!("cost table has no {bits}-bit {name} entry")))
}

/// Hardware instance being costed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hardware {
    pub crossbar: CrossbarConfig,
    pub dense: DenseConfig,
    pub cache: CacheConfig,
    pub bandwidths: Bandwidths,
}

// ---------------------------------------------------------------------------
// Lower bound
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    /// Activation read multiplicity.
    pub alpha_a: f64,
    /// Activation elements.
    pub s_a: u64,
    pub b_a: u32,
    pub b_a_bps: f64,
    /// Parameters streamed from the dense crossbars.
    pub n_w: u64,
    pub b_w: u32,
    pub b_w_bps: f64,
    pub t_a: f64,
    pub t_w: f64,
    pub t_lb: f64,
}

/// `(T_a, T_w, max(T_a, T_w))` in seconds.
pub fn latency_lower_bound(
    alpha_a: f64,
    s_a: u64,
    b_a: u32,
    bw_a: f64,
    n_w: u64,
    b_w: u32,
    bw_w: f64,
) -> Result<(f64, f64, f64)> {
    if !(bw_a > 0.0 && bw_w > 0.0) {
        return Err(Error::Config(format!("bandwidths must be positive (got {bw_a} and {bw_w} bit/s)")));
    }
    let t_a = alpha_a * s_a as f64 * b_a as f64 / bw_a;
    let t_w = n_w as f64 * b_w as f64 / bw_w;
    Ok((t_a, t_w, t_a.max(t_w)))
}

fn trace_lower_bound(traces: &[TraceSummary]) -> Result<LowerBound> {
    let bw = traces.first().map(|t| t.bandwidths).unwrap_or_default();
    let b_a = traces.first().map_or(8, |t| t.activation_bits);
    let b_w = traces.first().map_or(8, |t| t.weight_bits);
    let s_a: u64 = traces.iter().map(|t| t.activation_elements).sum();
    let read_bits: u64 = traces.iter().map(|t| t.activation_read_bits()).sum();
    let alpha_a = if s_a == 0 {
        0.0
    } else {
        read_bits as f64 / (s_a as f64 * b_a as f64)
    };
    let n_w: u64 = traces.iter().map(|t| t.layer.crossbar_param_count()).sum();
    let (t_a, t_w, t_lb) = latency_lower_bound(alpha_a, s_a, b_a, bw.activation_bps, n_w, b_w, bw.weight_bps)?;
    Ok(LowerBound {
        alpha_a,
        s_a,
        b_a,
        b_a_bps: bw.activation_bps,
        n_w,
        b_w,
        b_w_bps: bw.weight_bps,
        t_a,
        t_w,
        t_lb,
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// A published figure next to the value this model produces for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub metric: String,
    pub published: f64,
    pub simulated: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub technology: String,
    pub architecture: String,
    pub area_mm2: f64,
    pub area_breakdown_mm2: BTreeMap<String, f64>,
    pub energy_mj: f64,
    pub energy_breakdown_mj: BTreeMap<String, f64>,
    pub latency_s: f64,
    pub adp_mm2_s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lower_bound: Option<LowerBound>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub annotations: Vec<Annotation>,
}

impl CostReport {
    fn new(technology: &str, architecture: &str, area_um2: BTreeMap<String, f64>, energy_pj: BTreeMap<String, f64>, latency_s: f64) -> Self {
        let area_breakdown_mm2: BTreeMap<String, f64> = area_um2.into_iter().map(|(k, v)| (k, v / UM2_PER_MM2)).collect();
        let energy_breakdown_mj: BTreeMap<String, f64> = energy_pj.into_iter().map(|(k, v)| (k, v / PJ_PER_MJ)).collect();
        let area_mm2 = area_breakdown_mm2.values().sum::<f64>();
        let energy_mj = energy_breakdown_mj.values().sum::<f64>();
        CostReport {
            technology: technology.to_string(),
            architecture: architecture.to_string(),
            area_mm2,
            area_breakdown_mm2,
            energy_mj,
            energy_breakdown_mj,
            latency_s,
            adp_mm2_s: area_mm2 * latency_s,
            lower_bound: None,
            annotations: Vec::new(),
        }
    }

    /// Breakdown rows as CSV: `kind,component,value`.
    pub fn breakdown_csv(&self) -> String {
        let mut out = String::from("kind,component,value\n");
        for (k, v) in &self.area_breakdown_mm2 {
            let _ = writeln!(out, "area_mm2,{k},{v:e}");
        }
        for (k, v) in &self.energy_breakdown_mj {
            let _ = writeln!(out, "energy_mj,{k},{v:e}");
        }
        out
    }
}

/// Dense banks needed to hold `params` weights.
pub fn dense_banks_for(params: u64, dense: &DenseConfig) -> u64 {
    (params * dense.cells_per_weight() as u64 * dense.bits_per_cell as u64).div_ceil(dense.bank_capacity_bits())
}

/// Area of the proposed architecture holding `params` weights, per component.
pub fn proposed_area_um2(params: u64, hw: &Hardware, costs: &ComponentCosts) -> Result<BTreeMap<String, f64>> {
    let x = &hw.crossbar;
    let n = costs.computation.crossbars as f64;
    let adcs = x.timing.adcs as f64;
    let mut a = BTreeMap::new();
    a.insert("compute.dac".into(), n * x.rows as f64 * costs.dac(x.dac_bits)?.area_um2);
    a.insert("compute.adc".into(), n * adcs * costs.adc(x.adc_bits)?.area_um2);
    a.insert("compute.resistor".into(), n * (x.rows * x.cols) as f64 * costs.resistor.area_um2);
    a.insert(
        "compute.register".into(),
        n * (costs.computation.registers * costs.computation.register_width as u64) as f64 * costs.register_bit.area_um2,
    );
    a.insert("compute.sample_hold".into(), n * x.cols as f64 * costs.sample_hold.area_um2);
    a.insert("compute.shift_add".into(), n * adcs * costs.shift_add.area_um2);
    a.insert("compute.encoder".into(), n * costs.encoder.area_um2);
    a.insert("compute.f_unit".into(), n * adcs * costs.f_unit.area_um2);
    let d = &hw.dense;
    let banks = dense_banks_for(params, d) as f64;
    a.insert("dense.cells".into(), banks * (d.rows * d.cols) as f64 * costs.dense_cell.area_um2);
    a.insert("dense.dac".into(), banks * d.cols as f64 * costs.dac(1)?.area_um2);
    a.insert("dense.adc".into(), banks * d.rows as f64 * costs.adc(d.bits_per_cell)?.area_um2);
    a.insert(
        "dense.register".into(),
        banks * (costs.dense.registers * costs.dense.register_width as u64) as f64 * costs.register_bit.area_um2,
    );
    a.insert("cache".into(), hw.cache.total_bits() as f64 * costs.cache_bit.area_um2);
    a.insert("epilogue".into(), costs.epilogue.area_um2);
    Ok(a)
}

/// Energy per event kind, in picojoules.
fn event_energy_pj(name: &str, hw: &Hardware, costs: &ComponentCosts) -> Result<f64> {
    Ok(match name {
        "compute.dac" => costs.dac(hw.crossbar.dac_bits)?.energy_pj,
        "compute.adc" => costs.adc(hw.crossbar.adc_bits)?.energy_pj,
        "compute.resistor" => costs.resistor.energy_pj,
        "compute.sample_hold" => costs.sample_hold.energy_pj,
        "compute.shift_add" => costs.shift_add.energy_pj,
        "compute.encoder" => costs.encoder.energy_pj,
        "compute.f_unit" => costs.f_unit.energy_pj,
        "compute.register_bits" => costs.register_bit.energy_pj,
        "dense.column_activations" => costs.dac(1)?.energy_pj,
        "dense.cell_reads" => costs.adc(hw.dense.bits_per_cell)?.energy_pj + costs.dense_cell.energy_pj,
        "cache.read_bits" | "cache.write_bits" => costs.cache_bit.energy_pj,
        "epilogue.ops" => costs.epilogue.energy_pj,
        other => return Err(Error::Accounting(format!("no cost entry for component `{other}`"))),
    })
}

/// Cost of running the traced layers on the given hardware.
pub fn cost_from_trace(traces: &[TraceSummary], hw: &Hardware, costs: &ComponentCosts) -> Result<CostReport> {
    let params: u64 = traces.iter().map(|t| t.layer.crossbar_param_count()).sum();
    let mut area = proposed_area_um2(params, hw, costs)?;
    let banks_traced = traces.iter().map(|t| t.dense_banks_used as u64).max().unwrap_or(0);
    if banks_traced > dense_banks_for(params, &hw.dense) {
        let extra = proposed_area_um2(banks_traced * hw.dense.bank_capacity_bits() / hw.dense.weight_bits as u64, hw, costs)?;
        for k in ["dense.cells", "dense.dac", "dense.adc", "dense.register"] {
            area.insert(k.into(), extra[k]);
        }
    }
    let mut energy: BTreeMap<String, f64> = EVENT_NAMES.iter().map(|n| (n.to_string(), 0.0)).collect();
    let mut latency = 0.0;
    for t in traces {
        if !t.subops.is_empty() && t.total_steps() == 0 {
            return Err(Error::Accounting(format!(
                "trace from engine `{}` has no session records; cost needs a crossbar trace",
                t.engine
            )));
        }
        for (name, count) in t.totals.to_map() {
            let e = event_energy_pj(&name, hw, costs)?;
            *energy.get_mut(&name).expect("event name") += count as f64 * e;
        }
        let compute: f64 = t.subops.iter().map(|s| s.session_seconds).sum();
        latency += compute + t.weight_stream_bits() as f64 / t.bandwidths.weight_bps + t.epilogue_seconds;
    }
    let mut report = CostReport::new(&costs.technology, "proposed", area, energy, latency);
    if !traces.is_empty() {
        let lb = trace_lower_bound(traces)?;
        if report.latency_s < lb.t_lb {
            return Err(Error::Accounting(format!(
                "simulated latency {} s is below the lower bound {} s",
                report.latency_s, lb.t_lb
            )));
        }
        report.lower_bound = Some(lb);
    }
    Ok(report)
}

/// Parse trace JSON (one summary or an array of them). Unknown event names
/// are accounting errors.
pub fn parse_traces(text: &str) -> Result<Vec<TraceSummary>> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Schema(format!("trace: {e}")))?;
    let items = match value {
        serde_json::Value::Array(v) => v,
        other => vec![other],
    };
    let check = |events: Option<&serde_json::Value>, at: &str| -> Result<()> {
        if let Some(serde_json::Value::Object(map)) = events {
            if let Some(name) = map.keys().find(|k| !EVENT_NAMES.contains(&k.as_str())) {
                return Err(Error::Accounting(format!("unknown component `{name}` in {at}")));
            }
        }
        Ok(())
    };
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        check(item.get("totals"), &format!("trace[{i}].totals"))?;
        if let Some(serde_json::Value::Array(subops)) = item.get("subops") {
            for (j, s) in subops.iter().enumerate() {
                check(s.get("events"), &format!("trace[{i}].subops[{j}].events"))?;
            }
        }
        out.push(serde_json::from_value(item).map_err(|e| Error::Schema(format!("trace[{i}]: {e}")))?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Step prediction
// ---------------------------------------------------------------------------

/// Digit steps the computation crossbar needs for `program`.
pub fn predict_steps(program: &Program, cfg: &CrossbarConfig) -> Result<u64> {
    let spec = program.layer;
    let precision = cfg.precision();
    let mut total = 0;
    for op in program.subops() {
        let nd = cfg.scheme(precision.lhs_bits(op.lhs.buffer()))?.n_digits();
        let per_session = cfg.session_steps(nd, op.activation_rows(&spec), op.inner_len(&spec));
        total += per_session * op.session_range.len() as u64;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineArch {
    MultiBit,
    SingleBit,
    Traditional,
}

impl BaselineArch {
    pub const ALL: [BaselineArch; 3] = [BaselineArch::MultiBit, BaselineArch::SingleBit, BaselineArch::Traditional];

    pub fn key(self) -> &'static str {
        match self {
            BaselineArch::MultiBit => "multi_bit",
            BaselineArch::SingleBit => "single_bit",
            BaselineArch::Traditional => "traditional",
        }
    }
}

/// Conventional crossbars needed to hold `params` weights.
pub fn baseline_crossbars(params: u64, arch: BaselineArch, costs: &ComponentCosts) -> Result<u64> {
    let b = &costs.baseline;
    let x = costs.baseline_crossbar(arch)?;
    let cells_per_param = b.weight_bits.div_ceil(x.cell_bits) as u64;
    Ok((params * cells_per_param).div_ceil((b.rows * b.cols) as u64))
}

fn baseline_crossbar_area_um2(arch: BaselineArch, costs: &ComponentCosts) -> Result<BTreeMap<String, f64>> {
    let b = &costs.baseline;
    let x = costs.baseline_crossbar(arch)?;
    let mut a = BTreeMap::new();
    a.insert("dac".to_string(), b.rows as f64 * costs.dac(x.dac_bits)?.area_um2);
    a.insert("adc".to_string(), x.adcs as f64 * costs.adc(x.adc_bits)?.area_um2);
    a.insert("cells".to_string(), (b.rows * b.cols) as f64 * costs.memristor_cell.area_um2);
    a.insert("sample_hold".to_string(), b.cols as f64 * costs.sample_hold.area_um2);
    a.insert("shift_add".to_string(), x.adcs as f64 * costs.shift_add.area_um2);
    Ok(a)
}

/// Analytic cost of running `layers` with every parameter resident in
/// conventional crossbars.
pub fn baseline_cost(layers: &[LayerSpec], arch: BaselineArch, costs: &ComponentCosts) -> Result<CostReport> {
    let b = &costs.baseline;
    let x = costs.baseline_crossbar(arch)?;
    let params: u64 = layers.iter().map(|l| l.crossbar_param_count()).sum();
    let crossbars = baseline_crossbars(params, arch, costs)? as f64;
    let area: BTreeMap<String, f64> = baseline_crossbar_area_um2(arch, costs)?
        .into_iter()
        .map(|(k, v)| (k, v * crossbars))
        .collect();

    // One input vector through one crossbar, bit-serial when the DAC is narrower
    // than the activations.
    let steps = b.weight_bits.div_ceil(x.dac_bits) as f64;
    let per_activation: [(&str, f64); 5] = [
        ("dac", steps * b.rows as f64 * costs.dac(x.dac_bits)?.energy_pj),
        ("adc", steps * b.cols as f64 * costs.adc(x.adc_bits)?.energy_pj),
        ("cells", steps * (b.rows * b.cols) as f64 * costs.memristor_cell.energy_pj),
        ("sample_hold", steps * b.cols as f64 * costs.sample_hold.energy_pj),
        ("shift_add", steps * b.cols as f64 * costs.shift_add.energy_pj),
    ];
    let mut energy: BTreeMap<String, f64> = per_activation.iter().map(|(k, _)| (k.to_string(), 0.0)).collect();
    let step_s = (b.cycle_ns.max(b.cols as f64 * b.adc_sample_ns / x.adcs as f64)) * 1e-9;
    let mut latency = 0.0;
    for l in layers {
        let activations = l.n_tokens as f64 * baseline_crossbars(l.crossbar_param_count(), arch, costs)? as f64;
        for (k, e) in per_activation {
            *energy.get_mut(k).expect("component") += activations * e;
        }
        latency += l.n_tokens as f64 * steps * step_s;
    }
    Ok(CostReport::new(&costs.technology, arch.key(), area, energy, latency))
}

// ---------------------------------------------------------------------------
// Scaling sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub params: u64,
    pub architecture: String,
    pub area_mm2: f64,
}

/// Area against parameter count for the proposed architecture and each baseline.
pub fn scaling_sweep(params: &[u64], archs: &[BaselineArch], hw: &Hardware, costs: &ComponentCosts) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &p in params {
        let area = proposed_area_um2(p, hw, costs)?.values().sum::<f64>() / UM2_PER_MM2;
        rows.push(SweepRow {
            params: p,
            architecture: "proposed".into(),
            area_mm2: area,
        });
        for &arch in archs {
            let per = baseline_crossbar_area_um2(arch, costs)?.values().sum::<f64>();
            rows.push(SweepRow {
                params: p,
                architecture: arch.key().into(),
                area_mm2: baseline_crossbars(p, arch, costs)? as f64 * per / UM2_PER_MM2,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("params,architecture,area_mm2\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:e}", r.params, r.architecture, r.area_mm2);
    }
    out
}

// ---------------------------------------------------------------------------
// Published reference values
// ---------------------------------------------------------------------------

pub const GPT3_PARAMS: u64 = 175_000_000_000;

/// BERT-Large: 24 layers, 1024 wide, 4096 feed-forward, 16 heads.
pub fn bert_large(n_tokens: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::new(n_tokens, 1024, 4096, 16).expect("valid shape"); 24]
}

/// Comparative figures reported next to the simulated values. They are
/// informational; nothing checks them.
pub fn reference_annotations(hw: &Hardware, costs: &ComponentCosts) -> Result<Vec<Annotation>> {
    let layers = bert_large(256);
    let params: u64 = layers.iter().map(|l| l.crossbar_param_count()).sum();
    let ours_area = proposed_area_um2(params, hw, costs)?.values().sum::<f64>() / UM2_PER_MM2;
    let sb = baseline_cost(&layers, BaselineArch::SingleBit, costs)?;
    let mb = baseline_cost(&layers, BaselineArch::MultiBit, costs)?;
    let gpt_ours = proposed_area_um2(GPT3_PARAMS, hw, costs)?.values().sum::<f64>();
    let gpt_trad_xbars = baseline_crossbars(GPT3_PARAMS, BaselineArch::Traditional, costs)?;
    let gpt_trad = gpt_trad_xbars as f64 * baseline_crossbar_area_um2(BaselineArch::Traditional, costs)?.values().sum::<f64>();
    let (_, t_w, _) = latency_lower_bound(0.0, 0, 8, hw.bandwidths.activation_bps, params, 8, hw.bandwidths.weight_bps)?;
    Ok(vec![
        Annotation {
            metric: "area reduction vs single-bit crossbars (BERT-Large)".into(),
            published: 39.0,
            simulated: Some(sb.area_mm2 / ours_area),
            note: "depends on the cost table".into(),
        },
        Annotation {
            metric: "area reduction vs multi-bit crossbars (BERT-Large)".into(),
            published: 6.0,
            simulated: Some(mb.area_mm2 / ours_area),
            note: "depends on the cost table".into(),
        },
        Annotation {
            metric: "energy reduction vs single-bit crossbars".into(),
            published: 18.0,
            simulated: None,
            note: "needs a full-model crossbar trace".into(),
        },
        Annotation {
            metric: "ADP reduction vs TPU/GPU".into(),
            published: 68.0,
            simulated: None,
            note: "no TPU/GPU model".into(),
        },
        Annotation {
            metric: "energy saving vs TPU/GPU (%)".into(),
            published: 69.0,
            simulated: None,
            note: "no TPU/GPU model".into(),
        },
        Annotation {
            metric: "GPT-3 area, proposed / traditional".into(),
            published: 1.0 / 51.0,
            simulated: Some(gpt_ours / gpt_trad),
            note: "depends on the cost table".into(),
        },
        Annotation {
            metric: "GPT-3 chips with traditional crossbars".into(),
            published: 2777.0,
            simulated: Some(gpt_trad_xbars as f64 / costs.baseline.crossbars_per_chip as f64),
            note: "uses the per-chip crossbar budget from the cost table".into(),
        },
        Annotation {
            metric: "BERT-Large weight lower bound T_w (us)".into(),
            published: 61.5,
            simulated: Some(t_w * 1e6),
            note: "N_w * b_w / B_w over all 24 layers; the published value implies unstated pipelining".into(),
        },
    ])
}

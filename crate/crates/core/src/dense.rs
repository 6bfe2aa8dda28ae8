//! The dense crossbar: a memory-like memristor bank holding every weight.
//!
//! Weights are stored two's complement, most significant cell first, in
//! `b_w / bits_per_cell` consecutive cells of one column. Only one column is
//! activated per read, so each cell is sensed independently: its analog level
//! plus read noise is decided to the nearest of the `2^bits_per_cell` levels.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crossbar::TruncatedNormal;
use crate::decompose::{Program, Rhs};
use crate::error::{Error, Result};
use crate::exec::QuantizedWeights;

/// Read-noise bound of one sensing event at multiplier 1, as a fraction of
/// the cell's full-scale conductance range.
///
/// With levels evenly spread over `[0, 1]` the nearest-level decision holds
/// while the noise stays below half a level spacing: `1/6` for 2-bit cells
/// (6.67x this bound) and `1/2` for 1-bit cells (20x).
pub const BASE_READ_NOISE: f64 = 0.025;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseConfig {
    pub rows: usize,
    pub cols: usize,
    pub bits_per_cell: u32,
    pub banks: usize,
    pub weight_bits: u32,
    /// Read noise in multiples of [`BASE_READ_NOISE`].
    pub noise_multiplier: f64,
}

impl Default for DenseConfig {
    fn default() -> Self {
        DenseConfig {
            rows: 1024,
            cols: 65536,
            bits_per_cell: 2,
            banks: 1,
            weight_bits: 8,
            noise_multiplier: 1.0,
        }
    }
}

impl DenseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("dense bank rows and cols must be at least 1".into()));
        }
        if !(1..=8).contains(&self.bits_per_cell) || !self.weight_bits.is_multiple_of(self.bits_per_cell) {
            return Err(Error::Config(format!(
                "{}-bit weights cannot be split into {}-bit cells",
                self.weight_bits, self.bits_per_cell
            )));
        }
        if !(2..=16).contains(&self.weight_bits) {
            return Err(Error::Config(format!("weight_bits must be in [2, 16], got {}", self.weight_bits)));
        }
        if !(self.noise_multiplier >= 0.0) {
            return Err(Error::Config("noise_multiplier must be non-negative".into()));
        }
        Ok(())
    }

    pub fn cells_per_weight(&self) -> usize {
        (self.weight_bits / self.bits_per_cell) as usize
    }

    pub fn bank_capacity_bits(&self) -> u64 {
        self.rows as u64 * self.cols as u64 * self.bits_per_cell as u64
    }

    pub fn noise_amp(&self) -> f64 {
        self.noise_multiplier * BASE_READ_NOISE
    }
}

/// Placement of one session's weight column: a run of consecutive cells in
/// column-major order inside one bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub subop: usize,
    pub t: usize,
    pub bank: usize,
    pub start_col: usize,
    pub start_row: usize,
    pub cells: usize,
    pub weights: usize,
}

impl LayoutEntry {
    fn start(&self, rows: usize) -> usize {
        self.start_col * rows + self.start_row
    }

    /// Inclusive first and last column touched.
    pub fn column_span(&self, rows: usize) -> (usize, usize) {
        let s = self.start(rows);
        (s / rows, (s + self.cells.max(1) - 1) / rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightLayout {
    pub rows: usize,
    pub cols: usize,
    pub bits_per_cell: u32,
    pub weight_bits: u32,
    pub entries: Vec<LayoutEntry>,
    pub banks_used: usize,
    pub mapped_bits: u64,
    pub capacity_bits: u64,
    pub utilization: f64,
    #[serde(skip)]
    index: HashMap<(usize, usize), usize>,
}

impl WeightLayout {
    pub fn entry(&self, subop: usize, t: usize) -> Result<&LayoutEntry> {
        self.index
            .get(&(subop, t))
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::Layout(format!("sub-op {subop} session {t} has no mapped weight column")))
    }

    fn rebuild_index(&mut self) {
        self.index = self.entries.iter().enumerate().map(|(i, e)| ((e.subop, e.t), i)).collect();
    }
}

/// Greedy column-major packing of every weight-stationary session.
///
/// A column that fits in one physical column never straddles two; longer
/// columns are laid out contiguously from the current position. Sessions of
/// one sub-op are therefore adjacent.
pub fn plan_layout(program: &Program, cfg: &DenseConfig) -> Result<WeightLayout> {
    cfg.validate()?;
    let rows = cfg.rows;
    let bank_cells = rows * cfg.cols;
    let cpw = cfg.cells_per_weight();
    let mut entries = Vec::new();
    let mut bank = 0usize;
    let mut cursor = 0usize;
    let mut mapped_bits = 0u64;
    for op in program.subops() {
        if !matches!(op.rhs, Rhs::WeightColumn { .. }) {
            continue;
        }
        let weights = op.inner_len(&program.layer);
        let cells = weights * cpw;
        for t in op.session_range.first..=op.session_range.last {
            if cells <= rows && cursor % rows + cells > rows {
                cursor = cursor.div_ceil(rows) * rows;
            }
            if cursor + cells > bank_cells {
                bank += 1;
                cursor = 0;
            }
            if cells > bank_cells || bank >= cfg.banks {
                let total: u64 = program
                    .subops()
                    .filter(|o| matches!(o.rhs, Rhs::WeightColumn { .. }))
                    .map(|o| (o.inner_len(&program.layer) * o.session_range.len()) as u64)
                    .sum::<u64>()
                    * cfg.weight_bits as u64;
                return Err(Error::Capacity {
                    what: "dense crossbar".into(),
                    required: total,
                    available: cfg.bank_capacity_bits() * cfg.banks as u64,
                });
            }
            entries.push(LayoutEntry {
                subop: op.id,
                t,
                bank,
                start_col: cursor / rows,
                start_row: cursor % rows,
                cells,
                weights,
            });
            cursor += cells;
            mapped_bits += (weights as u64) * cfg.weight_bits as u64;
        }
    }
    let banks_used = if entries.is_empty() { 0 } else { bank + 1 };
    let capacity_bits = cfg.bank_capacity_bits() * cfg.banks as u64;
    let mut layout = WeightLayout {
        rows,
        cols: cfg.cols,
        bits_per_cell: cfg.bits_per_cell,
        weight_bits: cfg.weight_bits,
        entries,
        banks_used,
        mapped_bits,
        capacity_bits,
        utilization: mapped_bits as f64 / capacity_bits as f64,
        index: HashMap::new(),
    };
    layout.rebuild_index();
    Ok(layout)
}

/// Two's complement cells of one weight, most significant first.
pub fn weight_to_cells(w: i32, weight_bits: u32, bits_per_cell: u32) -> Vec<u8> {
    let raw = (w as u32) & ((1u32 << weight_bits) - 1);
    let n = weight_bits / bits_per_cell;
    let mask = (1u32 << bits_per_cell) - 1;
    (0..n)
        .rev()
        .map(|k| ((raw >> (k * bits_per_cell)) & mask) as u8)
        .collect()
}

pub fn cells_to_weight(cells: &[u8], weight_bits: u32, bits_per_cell: u32) -> i32 {
    let raw = cells.iter().fold(0u32, |acc, &c| (acc << bits_per_cell) | c as u32);
    let shift = 32 - weight_bits;
    ((raw << shift) as i32) >> shift
}

/// One bank; only columns that hold data are materialised.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBank {
    pub rows: usize,
    pub cols: usize,
    pub bits_per_cell: u32,
    /// Column-major cell levels, `rows` per column.
    cells: Vec<u8>,
}

impl DenseBank {
    pub fn new(rows: usize, cols: usize, bits_per_cell: u32) -> Self {
        DenseBank {
            rows,
            cols,
            bits_per_cell,
            cells: Vec::new(),
        }
    }

    pub fn capacity_bits(&self) -> u64 {
        self.rows as u64 * self.cols as u64 * self.bits_per_cell as u64
    }

    pub fn levels(&self) -> u8 {
        ((1u32 << self.bits_per_cell) - 1) as u8
    }

    fn ensure(&mut self, linear_end: usize) {
        if self.cells.len() < linear_end {
            self.cells.resize(linear_end.div_ceil(self.rows) * self.rows, 0);
        }
    }

    /// Program a run of cells starting at column-major position `start`.
    pub fn write(&mut self, start: usize, values: &[u8]) -> Result<()> {
        let end = start + values.len();
        if end > self.rows * self.cols {
            return Err(Error::Layout(format!("write of {} cells at {start} overruns the bank", values.len())));
        }
        if let Some(&v) = values.iter().find(|&&v| v > self.levels()) {
            return Err(Error::Range {
                what: format!("{}-bit cell", self.bits_per_cell),
                value: v as i64,
                limit: self.levels() as i64,
            });
        }
        self.ensure(end);
        self.cells[start..end].copy_from_slice(values);
        Ok(())
    }

    /// Stored level without sensing.
    pub fn level(&self, col: usize, row: usize) -> u8 {
        self.cells.get(col * self.rows + row).copied().unwrap_or(0)
    }

    fn sense<R: Rng + ?Sized>(&self, level: u8, noise: &TruncatedNormal, rng: &mut R) -> u8 {
        let top = self.levels() as f64;
        let analog = level as f64 / top + noise.sample(rng);
        (analog * top).round().clamp(0.0, top) as u8
    }

    fn read_run<R: Rng + ?Sized>(&self, start: usize, len: usize, noise: &TruncatedNormal, rng: &mut R) -> Vec<u8> {
        (start..start + len)
            .map(|i| {
                let level = self.cells.get(i).copied().unwrap_or(0);
                self.sense(level, noise, rng)
            })
            .collect()
    }
}

/// Activate one column and sense all its cells. `noise_amp` bounds the
/// additive read noise as a fraction of the full-scale range.
pub fn read_column<R: Rng + ?Sized>(bank: &DenseBank, column: usize, rng: &mut R, noise_amp: f64) -> Result<Vec<u8>> {
    if column >= bank.cols {
        return Err(Error::Layout(format!("column {column} outside bank of {} columns", bank.cols)));
    }
    let noise = TruncatedNormal::new(noise_amp);
    Ok(bank.read_run(column * bank.rows, bank.rows, &noise, rng))
}

/// Weights of one session as read back from the bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRead {
    pub weights: Vec<i32>,
    pub columns: usize,
    pub cells: usize,
}

/// Populated banks plus their layout.
#[derive(Debug, Clone)]
pub struct DenseStore {
    cfg: DenseConfig,
    layout: WeightLayout,
    banks: Vec<DenseBank>,
}

/// Lay out and program every weight column the program streams.
pub fn store_weights(program: &Program, weights: &QuantizedWeights, cfg: &DenseConfig) -> Result<DenseStore> {
    let layout = plan_layout(program, cfg)?;
    let mut banks: Vec<DenseBank> = (0..layout.banks_used)
        .map(|_| DenseBank::new(cfg.rows, cfg.cols, cfg.bits_per_cell))
        .collect();
    for op in program.subops() {
        let Rhs::WeightColumn { weight, col_offset } = op.rhs else { continue };
        let q = weights.get(weight)?;
        if q.bits != cfg.weight_bits {
            return Err(Error::Config(format!(
                "weights quantized to {} bits but the dense crossbar stores {}",
                q.bits, cfg.weight_bits
            )));
        }
        for t in op.session_range.first..=op.session_range.last {
            let entry = layout.entry(op.id, t)?;
            let col = col_offset + t - 1;
            if col >= q.data.ncols() || q.data.nrows() != entry.weights {
                return Err(Error::dim(
                    format!("{weight:?} column {col}"),
                    entry.weights,
                    q.data.nrows(),
                ));
            }
            let cells: Vec<u8> = q
                .data
                .column(col)
                .iter()
                .flat_map(|&w| weight_to_cells(w, cfg.weight_bits, cfg.bits_per_cell))
                .collect();
            banks[entry.bank].write(entry.start(cfg.rows), &cells)?;
        }
    }
    Ok(DenseStore {
        cfg: *cfg,
        layout,
        banks,
    })
}

impl DenseStore {
    pub fn layout(&self) -> &WeightLayout {
        &self.layout
    }

    pub fn banks(&self) -> &[DenseBank] {
        &self.banks
    }

    pub fn config(&self) -> &DenseConfig {
        &self.cfg
    }

    /// Read the weight column of `(subop, t)`; `noise_amp` as in [`read_column`].
    pub fn read_session<R: Rng + ?Sized>(&self, subop: usize, t: usize, noise_amp: f64, rng: &mut R) -> Result<SessionRead> {
        let e = self.layout.entry(subop, t)?;
        let noise = TruncatedNormal::new(noise_amp);
        let raw = self.banks[e.bank].read_run(e.start(self.cfg.rows), e.cells, &noise, rng);
        let cpw = self.cfg.cells_per_weight();
        let weights = raw
            .chunks_exact(cpw)
            .map(|c| cells_to_weight(c, self.cfg.weight_bits, self.cfg.bits_per_cell))
            .collect();
        let (c0, c1) = e.column_span(self.cfg.rows);
        Ok(SessionRead {
            weights,
            columns: c1 - c0 + 1,
            cells: e.cells,
        })
    }
}

/// Transfer of one session's weight column to the computation crossbar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamCost {
    pub bits: u64,
    pub seconds: f64,
}

pub fn stream_weight_column(layout: &WeightLayout, subop: usize, t: usize, bandwidth_bps: f64) -> Result<StreamCost> {
    if !(bandwidth_bps > 0.0) {
        return Err(Error::Config(format!("weight bandwidth must be positive, got {bandwidth_bps}")));
    }
    let e = layout.entry(subop, t)?;
    let bits = e.weights as u64 * layout.weight_bits as u64;
    Ok(StreamCost {
        bits,
        seconds: bits as f64 / bandwidth_bps,
    })
}

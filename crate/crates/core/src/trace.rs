//! Execution traces: per-session records, per-sub-op aggregates and the
//! JSON summary consumed by the cost model.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::decompose::{MultiplyKind, Origin};
use crate::model::LayerSpec;

/// Component event names, in the order they appear in reports.
pub const EVENT_NAMES: [&str; 13] = [
    "compute.dac",
    "compute.adc",
    "compute.resistor",
    "compute.sample_hold",
    "compute.shift_add",
    "compute.encoder",
    "compute.f_unit",
    "compute.register_bits",
    "dense.column_activations",
    "dense.cell_reads",
    "cache.read_bits",
    "cache.write_bits",
    "epilogue.ops",
];

/// Counters of energy-relevant hardware events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCounts {
    pub dac: u64,
    pub adc: u64,
    pub resistor: u64,
    pub sample_hold: u64,
    pub shift_add: u64,
    pub encoder: u64,
    pub f_unit: u64,
    pub register_bits: u64,
    pub dense_column_activations: u64,
    pub dense_cell_reads: u64,
    pub cache_read_bits: u64,
    pub cache_write_bits: u64,
    pub epilogue_ops: u64,
}

impl EventCounts {
    fn fields(&self) -> [u64; 13] {
        [
            self.dac,
            self.adc,
            self.resistor,
            self.sample_hold,
            self.shift_add,
            self.encoder,
            self.f_unit,
            self.register_bits,
            self.dense_column_activations,
            self.dense_cell_reads,
            self.cache_read_bits,
            self.cache_write_bits,
            self.epilogue_ops,
        ]
    }

    fn fields_mut(&mut self) -> [&mut u64; 13] {
        [
            &mut self.dac,
            &mut self.adc,
            &mut self.resistor,
            &mut self.sample_hold,
            &mut self.shift_add,
            &mut self.encoder,
            &mut self.f_unit,
            &mut self.register_bits,
            &mut self.dense_column_activations,
            &mut self.dense_cell_reads,
            &mut self.cache_read_bits,
            &mut self.cache_write_bits,
            &mut self.epilogue_ops,
        ]
    }

    pub fn to_map(&self) -> BTreeMap<String, u64> {
        EVENT_NAMES
            .iter()
            .zip(self.fields())
            .map(|(n, v)| (n.to_string(), v))
            .collect()
    }

    /// Inverse of [`EventCounts::to_map`]; returns the first unknown name on failure.
    pub fn from_map(map: &BTreeMap<String, u64>) -> Result<Self, String> {
        let mut out = EventCounts::default();
        for (name, &v) in map {
            let idx = EVENT_NAMES.iter().position(|n| n == name).ok_or_else(|| name.clone())?;
            *out.fields_mut()[idx] = v;
        }
        Ok(out)
    }
}

impl AddAssign for EventCounts {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.fields_mut().into_iter().zip(rhs.fields()) {
            *a += b;
        }
    }
}

impl Serialize for EventCounts {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for EventCounts {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, u64>::deserialize(d)?;
        EventCounts::from_map(&map).map_err(|n| serde::de::Error::custom(format!("unknown component `{n}`")))
    }
}

/// One session `t` of one sub-operation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionTrace {
    /// 1-based session index.
    pub t: usize,
    pub weights_loaded: u64,
    pub steps_executed: u64,
    /// Post-F output values.
    pub outputs: Vec<f64>,
    pub events: EventCounts,
    /// Compute time of the session in seconds, excluding transfers.
    pub compute_seconds: f64,
    pub activation_read_bits: u64,
    pub weight_stream_bits: u64,
}

/// Aggregate over all sessions of one sub-operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubOpTrace {
    pub id: usize,
    pub origin: Origin,
    pub multiply_kind: MultiplyKind,
    pub sessions: u64,
    pub steps: u64,
    pub weights_loaded: u64,
    pub activation_read_bits: u64,
    pub weight_stream_bits: u64,
    /// Sum over sessions of `max(compute, activation transfer)`, seconds.
    pub session_seconds: f64,
    pub events: EventCounts,
}

/// Parameters needed to turn counters into transfer times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    /// Cache to computation crossbar, bits per second.
    pub activation_bps: f64,
    /// Dense crossbar to computation crossbar, bits per second.
    pub weight_bps: f64,
}

impl Default for Bandwidths {
    fn default() -> Self {
        Bandwidths {
            activation_bps: 8.0e12,
            weight_bps: 819.0e9,
        }
    }
}

/// Machine-readable simulation trace for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub layer: LayerSpec,
    pub engine: String,
    pub scale_factor: u32,
    pub dup_factor: usize,
    pub activation_bits: u32,
    pub weight_bits: u32,
    pub bandwidths: Bandwidths,
    pub subops: Vec<SubOpTrace>,
    pub epilogue_rows: u64,
    pub epilogue_seconds: f64,
    /// Elements of distinct activation tensors read by the program.
    pub activation_elements: u64,
    pub dense_banks_used: usize,
    pub dense_mapped_bits: u64,
    pub totals: EventCounts,
}

impl TraceSummary {
    pub fn total_steps(&self) -> u64 {
        self.subops.iter().map(|s| s.steps).sum()
    }

    pub fn total_sessions(&self) -> u64 {
        self.subops.iter().map(|s| s.sessions).sum()
    }

    pub fn activation_read_bits(&self) -> u64 {
        self.subops.iter().map(|s| s.activation_read_bits).sum()
    }

    pub fn weight_stream_bits(&self) -> u64 {
        self.subops.iter().map(|s| s.weight_stream_bits).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_map_round_trip() {
        let e = EventCounts {
            adc: 3,
            epilogue_ops: 7,
            ..Default::default()
        };
        let map = e.to_map();
        assert_eq!(map.len(), EVENT_NAMES.len());
        assert_eq!(map["compute.adc"], 3);
        assert_eq!(EventCounts::from_map(&map).unwrap(), e);
        let mut bad = map.clone();
        bad.insert("compute.laser".into(), 1);
        assert_eq!(EventCounts::from_map(&bad).unwrap_err(), "compute.laser");
    }

    #[test]
    fn events_add() {
        let mut a = EventCounts { dac: 1, ..Default::default() };
        a += EventCounts { dac: 2, cache_read_bits: 5, ..Default::default() };
        assert_eq!(a.dac, 3);
        assert_eq!(a.cache_read_bits, 5);
    }
}

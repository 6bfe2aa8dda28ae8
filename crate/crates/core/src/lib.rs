//! Functional and cost simulator for a dual-crossbar memristor accelerator
//! running transformer layers.

pub mod cache;
pub mod cost;
pub mod crossbar;
pub mod decompose;
pub mod dense;
pub mod encoding;
pub mod error;
pub mod exec;
pub mod model;
pub mod oracle;
pub mod trace;

pub use ndarray;

pub use error::{Error, ErrorClass, Result};
pub use model::{LayerSpec, NormParams, QuantTensor, WeightSet};
pub use cache::{CacheConfig, CachePlan, Sizing};
pub use cost::{ComponentCosts, CostReport, Hardware};
pub use crossbar::CrossbarConfig;
pub use decompose::{Program, SubOp};
pub use dense::DenseConfig;
pub use trace::{Bandwidths, TraceSummary};

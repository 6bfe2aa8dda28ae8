//! TOML run configuration: `[crossbar]`, `[dense]`, `[cache]`, `[bandwidths]`.

use std::path::Path;

use memtrans_core::{Bandwidths, CacheConfig, CrossbarConfig, DenseConfig, Error, Hardware, LayerSpec, Result, Sizing};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    /// Temporary-cache width in columns; defaults to min(64, head width).
    pub c_k: Option<usize>,
    pub sizing: Sizing,
    pub element_bits: Option<u32>,
    pub s_element_bits: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub crossbar: CrossbarConfig,
    pub dense: DenseConfig,
    pub cache: CacheSection,
    pub bandwidths: Bandwidths,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    /// Cache geometry for running `spec`.
    pub fn cache_for(&self, spec: &LayerSpec) -> CacheConfig {
        let c_k = self.cache.c_k.unwrap_or(64).min(spec.head_width).min(spec.hidden).max(1);
        let mut cfg = CacheConfig::for_layer(spec, c_k, self.cache.sizing);
        cfg.dup_factor = self.crossbar.dup_factor;
        self.apply_widths(&mut cfg);
        cfg
    }

    /// Cache geometry used for area accounting when no layer is at hand.
    pub fn hardware(&self) -> Hardware {
        let mut cache = CacheConfig::default();
        if let Some(c) = self.cache.c_k {
            cache.c_k = c;
        }
        cache.sizing = self.cache.sizing;
        self.apply_widths(&mut cache);
        Hardware {
            crossbar: self.crossbar,
            dense: self.dense,
            cache,
            bandwidths: self.bandwidths,
        }
    }

    fn apply_widths(&self, cfg: &mut CacheConfig) {
        if let Some(b) = self.cache.element_bits {
            cfg.element_bits = b;
        }
        if let Some(b) = self.cache.s_element_bits {
            cfg.s_element_bits = b;
        }
    }
}

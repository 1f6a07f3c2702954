//! Run manifest: inputs, config snapshot, phase clocks, and output paths
//! for one pipeline invocation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};
use glseg_core::config::PipelineConfig;
use glseg_core::pipeline::{PhaseTimings, PHASE_GRAPH, PHASE_MULTI, PHASE_REGION, PHASE_TOTAL};

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    /// Input image path as given on the command line.
    pub image: String,
    pub seed: u64,
    /// Flat config snapshot; parses back into a `PipelineConfig`.
    pub config: BTreeMap<String, String>,
    /// Wall-clock seconds per phase, plus the total.
    pub phases: BTreeMap<String, f64>,
    /// Output file names relative to the run's output directory.
    pub outputs: BTreeMap<String, String>,
}

/// Splits the flat `key = value` serialization into manifest entries.
fn config_entries(cfg: &PipelineConfig<f64>) -> BTreeMap<String, String> {
    cfg.to_text()
        .lines()
        .filter_map(|line| {
            let (key, value) = line.split_once('=')?;
            Some((key.trim().to_string(), value.trim().to_string()))
        })
        .collect()
}

impl RunManifest {
    pub fn new(
        image: &Path,
        seed: u64,
        cfg: &PipelineConfig<f64>,
        phases: PhaseTimings,
        with_multiclass: bool,
    ) -> Self {
        let mut map = BTreeMap::new();
        map.insert(PHASE_REGION.to_string(), phases.region_structure);
        map.insert(PHASE_GRAPH.to_string(), phases.graph_partition);
        if with_multiclass {
            map.insert(PHASE_MULTI.to_string(), phases.multiclass);
        }
        map.insert(PHASE_TOTAL.to_string(), phases.total);
        RunManifest {
            image: image.display().to_string(),
            seed,
            config: config_entries(cfg),
            phases: map,
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_output(&mut self, kind: &str, file_name: &str) {
        self.outputs.insert(kind.to_string(), file_name.to_string());
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Input(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| glseg_core::Error::io(path, e))?;
        Ok(())
    }
}

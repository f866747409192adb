//! Configuration file loading.
//!
//! A config file is TOML with up to three sections, each mapping onto one
//! of the library's config structs field by field:
//!
//! ```toml
//! [scenario]   # mecmig::scenario::ScenarioConfig
//! n_users = 60
//!
//! [solver]     # mecmig::relaxed_solver::SolverConfig
//! max_outer = 40
//!
//! [hotspot]    # mecmig::hotspot::HotspotConfig
//! cost_weight = 0.5
//! ```
//!
//! Omitted sections and fields take their defaults. Unknown keys are
//! rejected at every level so typos surface instead of silently reverting
//! to a default.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use mecmig::hotspot::HotspotConfig;
use mecmig::relaxed_solver::SolverConfig;
use mecmig::scenario::ScenarioConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub scenario: ScenarioConfig,
    pub solver: SolverConfig,
    pub hotspot: HotspotConfig,
}

/// Reads and parses a config file; `None` means all defaults. Parse errors
/// carry the offending key name through from the TOML deserializer.
pub fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

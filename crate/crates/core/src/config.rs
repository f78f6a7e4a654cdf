//! Sectioned TOML run configuration read by the command-line tool.
//!
//! ```toml
//! input = "logs/weekly.csv"   # optional; the synthetic base is used otherwise
//!
//! [gen]          # GenConfig keys
//! beta = 2.0
//!
//! [synthetic]    # SyntheticBaseConfig keys
//! n_users = 200
//!
//! [train]        # TrainConfig keys, for `train`
//! eta = 0.05
//!
//! [plan]         # ExperimentPlan keys, for `compare`, sweeps and `estimate`
//! methods = ["DLCE", "BLCE"]
//! [plan.train]
//! epochs = 30
//! ```
//!
//! Every section is optional and falls back to its defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{GenConfig, SyntheticBaseConfig};
use crate::error::{Error, Result};
use crate::exp::ExperimentPlan;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Weekly base log to ingest.
    pub input: Option<PathBuf>,
    pub gen: GenConfig,
    pub synthetic: SyntheticBaseConfig,
    pub train: TrainConfig,
    pub plan: ExperimentPlan,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

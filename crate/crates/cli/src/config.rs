use std::path::Path;

use serde::Deserialize;
use uwsim::detloss::PatchGridConfig;
use uwsim::fitting::FitConfig;
use uwsim::metrics::MetricConfig;
use uwsim::{Error, Result};

/// Seed used when neither the config nor `--seed` gives one.
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub metrics: MetricConfig,
    pub grid: PatchGridConfig,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

//! Effective run configuration: policy, simulator and learner settings in
//! one JSON document. Missing fields take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::sim::SimConfig;
use crate::engine::PolicyConfig;
use crate::error::{Error, Result};
use crate::train::{IrlConfig, QConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub policy: PolicyConfig,
    pub sim: SimConfig,
    pub irl: IrlConfig,
    pub q: QConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Schema(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_json(&text)
    }

    /// Sets every random seed from one value.
    pub fn with_seed(mut self, seed: u64) -> Config {
        self.sim.seed = seed;
        self.irl.seed = seed;
        self.q.seed = seed;
        self.q.forest.seed = seed;
        self.policy.recommender.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.sim.validate()?;
        self.irl.svm.validate()?;
        self.q.validate()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

//! TOML run configurations.
//!
//! Every file carries `schema_version = 1`. Keys left out fall back to the
//! library defaults; command-line flags override file values.
//!
//! Evaluation (`dkps evaluate --config`):
//!
//! ```toml
//! schema_version = 1
//! methods = ["sample_score", "dkps_ols", "ensemble"]
//! n = "all"            # or a reference count
//! m = [1, 2, 4, 8]
//! dim = 8
//! alpha = "m_over_M"   # or a number in [0, 1]
//! trials = 1024
//! seed = 0
//! clip_order = "components_then_ensemble"
//! irt_threshold = 0.5
//! collections = 10     # optional: reference-collection statistics
//! ```
//!
//! A sweep (`dkps sweep --grid`) takes the same keys plus a `[grid]` table
//! with `n`, `dim` and `alpha` lists. Synthetic data (`dkps synth --spec`)
//! and theory runs (`dkps theory --spec`) read a `[population]` table;
//! theory files add `[concentration]` and `[efficiency]` tables.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{AlphaPolicy, ExperimentConfig, ReferenceCount, SweepGrid};
use crate::predictors::{ClipOrder, Method};
use crate::synth::{EfficiencySettings, SyntheticPopulationSpec};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Parses a TOML file and checks its `schema_version`.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: Option<u32>,
    }
    let version: Version = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    match version.schema_version {
        Some(CONFIG_SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::Config(format!(
                "schema_version {v} is not supported (expected {CONFIG_SCHEMA_VERSION})"
            )))
        }
        None => return Err(Error::Config("missing schema_version".into())),
    }
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Experiment keys shared by evaluation and sweep files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub schema_version: u32,
    pub methods: Option<Vec<Method>>,
    pub n: Option<ReferenceCount>,
    pub m: Option<Vec<usize>>,
    pub dim: Option<usize>,
    pub alpha: Option<AlphaPolicy>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub clip_order: Option<ClipOrder>,
    pub irt_threshold: Option<f64>,
    /// Number of random reference collections to summarise.
    pub collections: Option<usize>,
    /// Sweep axes; only read by `dkps sweep`.
    pub grid: Option<GridAxes>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    pub n: Option<Vec<ReferenceCount>>,
    pub dim: Option<Vec<usize>>,
    pub alpha: Option<Vec<AlphaPolicy>>,
}

impl ExperimentFile {
    pub fn to_config(&self) -> ExperimentConfig {
        let d = ExperimentConfig::default();
        ExperimentConfig {
            methods: self.methods.clone().unwrap_or(d.methods),
            n: self.n.unwrap_or(d.n),
            m: self.m.clone().unwrap_or(d.m),
            dim: self.dim.unwrap_or(d.dim),
            alpha: self.alpha.unwrap_or(d.alpha),
            trials: self.trials.unwrap_or(d.trials),
            base_seed: self.seed.unwrap_or(d.base_seed),
            clip_order: self.clip_order.unwrap_or(d.clip_order),
            irt_threshold: self.irt_threshold.unwrap_or(d.irt_threshold),
            workers: None,
        }
    }

    /// The sweep grid; axes missing from `[grid]` hold the single base value.
    pub fn to_grid(&self) -> Result<SweepGrid> {
        let base = self.to_config();
        let axes = self
            .grid
            .clone()
            .ok_or_else(|| Error::Config("sweep file has no [grid] table".into()))?;
        Ok(SweepGrid {
            n: axes.n.unwrap_or_else(|| vec![base.n]),
            dim: axes.dim.unwrap_or_else(|| vec![base.dim]),
            alpha: axes.alpha.unwrap_or_else(|| vec![base.alpha]),
            base,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub schema_version: u32,
    #[serde(default)]
    pub population: SyntheticPopulationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationSettings {
    pub n: Vec<usize>,
    pub r: Vec<usize>,
    pub seeds: usize,
}

impl Default for ConcentrationSettings {
    fn default() -> Self {
        ConcentrationSettings {
            n: vec![50],
            r: vec![1, 4, 16],
            seeds: 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryFile {
    pub schema_version: u32,
    #[serde(default)]
    pub population: SyntheticPopulationSpec,
    pub concentration: Option<ConcentrationSettings>,
    pub efficiency: Option<EfficiencySettings>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::Regressor;

    #[test]
    fn evaluation_file_round_trip() {
        let file: ExperimentFile = parse_toml(
            r#"
schema_version = 1
methods = ["sample_score", "dkps_knn_sqrt", "ensemble"]
n = 50
m = [1, 4]
alpha = 0.25
trials = 12
"#,
        )
        .unwrap();
        let config = file.to_config();
        assert_eq!(config.n, ReferenceCount::Count(50));
        assert_eq!(config.alpha, AlphaPolicy::Fixed(0.25));
        assert_eq!(config.methods[2], Method::Ensemble(Regressor::Ols));
        assert_eq!(config.dim, 8);
        assert!(file.to_grid().is_err());
    }

    #[test]
    fn schema_version_is_enforced() {
        let err = parse_toml::<ExperimentFile>("schema_version = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(parse_toml::<ExperimentFile>("trials = 3\n").is_err());
        assert!(parse_toml::<ExperimentFile>("schema_version = 1\nbogus = 1\n").is_err());
        assert!(
            parse_toml::<ExperimentFile>("schema_version = 1\nmethods = [\"nope\"]\n").is_err()
        );
    }

    #[test]
    fn grid_and_theory_files() {
        let file: ExperimentFile = parse_toml(
            "schema_version = 1\nm = [2]\n[grid]\nn = [\"all\", 20]\nalpha = [\"m_over_M\", 0, 1]\n",
        )
        .unwrap();
        let grid = file.to_grid().unwrap();
        assert_eq!(grid.n, vec![ReferenceCount::All, ReferenceCount::Count(20)]);
        assert_eq!(grid.alpha.len(), 3);
        assert_eq!(grid.dim, vec![8]);

        let theory: TheoryFile = parse_toml(
            "schema_version = 1\n[population]\nn_models = 60\n[concentration]\nr = [1, 2]\n",
        )
        .unwrap();
        assert_eq!(theory.population.n_models, 60);
        assert_eq!(theory.population.n_queries, 200);
        assert_eq!(theory.concentration.unwrap().r, vec![1, 2]);
        assert!(theory.efficiency.is_none());
    }
}

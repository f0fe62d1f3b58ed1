//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::path::Path;

use bdg_core::design::{DesignConfig, LearnMode};
use bdg_core::eval::EvalConfig;
use bdg_core::game::Topology;
use bdg_core::players::PriorSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Settings for `reproduce`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReproduceConfig {
    /// Design seeds for the loss table; the first also feeds the accuracy tables.
    pub seeds: Vec<u64>,
    pub lambdas: Vec<f64>,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            lambdas: vec![1.0, 1.5, 2.5],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub design: DesignConfig,
    pub eval: EvalConfig,
    pub reproduce: ReproduceConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PriorChoice {
    Full,
    Diagonal,
}

impl From<PriorChoice> for PriorSpec {
    fn from(p: PriorChoice) -> Self {
        match p {
            PriorChoice::Full => PriorSpec::FullUniform,
            PriorChoice::Diagonal => PriorSpec::DiagonalUniform,
        }
    }
}

/// Command-line values that win over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub prior: Option<PriorChoice>,
    pub learn: Option<LearnMode>,
    pub topology: Option<Topology>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.design.seed = seed;
            cfg.eval.dataset_seed = seed;
        }
        if let Some(lambda) = self.lambda {
            cfg.design.interaction.lambda = lambda;
            cfg.eval.interaction.lambda = lambda;
        }
        if let Some(prior) = self.prior {
            cfg.design.prior = prior.into();
        }
        if let Some(learn) = self.learn {
            cfg.design.learn = learn;
        }
        if let Some(topology) = self.topology {
            cfg.design.topology = topology;
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(CliError::Config(format!("config file {} does not exist", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, then `file` if given, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: bdg_core::Error| CliError::Config(e.to_string());
        self.design.validate().map_err(wrap)?;
        self.eval.mixture.validate().map_err(wrap)?;
        self.eval.classifier.validate().map_err(wrap)?;
        self.eval
            .interaction
            .validate(self.design.topology.num_states())
            .map_err(wrap)?;
        if self.reproduce.seeds.is_empty() || self.reproduce.lambdas.is_empty() {
            return Err(CliError::Config("reproduce needs at least one seed and one lambda".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

//! Argument parsing.

use std::path::PathBuf;

use bdg_core::design::LearnMode;
use bdg_core::game::Topology;
use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, PriorChoice, RunConfig};
use crate::error::Result;
use crate::render::RenderTarget;

#[derive(Debug, Parser)]
#[command(name = "bdg", version, about = "Design, evaluate and render behavior-diagnostic games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a game and write its checkpoint and loss curve.
    Design(CommonArgs),
    /// Classify player types from play in GAME.
    Evaluate {
        /// `baseline-path`, `baseline-grid` or a checkpoint file.
        game: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Draw rewards, stickiness, policies or sampled trajectories of GAME.
    Render {
        game: String,
        #[arg(long, value_enum)]
        what: RenderTarget,
        #[arg(long, default_value_t = 10)]
        rollouts: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Recompute one of the result tables beside its published values.
    Reproduce {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        table: u8,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write a labelled trajectory dataset for GAME.
    Simulate {
        game: String,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorChoice>,
    /// `reward` or `reward+transition`.
    #[arg(long, value_parser = parse_learn)]
    pub learn: Option<LearnMode>,
    /// `path:1x6` or `grid:3x6`.
    #[arg(long, value_parser = parse_topology)]
    pub topology: Option<Topology>,
    /// Output directory.
    #[arg(long, env = "BDG_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
}

fn parse_learn(s: &str) -> std::result::Result<LearnMode, String> {
    s.parse().map_err(|e: bdg_core::Error| e.to_string())
}

fn parse_topology(s: &str) -> std::result::Result<Topology, String> {
    s.parse().map_err(|e: bdg_core::Error| e.to_string())
}

impl CommonArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            lambda: self.lambda,
            prior: self.prior,
            learn: self.learn,
            topology: self.topology,
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides())
    }
}

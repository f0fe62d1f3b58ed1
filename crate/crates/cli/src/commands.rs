//! Subcommand bodies, independent of argument parsing.

use std::path::{Path, PathBuf};

use bdg_core::design::{design_game, DesignReport};
use bdg_core::eval::{generate_dataset, train_classifier, EvalReport};
use bdg_core::game::Topology;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::{self, Checkpoint, GameSource};
use crate::render::{self, RenderOptions, RenderTarget};
use crate::reproduce::{Reproduction, TableId, TableOutput};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const REPORT_FILE: &str = "report.json";
pub const DATASET_FILE: &str = "dataset.jsonl";

pub struct DesignOutcome {
    pub report: DesignReport,
    pub checkpoint: PathBuf,
    pub loss_curve: PathBuf,
}

pub fn design(cfg: &RunConfig, out: &Path) -> Result<DesignOutcome> {
    let report = design_game(&cfg.design)?;
    formats::ensure_dir(out)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    Checkpoint::from_report(&report, &cfg.design).save(&checkpoint)?;
    let loss_curve = out.join(LOSS_CURVE_FILE);
    formats::write_loss_curve(&loss_curve, &report.loss_curve)?;
    Ok(DesignOutcome {
        report,
        checkpoint,
        loss_curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationFile {
    pub game: String,
    pub lambda: f64,
    pub dataset_seed: u64,
    pub report: EvalReport,
}

fn check_game(game: &GameSource) -> Result<()> {
    match game {
        GameSource::Checkpoint(path) if !path.is_file() => Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        )),
        _ => Ok(()),
    }
}

pub fn evaluate(game: &str, cfg: &RunConfig, out: &Path) -> Result<EvaluationFile> {
    let source = GameSource::parse(game);
    check_game(&source)?;
    let mdp = source.load(cfg.design.gamma)?;
    let data = generate_dataset(&mdp, &cfg.eval.mixture, cfg.eval.sizes, &cfg.eval.interaction, cfg.eval.dataset_seed)?;
    let file = EvaluationFile {
        game: game.to_string(),
        lambda: cfg.eval.interaction.lambda,
        dataset_seed: cfg.eval.dataset_seed,
        report: train_classifier(&data, &cfg.eval.classifier)?,
    };
    formats::write_json(&out.join(REPORT_FILE), &file)?;
    Ok(file)
}

pub fn simulate(game: &str, cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let source = GameSource::parse(game);
    check_game(&source)?;
    let mdp = source.load(cfg.design.gamma)?;
    let data = generate_dataset(&mdp, &cfg.eval.mixture, cfg.eval.sizes, &cfg.eval.interaction, cfg.eval.dataset_seed)?;
    let path = out.join(DATASET_FILE);
    formats::write_dataset(&path, &data)?;
    Ok(path)
}

pub fn render(game: &str, target: RenderTarget, rollouts: usize, cfg: &RunConfig, out: &Path) -> Result<(PathBuf, PathBuf, String)> {
    let source = GameSource::parse(game);
    check_game(&source)?;
    let topology: Topology = source.topology()?;
    let mdp = source.load(cfg.design.gamma)?;
    let opts = RenderOptions {
        rollouts,
        interaction: cfg.eval.interaction,
        seed: cfg.eval.dataset_seed,
        ..Default::default()
    };
    let rendered = render::render(target, &topology, &mdp, &opts)?;
    let svg = out.join(format!("{}.svg", target.name()));
    let txt = out.join(format!("{}.txt", target.name()));
    formats::write_text(&svg, &rendered.svg)?;
    formats::write_text(&txt, &rendered.text)?;
    Ok((svg, txt, rendered.text))
}

pub fn reproduce(table: TableId, cfg: &RunConfig, out: &Path) -> Result<TableOutput> {
    let mut repro = Reproduction::new(cfg.clone());
    let output = repro.table(table)?;
    let n = table as u8;
    formats::write_text(&out.join(format!("table{n}.txt")), &output.text)?;
    formats::write_json(&out.join(format!("table{n}.json")), &output.json)?;
    Ok(output)
}

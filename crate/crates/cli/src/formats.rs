//! On-disk formats: checkpoints, loss curves, datasets and reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use bdg_core::design::{DesignConfig, DesignReport, LearnMode};
use bdg_core::eval::{Dataset, Example, Split};
use bdg_core::game::{realize_mdp, GameParams, Mdp, Topology, TopologyKind};
use bdg_core::interaction::Trajectory;
use bdg_core::posterior::{Head, PosteriorNet};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub topology: Topology,
    pub learn: LearnMode,
    pub gamma: f64,
    pub reward: Vec<f64>,
    /// Absent when the design kept the deterministic transitions.
    pub stick_logit: Option<Vec<f64>>,
    pub posterior: PosteriorNet,
    pub config: DesignConfig,
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub entropy: Option<f64>,
}

impl Checkpoint {
    pub fn from_report(report: &DesignReport, config: &DesignConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            topology: report.topology,
            learn: report.learn,
            gamma: report.gamma,
            reward: report.params.reward.clone(),
            stick_logit: report
                .learn
                .learns_transition()
                .then(|| report.params.stick_logit.clone()),
            posterior: report.posterior.clone(),
            config: config.clone(),
            loss_curve: report.loss_curve.clone(),
            final_loss: report.final_loss,
            entropy: report.entropy,
        }
    }

    pub fn params(&self) -> GameParams {
        let n = self.topology.num_states();
        GameParams {
            reward: self.reward.clone(),
            stick_logit: self.stick_logit.clone().unwrap_or_else(|| vec![0.0; n]),
        }
    }

    pub fn mdp(&self) -> Result<Mdp> {
        Ok(realize_mdp(&self.topology, &self.params(), self.stick_logit.is_some(), self.gamma)?)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {}", self.version));
        }
        let t = self.topology;
        Topology::new(t.kind, t.rows, t.cols).map_err(|e| e.to_string())?;
        let n = t.num_states();
        if self.reward.len() != n {
            return Err(format!("expected {n} rewards, found {}", self.reward.len()));
        }
        match (&self.stick_logit, self.learn.learns_transition()) {
            (Some(s), true) if s.len() == n => {}
            (None, false) => {}
            (Some(s), true) => return Err(format!("expected {n} stickiness logits, found {}", s.len())),
            (Some(_), false) => return Err(format!("{} designs carry no stickiness", self.learn.name())),
            (None, true) => return Err("stickiness logits missing".into()),
        }
        let finite = self.reward.iter().chain(self.stick_logit.iter().flatten()).all(|x| x.is_finite());
        if !finite || !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err("game parameters must be finite with gamma in (0, 1)".into());
        }
        let net = &self.posterior;
        if net.head != Head::Gaussian || net.num_states != n || net.num_actions != t.num_actions() {
            return Err("posterior does not match the game".into());
        }
        net.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = read_json(path)?;
        ckpt.validate().map_err(|m| CliError::format(path, m))?;
        Ok(ckpt)
    }
}

/// A game named on the command line: a built-in baseline or a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub enum GameSource {
    Baseline(Topology),
    Checkpoint(std::path::PathBuf),
}

impl GameSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "baseline-path" => GameSource::Baseline(Topology::path6()),
            "baseline-grid" => GameSource::Baseline(Topology::grid3x6()),
            other => GameSource::Checkpoint(other.into()),
        }
    }

    pub fn load(&self, gamma: f64) -> Result<Mdp> {
        match self {
            GameSource::Baseline(t) => Ok(bdg_core::game::baseline_game(t, gamma)?),
            GameSource::Checkpoint(path) => Checkpoint::load(path)?.mdp(),
        }
    }

    pub fn topology(&self) -> Result<Topology> {
        match self {
            GameSource::Baseline(t) => Ok(*t),
            GameSource::Checkpoint(path) => Ok(Checkpoint::load(path)?.topology),
        }
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

pub fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::format(path, e);
    w.write_record(["step", "loss"]).map_err(fail)?;
    for (i, loss) in curve.iter().enumerate() {
        w.write_record([i.to_string(), loss.to_string()]).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(path, e))?;
    write_text(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e))?;
    let mut curve = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        let step: usize = rec[0].parse().map_err(|e| CliError::format(path, e))?;
        if step != i || rec.len() != 2 {
            return Err(CliError::format(path, format!("malformed row {i}")));
        }
        curve.push(rec[1].parse().map_err(|e| CliError::format(path, e))?);
    }
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub split: Split,
    pub label: usize,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

/// Header line of a dataset file, followed by one record per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub num_states: usize,
    pub num_actions: usize,
    pub classes: usize,
    pub lambda: f64,
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let header = DatasetHeader {
        version: CHECKPOINT_VERSION,
        num_states: data.num_states,
        num_actions: data.num_actions,
        classes: data.classes,
        lambda: data.lambda,
    };
    let mut out = Vec::new();
    let fail = |e: serde_json::Error| CliError::format(path, e);
    serde_json::to_writer(&mut out, &header).map_err(fail)?;
    out.push(b'\n');
    for split in Split::ALL {
        for e in data.split(split) {
            let rec = DatasetRecord {
                split,
                label: e.label,
                states: e.trajectory.states.clone(),
                actions: e.trajectory.actions.clone(),
            };
            serde_json::to_writer(&mut out, &rec).map_err(fail)?;
            out.write_all(b"\n").expect("vec write");
        }
    }
    write_text(path, &String::from_utf8(out).expect("json is utf-8"))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    let header: DatasetHeader = serde_json::from_str(lines.next().unwrap_or_default()).map_err(|e| CliError::format(path, e))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(CliError::format(path, format!("unsupported dataset version {}", header.version)));
    }
    let mut data = Dataset {
        num_states: header.num_states,
        num_actions: header.num_actions,
        classes: header.classes,
        lambda: header.lambda,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| CliError::format(path, format!("line {}: {e}", i + 2)))?;
        data.split_mut(rec.split).push(Example {
            label: rec.label,
            trajectory: Trajectory {
                states: rec.states,
                actions: rec.actions,
            },
        });
    }
    data.validate().map_err(|e| CliError::format(path, e))?;
    Ok(data)
}

pub fn topology_kind_name(kind: TopologyKind) -> &'static str {
    match kind {
        TopologyKind::Path => "Path",
        TopologyKind::Grid => "Grid",
    }
}

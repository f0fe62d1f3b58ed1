//! The four result tables, computed from shared design runs and evaluations.

use std::fmt::{self, Write};

use bdg_core::design::{design_game, DesignConfig, DesignReport, LearnMode};
use bdg_core::eval::{evaluate_game, EvalConfig, EvalReport};
use bdg_core::game::{baseline_game, Mdp, Topology};
use bdg_core::interaction::InteractionConfig;
use bdg_core::players::PriorSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Setting {
    pub topology: Topology,
    pub learn: LearnMode,
}

impl Setting {
    pub fn new(topology: Topology, learn: LearnMode) -> Self {
        Self { topology, learn }
    }

    pub fn label(&self) -> String {
        let topo = match self.topology.kind {
            bdg_core::game::TopologyKind::Path => "Path",
            bdg_core::game::TopologyKind::Grid => "Grid",
        };
        format!("{topo} {}x{} {}", self.topology.rows, self.topology.cols, self.learn.name())
    }
}

/// Column order of the loss and accuracy tables.
pub fn table_settings() -> [Setting; 6] {
    let (p, g) = (Topology::path6(), Topology::grid3x6());
    [
        Setting::new(p, LearnMode::Baseline),
        Setting::new(g, LearnMode::Baseline),
        Setting::new(p, LearnMode::Reward),
        Setting::new(g, LearnMode::Reward),
        Setting::new(p, LearnMode::RewardAndTransition),
        Setting::new(g, LearnMode::RewardAndTransition),
    ]
}

/// Published loss per setting, in [`table_settings`] order.
pub const PAPER_TABLE1: [f64; 6] = [0.111, 0.115, 0.108, 0.099, 0.107, 0.078];
/// Published accuracy mean and deviation per setting, in [`table_settings`] order.
pub const PAPER_TABLE2: [(f64, f64); 6] = [
    (0.442, 0.056),
    (0.482, 0.052),
    (0.678, 0.044),
    (0.658, 0.066),
    (0.686, 0.044),
    (0.822, 0.027),
];
/// Rows: baseline Path, reward-only Path, learned Grid; columns lambda 1, 1.5, 2.5.
pub const PAPER_TABLE3: [[(f64, f64); 3]; 3] = [
    [(0.442, 0.056), (0.510, 0.053), (0.482, 0.041)],
    [(0.678, 0.044), (0.678, 0.039), (0.650, 0.048)],
    [(0.822, 0.027), (0.778, 0.044), (0.730, 0.061)],
];
/// Loss (full, diagonal) and accuracy `(mean, std)` (full, diagonal).
pub type AblationRef = ((f64, f64), ((f64, f64), (f64, f64)));

/// One entry per ablation method.
pub const PAPER_TABLE4: [AblationRef; 4] = [
    ((0.108, 0.043), ((0.678, 0.044), (0.658, 0.034))),
    ((0.099, 0.039), ((0.658, 0.066), (0.662, 0.060))),
    ((0.107, 0.043), ((0.686, 0.044), (0.668, 0.048))),
    ((0.078, 0.036), ((0.822, 0.027), (0.712, 0.051))),
];

pub fn noise_settings() -> [Setting; 3] {
    [
        Setting::new(Topology::path6(), LearnMode::Baseline),
        Setting::new(Topology::path6(), LearnMode::Reward),
        Setting::new(Topology::grid3x6(), LearnMode::RewardAndTransition),
    ]
}

pub fn ablation_settings() -> [Setting; 4] {
    let (p, g) = (Topology::path6(), Topology::grid3x6());
    [
        Setting::new(p, LearnMode::Reward),
        Setting::new(g, LearnMode::Reward),
        Setting::new(p, LearnMode::RewardAndTransition),
        Setting::new(g, LearnMode::RewardAndTransition),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict}  {}: {}", self.name, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct DesignKey {
    setting: Setting,
    prior: PriorSpec,
    seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
struct EvalKey {
    setting: Setting,
    prior: PriorSpec,
    lambda: f64,
}

/// Memoizes design runs and evaluations so tables can share them.
pub struct Reproduction {
    pub cfg: RunConfig,
    designs: Vec<(DesignKey, DesignReport)>,
    evals: Vec<(EvalKey, EvalReport)>,
}

impl Reproduction {
    pub fn new(cfg: RunConfig) -> Self {
        Self {
            cfg,
            designs: Vec::new(),
            evals: Vec::new(),
        }
    }

    fn design_config(&self, key: &DesignKey) -> DesignConfig {
        DesignConfig {
            topology: key.setting.topology,
            learn: key.setting.learn,
            prior: key.prior.clone(),
            seed: key.seed,
            ..self.cfg.design.clone()
        }
    }

    /// Runs every requested design not yet stored, in parallel.
    fn ensure_designs(&mut self, keys: Vec<DesignKey>) -> Result<()> {
        let mut missing: Vec<DesignKey> = Vec::new();
        for k in keys {
            if !self.designs.iter().any(|(d, _)| *d == k) && !missing.contains(&k) {
                missing.push(k);
            }
        }
        let runs = missing
            .par_iter()
            .map(|k| design_game(&self.design_config(k)))
            .collect::<bdg_core::Result<Vec<_>>>()?;
        self.designs.extend(missing.into_iter().zip(runs));
        Ok(())
    }

    fn design(&self, setting: Setting, prior: &PriorSpec, seed: u64) -> &DesignReport {
        let key = DesignKey {
            setting,
            prior: prior.clone(),
            seed,
        };
        &self.designs.iter().find(|(k, _)| *k == key).expect("design was ensured").1
    }

    fn game(&self, setting: Setting, prior: &PriorSpec) -> Result<Mdp> {
        if setting.learn == LearnMode::Baseline {
            return Ok(baseline_game(&setting.topology, self.cfg.design.gamma)?);
        }
        Ok(self.design(setting, prior, self.cfg.reproduce.seeds[0]).mdp()?)
    }

    fn ensure_evals(&mut self, keys: Vec<EvalKey>) -> Result<()> {
        let first_seed = self.cfg.reproduce.seeds[0];
        self.ensure_designs(
            keys.iter()
                .filter(|k| k.setting.learn != LearnMode::Baseline)
                .map(|k| DesignKey {
                    setting: k.setting,
                    prior: k.prior.clone(),
                    seed: first_seed,
                })
                .collect(),
        )?;
        let mut missing: Vec<EvalKey> = Vec::new();
        for k in keys {
            if !self.evals.iter().any(|(e, _)| *e == k) && !missing.contains(&k) {
                missing.push(k);
            }
        }
        let games = missing
            .iter()
            .map(|k| self.game(k.setting, &k.prior))
            .collect::<Result<Vec<_>>>()?;
        let reports = missing
            .par_iter()
            .zip(games.par_iter())
            .map(|(k, mdp)| {
                let cfg = EvalConfig {
                    interaction: InteractionConfig {
                        lambda: k.lambda,
                        ..self.cfg.eval.interaction
                    },
                    ..self.cfg.eval.clone()
                };
                evaluate_game(mdp, &cfg)
            })
            .collect::<bdg_core::Result<Vec<_>>>()?;
        self.evals.extend(missing.into_iter().zip(reports));
        Ok(())
    }

    fn eval(&self, setting: Setting, prior: &PriorSpec, lambda: f64) -> &EvalReport {
        let key = EvalKey {
            setting,
            prior: prior.clone(),
            lambda,
        };
        &self.evals.iter().find(|(k, _)| *k == key).expect("evaluation was ensured").1
    }

    fn base_lambda(&self) -> f64 {
        self.cfg.eval.interaction.lambda
    }

    pub fn table1(&mut self) -> Result<Table1> {
        let seeds = self.cfg.reproduce.seeds.clone();
        let prior = PriorSpec::FullUniform;
        let keys = table_settings()
            .into_iter()
            .flat_map(|setting| {
                seeds.iter().map(move |&seed| DesignKey {
                    setting,
                    prior: PriorSpec::FullUniform,
                    seed,
                })
            })
            .collect();
        self.ensure_designs(keys)?;
        let rows = table_settings()
            .into_iter()
            .zip(PAPER_TABLE1)
            .map(|(setting, paper)| Table1Row {
                setting,
                losses: seeds.iter().map(|&s| self.design(setting, &prior, s).final_loss).collect(),
                paper,
            })
            .collect();
        Ok(Table1 { seeds, rows })
    }

    pub fn table2(&mut self) -> Result<Table2> {
        let lambda = self.base_lambda();
        let keys = table_settings()
            .into_iter()
            .map(|setting| EvalKey {
                setting,
                prior: PriorSpec::FullUniform,
                lambda,
            })
            .collect();
        self.ensure_evals(keys)?;
        let cells = table_settings()
            .into_iter()
            .zip(PAPER_TABLE2)
            .map(|(setting, paper)| AccuracyCell {
                setting,
                report: self.eval(setting, &PriorSpec::FullUniform, lambda).clone(),
                paper,
            })
            .collect();
        Ok(Table2 { cells })
    }

    pub fn table3(&mut self) -> Result<Table3> {
        let lambdas = self.cfg.reproduce.lambdas.clone();
        let keys = noise_settings()
            .into_iter()
            .flat_map(|setting| {
                lambdas.iter().map(move |&lambda| EvalKey {
                    setting,
                    prior: PriorSpec::FullUniform,
                    lambda,
                })
            })
            .collect();
        self.ensure_evals(keys)?;
        let rows = noise_settings()
            .into_iter()
            .zip(PAPER_TABLE3)
            .map(|(setting, paper)| Table3Row {
                setting,
                cells: lambdas
                    .iter()
                    .map(|&l| self.eval(setting, &PriorSpec::FullUniform, l).clone())
                    .collect(),
                paper: paper.to_vec(),
            })
            .collect();
        Ok(Table3 { lambdas, rows })
    }

    pub fn table4(&mut self) -> Result<Table4> {
        let lambda = self.base_lambda();
        let seed = self.cfg.reproduce.seeds[0];
        let priors = [PriorSpec::FullUniform, PriorSpec::DiagonalUniform];
        let mut keys = Vec::new();
        for setting in ablation_settings() {
            for prior in &priors {
                keys.push(EvalKey {
                    setting,
                    prior: prior.clone(),
                    lambda,
                });
            }
        }
        self.ensure_evals(keys)?;
        let rows = ablation_settings()
            .into_iter()
            .zip(PAPER_TABLE4)
            .map(|(setting, paper)| {
                let [full, diag] = priors.clone().map(|p| {
                    (
                        self.design(setting, &p, seed).final_loss,
                        self.eval(setting, &p, lambda).clone(),
                    )
                });
                Table4Row {
                    setting,
                    loss: (full.0, diag.0),
                    accuracy: (full.1, diag.1),
                    paper,
                }
            })
            .collect();
        Ok(Table4 { rows })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Row {
    pub setting: Setting,
    pub losses: Vec<f64>,
    pub paper: f64,
}

impl Table1Row {
    pub fn mean(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1 {
    pub seeds: Vec<u64>,
    pub rows: Vec<Table1Row>,
}

impl Table1 {
    fn loss(&self, topology: Topology, learn: LearnMode, i: usize) -> f64 {
        self.rows
            .iter()
            .find(|r| r.setting == Setting::new(topology, learn))
            .expect("every setting present")
            .losses[i]
    }

    /// Whether seed index `i` shows the published ordering.
    pub fn ordered(&self, i: usize) -> bool {
        let (p, g) = (Topology::path6(), Topology::grid3x6());
        let l = |t, m| self.loss(t, m, i);
        let grid = l(g, LearnMode::RewardAndTransition) < l(g, LearnMode::Reward) && l(g, LearnMode::Reward) < l(g, LearnMode::Baseline);
        let learned_beat_baselines = [p, g].into_iter().all(|t| {
            l(t, LearnMode::Reward) < l(t, LearnMode::Baseline) && l(t, LearnMode::RewardAndTransition) < l(t, LearnMode::Baseline)
        });
        grid && learned_beat_baselines
    }

    pub fn checks(&self) -> Vec<Check> {
        let n = self.seeds.len();
        let ok = (0..n).filter(|&i| self.ordered(i)).count();
        let need = (4 * n).div_ceil(5);
        vec![Check {
            name: "loss ordering".into(),
            passed: ok >= need,
            detail: format!("ordering holds in {ok} of {n} seeds (need {need})"),
        }]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyCell {
    pub setting: Setting,
    pub report: EvalReport,
    pub paper: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table2 {
    pub cells: Vec<AccuracyCell>,
}

impl Table2 {
    pub fn mean(&self, setting: Setting) -> f64 {
        self.cells
            .iter()
            .find(|c| c.setting == setting)
            .expect("every setting present")
            .report
            .mean
    }

    pub fn checks(&self) -> Vec<Check> {
        let (p, g) = (Topology::path6(), Topology::grid3x6());
        let base = self.mean(Setting::new(p, LearnMode::Baseline));
        let grid = self.mean(Setting::new(g, LearnMode::RewardAndTransition));
        let path = self.mean(Setting::new(p, LearnMode::Reward));
        vec![
            Check {
                name: "learned Grid gap".into(),
                passed: grid >= base + 0.20,
                detail: format!("{grid:.3} vs baseline Path {base:.3} + 0.20"),
            },
            Check {
                name: "learned Path gap".into(),
                passed: path >= base + 0.15,
                detail: format!("{path:.3} vs baseline Path {base:.3} + 0.15"),
            },
            Check {
                name: "baseline Path range".into(),
                passed: (0.33..=0.55).contains(&base),
                detail: format!("{base:.3} in [0.33, 0.55]"),
            },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table3Row {
    pub setting: Setting,
    pub cells: Vec<EvalReport>,
    pub paper: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table3 {
    pub lambdas: Vec<f64>,
    pub rows: Vec<Table3Row>,
}

impl Table3 {
    pub fn checks(&self) -> Vec<Check> {
        let grid = &self.rows[2].cells;
        let mut trend = true;
        let mut detail = Vec::new();
        for w in grid.windows(2) {
            let pooled = ((w[0].std.powi(2) + w[1].std.powi(2)) / 2.0).sqrt();
            trend &= w[1].mean <= w[0].mean + pooled;
            detail.push(format!("{:.3} -> {:.3} (pooled sd {pooled:.3})", w[0].mean, w[1].mean));
        }
        let best = (0..self.lambdas.len()).all(|j| self.rows.iter().take(2).all(|r| grid[j].mean > r.cells[j].mean));
        let column: Vec<String> = (0..self.lambdas.len())
            .map(|j| {
                let others = self.rows.iter().take(2).map(|r| format!("{:.3}", r.cells[j].mean)).collect::<Vec<_>>();
                format!("{:.3} vs {}", grid[j].mean, others.join("/"))
            })
            .collect();
        vec![
            Check {
                name: "learned Grid non-increasing in lambda".into(),
                passed: trend,
                detail: detail.join(", "),
            },
            Check {
                name: "learned Grid best at every lambda".into(),
                passed: best,
                detail: column.join("; "),
            },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table4Row {
    pub setting: Setting,
    /// Full prior, then diagonal.
    pub loss: (f64, f64),
    pub accuracy: (EvalReport, EvalReport),
    pub paper: AblationRef,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table4 {
    pub rows: Vec<Table4Row>,
}

impl Table4 {
    pub fn checks(&self) -> Vec<Check> {
        let losses: Vec<String> = self
            .rows
            .iter()
            .map(|r| format!("{:.3} < {:.3}", r.loss.1, r.loss.0))
            .collect();
        let grid = &self.rows[3];
        let (full, diag) = (grid.accuracy.0.mean, grid.accuracy.1.mean);
        vec![
            Check {
                name: "diagonal prior lowers design loss".into(),
                passed: self.rows.iter().all(|r| r.loss.1 < r.loss.0),
                detail: losses.join(", "),
            },
            Check {
                name: "diagonal prior hurts learned Grid accuracy".into(),
                passed: diag <= full - 0.05,
                detail: format!("diagonal {diag:.3} vs full {full:.3} - 0.05"),
            },
        ]
    }
}

fn ms(r: &EvalReport) -> String {
    format!("{:.3} ({:.3})", r.mean, r.std)
}

fn pm((m, s): (f64, f64)) -> String {
    format!("{m:.3} ({s:.3})")
}

fn push_checks(out: &mut String, checks: &[Check]) {
    for c in checks {
        let _ = writeln!(out, "{c}");
    }
}

impl fmt::Display for Table1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::from("Table 1: design loss (mean over seeds; per-seed values follow)\n");
        let _ = writeln!(out, "{:<28}{:>10}{:>10}  per seed", "setting", "ours", "paper");
        for r in &self.rows {
            let per: Vec<String> = r.losses.iter().map(|l| format!("{l:.4}")).collect();
            let _ = writeln!(out, "{:<28}{:>10.4}{:>10.3}  {}", r.setting.label(), r.mean(), r.paper, per.join(" "));
        }
        push_checks(&mut out, &self.checks());
        f.write_str(&out)
    }
}

impl fmt::Display for Table2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::from("Table 2: classification accuracy, mean (std)\n");
        let _ = writeln!(out, "{:<28}{:>16}{:>16}", "setting", "ours", "paper");
        for c in &self.cells {
            let _ = writeln!(out, "{:<28}{:>16}{:>16}", c.setting.label(), ms(&c.report), pm(c.paper));
        }
        push_checks(&mut out, &self.checks());
        f.write_str(&out)
    }
}

impl fmt::Display for Table3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::from("Table 3: accuracy under interaction noise, ours / paper\n");
        let _ = write!(out, "{:<28}", "setting");
        for l in &self.lambdas {
            let _ = write!(out, "{:>34}", format!("lambda = {l}"));
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<28}", r.setting.label());
            for (j, c) in r.cells.iter().enumerate() {
                let paper = r.paper.get(j).map_or("-".to_string(), |&p| pm(p));
                let _ = write!(out, "{:>34}", format!("{} / {paper}", ms(c)));
            }
            out.push('\n');
        }
        push_checks(&mut out, &self.checks());
        f.write_str(&out)
    }
}

impl fmt::Display for Table4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::from("Table 4: full vs diagonal prior, ours [paper]\n");
        let _ = writeln!(
            out,
            "{:<28}{:>18}{:>18}{:>32}{:>32}",
            "setting", "loss full", "loss diagonal", "accuracy full", "accuracy diagonal"
        );
        for r in &self.rows {
            let ((pl_f, pl_d), (pa_f, pa_d)) = r.paper;
            let _ = writeln!(
                out,
                "{:<28}{:>18}{:>18}{:>32}{:>32}",
                r.setting.label(),
                format!("{:.4} [{pl_f:.3}]", r.loss.0),
                format!("{:.4} [{pl_d:.3}]", r.loss.1),
                format!("{} [{}]", ms(&r.accuracy.0), pm(pa_f)),
                format!("{} [{}]", ms(&r.accuracy.1), pm(pa_d)),
            );
        }
        push_checks(&mut out, &self.checks());
        f.write_str(&out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableId {
    Loss = 1,
    Accuracy = 2,
    Noise = 3,
    Prior = 4,
}

impl TableId {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(TableId::Loss),
            2 => Ok(TableId::Accuracy),
            3 => Ok(TableId::Noise),
            4 => Ok(TableId::Prior),
            _ => Err(CliError::Config(format!("table must be 1-4, got {n}"))),
        }
    }
}

/// A computed table: its rendering, its JSON form and its acceptance checks.
pub struct TableOutput {
    pub text: String,
    pub json: serde_json::Value,
    pub checks: Vec<Check>,
}

fn output<T: Serialize + fmt::Display>(t: &T, checks: Vec<Check>) -> TableOutput {
    TableOutput {
        text: t.to_string(),
        json: serde_json::to_value(t).expect("tables serialize"),
        checks,
    }
}

impl Reproduction {
    pub fn table(&mut self, id: TableId) -> Result<TableOutput> {
        Ok(match id {
            TableId::Loss => {
                let t = self.table1()?;
                output(&t, t.checks())
            }
            TableId::Accuracy => {
                let t = self.table2()?;
                output(&t, t.checks())
            }
            TableId::Noise => {
                let t = self.table3()?;
                output(&t, t.checks())
            }
            TableId::Prior => {
                let t = self.table4()?;
                output(&t, t.checks())
            }
        })
    }
}

//! Downstream evaluation: labelled datasets from a fixed game, a recurrent
//! classifier over player types, and the sweeps built from them.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{design_game, DesignConfig, LearnMode};
use crate::diff::{Graph, Var};
use crate::error::{Error, Result};
use crate::game::{Mdp, Topology};
use crate::interaction::{sample_trajectory_hard, InteractionConfig, Trajectory};
use crate::optim::Adam;
use crate::planner::plan;
use crate::players::{sample_mixture, MixtureSpec, PriorSpec};
use crate::posterior::{one_hot_steps, predicted_class, Head, PosteriorNet, DEFAULT_HIDDEN};
use crate::rng::derive_rng;

const STREAM_DATA: u64 = 11;
const STREAM_INIT: u64 = 12;
const STREAM_EPOCH: u64 = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 1000,
            val: 100,
            test: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub label: usize,
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub num_states: usize,
    pub num_actions: usize,
    pub classes: usize,
    pub lambda: f64,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Example> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            let examples = self.split(split);
            if examples.is_empty() {
                return Err(Error::DegenerateDataset(format!("{} split is empty", split.name())));
            }
            for e in examples {
                if e.label >= self.classes {
                    return Err(Error::LabelOutOfRange {
                        label: e.label,
                        classes: self.classes,
                    });
                }
            }
            one_hot_steps(
                &examples.iter().map(|e| e.trajectory.clone()).collect::<Vec<_>>(),
                self.num_states,
                self.num_actions,
            )?;
        }
        let first = self.train[0].label;
        if self.train.iter().all(|e| e.label == first) {
            return Err(Error::DegenerateDataset(format!("every training label is {first}")));
        }
        Ok(())
    }
}

/// One labelled trajectory per sampled player, with converged planning.
/// Instance `i` uses its own random stream, so the result depends only on `seed`.
pub fn generate_dataset(mdp: &Mdp, mixture: &MixtureSpec, sizes: SplitSizes, interaction: &InteractionConfig, seed: u64) -> Result<Dataset> {
    mixture.validate()?;
    interaction.validate(mdp.num_states())?;
    let mut index = 0u64;
    let mut draw = |n: usize| -> Result<Vec<Example>> {
        (0..n)
            .map(|_| {
                let mut rng = derive_rng(seed, &[STREAM_DATA, index]);
                index += 1;
                let labelled = sample_mixture(mixture, 1, &mut rng)[0];
                let (_, policy) = plan(mdp, &labelled.player)?;
                let trajectory = sample_trajectory_hard(mdp, &policy, interaction, &mut rng)?;
                Ok(Example {
                    label: labelled.label,
                    trajectory,
                })
            })
            .collect()
    };
    let train = draw(sizes.train)?;
    let val = draw(sizes.val)?;
    let test = draw(sizes.test)?;
    Ok(Dataset {
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        classes: mixture.components(),
        lambda: interaction.lambda,
        train,
        val,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            seeds: (0..5).collect(),
            batch: 32,
            lr: 1e-3,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.hidden == 0 || self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "classifier needs positive epochs, batch, hidden size and at least one seed".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("classifier learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// 1-based epoch whose checkpoint had the best validation accuracy.
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_seed: Vec<SeedResult>,
    pub mean: f64,
    /// Sample standard deviation over seeds.
    pub std: f64,
    pub config: ClassifierConfig,
}

impl EvalReport {
    pub fn from_seeds(per_seed: Vec<SeedResult>, config: ClassifierConfig) -> Self {
        let accs: Vec<f64> = per_seed.iter().map(|r| r.test_accuracy).collect();
        let (mean, std) = mean_std(&accs);
        Self {
            per_seed,
            mean,
            std,
            config,
        }
    }
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn batch_inputs(g: &mut Graph, data: &Dataset, examples: &[&Example]) -> Result<Vec<Var>> {
    let trajs: Vec<Trajectory> = examples.iter().map(|e| e.trajectory.clone()).collect();
    one_hot_steps(&trajs, data.num_states, data.num_actions)?
        .into_iter()
        .map(|t| g.constant(t))
        .collect()
}

/// Fraction of `examples` whose most probable class matches the label.
pub fn accuracy(net: &PosteriorNet, examples: &[Example]) -> Result<f64> {
    let trajs: Vec<Trajectory> = examples.iter().map(|e| e.trajectory.clone()).collect();
    let outputs = net.encode(&trajs)?;
    let hits = outputs
        .iter()
        .zip(examples)
        .filter(|(o, e)| o.as_categorical().is_some_and(|c| predicted_class(c) == e.label))
        .count();
    Ok(hits as f64 / examples.len() as f64)
}

/// Trains one classifier from scratch and scores its best-validation epoch.
pub fn train_one(data: &Dataset, cfg: &ClassifierConfig, seed: u64) -> Result<SeedResult> {
    data.validate()?;
    cfg.validate()?;
    let head = Head::Categorical { classes: data.classes };
    let mut net = PosteriorNet::init(
        head,
        data.num_states,
        data.num_actions,
        cfg.hidden,
        &mut derive_rng(seed, &[STREAM_INIT]),
    );
    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best: Option<SeedResult> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut derive_rng(seed, &[STREAM_EPOCH, epoch as u64]));
        for chunk in order.chunks(cfg.batch) {
            let examples: Vec<&Example> = chunk.iter().map(|&i| &data.train[i]).collect();
            let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
            let mut g = Graph::new();
            let bound = net.bind(&mut g, true)?;
            let steps = batch_inputs(&mut g, data, &examples)?;
            let h = bound.encode(&mut g, &steps)?;
            let lp = bound.categorical_log_prob(&mut g, h, &labels)?;
            let mean = g.mean(lp)?;
            let loss = g.neg(mean)?;
            let grads = g.gradient(loss, bound.vars())?;
            opt.step(&mut net.params_mut(), &grads)?;
        }
        let val_accuracy = accuracy(&net, &data.val)?;
        if best.as_ref().is_none_or(|b| val_accuracy > b.val_accuracy) {
            best = Some(SeedResult {
                seed,
                best_epoch: epoch,
                val_accuracy,
                test_accuracy: accuracy(&net, &data.test)?,
            });
        }
    }
    Ok(best.expect("at least one epoch"))
}

/// One classifier per configured seed, all on the same dataset.
pub fn train_classifier(data: &Dataset, cfg: &ClassifierConfig) -> Result<EvalReport> {
    let per_seed = cfg
        .seeds
        .iter()
        .map(|&s| train_one(data, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_seeds(per_seed, cfg.clone()))
}

/// Everything needed to score a fixed game by classification.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub sizes: SplitSizes,
    pub mixture: MixtureSpec,
    pub interaction: InteractionConfig,
    pub dataset_seed: u64,
    pub classifier: ClassifierConfig,
    /// Draw a fresh dataset for every classifier seed instead of sharing one.
    pub regenerate_per_seed: bool,
}

pub fn evaluate_game(mdp: &Mdp, cfg: &EvalConfig) -> Result<EvalReport> {
    if !cfg.regenerate_per_seed {
        let data = generate_dataset(mdp, &cfg.mixture, cfg.sizes, &cfg.interaction, cfg.dataset_seed)?;
        return train_classifier(&data, &cfg.classifier);
    }
    cfg.classifier.validate()?;
    let per_seed = cfg
        .classifier
        .seeds
        .iter()
        .map(|&seed| {
            let data_seed = derive_rng(cfg.dataset_seed, &[STREAM_DATA, u64::MAX, seed]).random();
            let data = generate_dataset(mdp, &cfg.mixture, cfg.sizes, &cfg.interaction, data_seed)?;
            train_one(&data, &cfg.classifier, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_seeds(per_seed, cfg.classifier.clone()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub game: String,
    pub lambda: f64,
    pub report: EvalReport,
}

/// Every game crossed with every noise level.
pub fn noise_sweep(games: &[(String, Mdp)], lambdas: &[f64], cfg: &EvalConfig) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(games.len() * lambdas.len());
    for (name, mdp) in games {
        for &lambda in lambdas {
            let cell_cfg = EvalConfig {
                interaction: InteractionConfig { lambda, ..cfg.interaction },
                ..cfg.clone()
            };
            cells.push(SweepCell {
                game: name.clone(),
                lambda,
                report: evaluate_game(mdp, &cell_cfg)?,
            });
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub topology: Topology,
    pub learn: LearnMode,
    pub prior: PriorSpec,
    pub design_loss: f64,
    pub report: EvalReport,
}

/// Designs each method under each prior, then classifies on the standard mixture.
pub fn prior_ablation(
    methods: &[(Topology, LearnMode)],
    priors: &[PriorSpec],
    design: &DesignConfig,
    eval: &EvalConfig,
) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::new();
    for &(topology, learn) in methods {
        for prior in priors {
            let cfg = DesignConfig {
                topology,
                learn,
                prior: prior.clone(),
                ..design.clone()
            };
            let report = design_game(&cfg)?;
            cells.push(AblationCell {
                topology,
                learn,
                prior: prior.clone(),
                design_loss: report.final_loss,
                report: evaluate_game(&report.mdp()?, eval)?,
            });
        }
    }
    Ok(cells)
}

/// Methods compared in the prior ablation.
pub fn ablation_methods() -> Vec<(Topology, LearnMode)> {
    vec![
        (Topology::path6(), LearnMode::Reward),
        (Topology::path6(), LearnMode::RewardAndTransition),
        (Topology::grid3x6(), LearnMode::Reward),
        (Topology::grid3x6(), LearnMode::RewardAndTransition),
    ]
}

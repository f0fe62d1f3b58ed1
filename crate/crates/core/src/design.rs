//! Game design by maximizing a variational bound on trait/behavior mutual
//! information.
//!
//! Each step samples traits from the prior, plans and rolls out soft
//! trajectories in the current game, scores them with the Gaussian posterior,
//! and takes one Adam step jointly on the game and the posterior. The loss is
//! `-E[log q(z|x)]`; the prior entropy is reported beside it.

use alloc::boxed::Box;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::game::{baseline_params, realize_mdp, realize_mdp_expr, GameParams, Mdp, Topology};
use crate::interaction::{sample_trajectory_hard, soft_rollout, GumbelNoise, InteractionConfig, SoftTrajectory};
use crate::optim::Adam;
use crate::planner::{plan, plan_expr, TRAINING_SWEEPS};
use crate::players::{sample_prior, PlayerTrait, PriorSpec};
use crate::posterior::{gaussian_log_density, one_hot_steps, BoundNet, Head, PosteriorNet, DEFAULT_HIDDEN};
use crate::rng::derive_rng;

const STREAM_INIT: u64 = 1;
const STREAM_STEP: u64 = 2;
const STREAM_FINAL: u64 = 3;
const STREAM_REFIT: u64 = 4;

/// Which game parameters the design may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LearnMode {
    /// The hand-made baseline game, frozen.
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "reward")]
    Reward,
    #[serde(rename = "reward+transition")]
    RewardAndTransition,
}

impl LearnMode {
    pub const ALL: [LearnMode; 3] = [LearnMode::Baseline, LearnMode::Reward, LearnMode::RewardAndTransition];

    pub fn name(self) -> &'static str {
        match self {
            LearnMode::Baseline => "baseline",
            LearnMode::Reward => "reward",
            LearnMode::RewardAndTransition => "reward+transition",
        }
    }

    pub fn learns_transition(self) -> bool {
        self == LearnMode::RewardAndTransition
    }
}

impl core::str::FromStr for LearnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LearnMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown learn mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub topology: Topology,
    pub learn: LearnMode,
    pub prior: PriorSpec,
    pub interaction: InteractionConfig,
    pub gamma: f64,
    /// Value-iteration sweeps unrolled per step.
    pub sweeps: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    /// Fresh traits used for the reported final loss.
    pub eval_batch: usize,
    /// Weight of a squared-reward penalty added to the loss.
    pub reward_l2: f64,
    /// Standard deviation of the initial rewards.
    pub reward_init_std: f64,
    /// Initial value of every stickiness logit.
    pub stick_init_logit: f64,
    /// Posterior-only steps on hard trajectories of the finished game.
    pub refit_steps: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            topology: Topology::grid3x6(),
            learn: LearnMode::RewardAndTransition,
            prior: PriorSpec::FullUniform,
            interaction: InteractionConfig::default(),
            gamma: 0.95,
            sweeps: TRAINING_SWEEPS,
            batch: 64,
            steps: 5000,
            lr: 1e-2,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            eval_batch: 1024,
            reward_l2: 0.0,
            reward_init_std: 2.0,
            stick_init_logit: 0.0,
            refit_steps: 1000,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.interaction.validate(self.topology.num_states())?;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.sweeps == 0 {
            return bad("sweeps must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden size must be at least 1");
        }
        if self.eval_batch == 0 {
            return bad("eval_batch must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.reward_init_std >= 0.0 && self.reward_init_std.is_finite()) {
            return bad("reward_init_std must be non-negative");
        }
        if !self.stick_init_logit.is_finite() {
            return bad("stick_init_logit must be finite");
        }
        if !(self.reward_l2 >= 0.0 && self.reward_l2.is_finite()) {
            return bad("reward_l2 must be non-negative");
        }
        if self.learn == LearnMode::Baseline {
            baseline_params(&self.topology)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub topology: Topology,
    pub learn: LearnMode,
    pub gamma: f64,
    pub params: GameParams,
    pub posterior: PosteriorNet,
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    /// Differential entropy of the design prior, when it has a closed form.
    pub entropy: Option<f64>,
}

impl DesignReport {
    pub fn mdp(&self) -> Result<Mdp> {
        realize_mdp(&self.topology, &self.params, self.learn.learns_transition(), self.gamma)
    }
}

/// Differential entropy of a uniform prior: the log of its area.
pub fn entropy_of_prior(spec: &PriorSpec) -> Result<f64> {
    spec.validate()?;
    match spec {
        PriorSpec::FullUniform => Ok(0.0),
        PriorSpec::DiagonalUniform => Ok(0.5f64.ln()),
        PriorSpec::Box { pos, neg } => Ok(((pos[1] - pos[0]) * (neg[1] - neg[0])).ln()),
        PriorSpec::Mixture(_) => Err(Error::Unsupported("entropy of a mixture prior")),
    }
}

/// `-(1/B) sum_b log q(z_b | x_b)` for soft or one-hot step inputs.
pub fn mi_loss(g: &mut Graph, net: &BoundNet, steps: &[Var], traits: &[PlayerTrait]) -> Result<Var> {
    let h = net.encode(g, steps)?;
    let out = net.gaussian(g, h)?;
    let lp = net.gaussian_log_density(g, &out, traits)?;
    let mean = g.mean(lp)?;
    g.neg(mean)
}

/// Per-step posterior inputs `[B, S + A]` of a soft rollout.
pub fn soft_inputs(g: &mut Graph, soft: &SoftTrajectory) -> Result<Vec<Var>> {
    soft.states
        .iter()
        .zip(&soft.actions)
        .map(|(s, a)| g.concat(&[*s, *a]))
        .collect()
}

/// One step's computation, recorded for differentiation.
pub struct DesignGraph {
    pub graph: Graph,
    pub loss: Var,
    /// Present when rewards are learned.
    pub reward: Option<Var>,
    /// Present when transitions are learned.
    pub stick_logit: Option<Var>,
    pub net: BoundNet,
}

impl DesignGraph {
    /// Trainable leaves: game parameters first, then the posterior.
    pub fn leaves(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.reward.iter().chain(&self.stick_logit).copied().collect();
        out.extend_from_slice(self.net.vars());
        out
    }
}

pub fn build_design_graph(
    cfg: &DesignConfig,
    params: &GameParams,
    net: &PosteriorNet,
    traits: &[PlayerTrait],
    noise: &GumbelNoise,
) -> Result<DesignGraph> {
    let mut g = Graph::new();
    let learned = cfg.learn != LearnMode::Baseline;
    let r_tensor = Tensor::vector(params.reward.clone());
    let r = if learned { g.param(r_tensor)? } else { g.constant(r_tensor)? };
    let k = if cfg.learn.learns_transition() {
        Some(g.param(Tensor::vector(params.stick_logit.clone()))?)
    } else {
        None
    };
    let expr = realize_mdp_expr(&mut g, &cfg.topology, r, k, cfg.gamma)?;
    let planned = plan_expr(&mut g, &expr, traits, cfg.sweeps)?;
    let soft = soft_rollout(&mut g, &expr, &planned, &cfg.interaction, noise)?;
    let steps = soft_inputs(&mut g, &soft)?;
    let bound = net.bind(&mut g, true)?;
    let mut loss = mi_loss(&mut g, &bound, &steps, traits)?;
    if learned && cfg.reward_l2 > 0.0 {
        let sq = g.mul(r, r)?;
        let total = g.sum(sq)?;
        let penalty = g.scale(total, cfg.reward_l2)?;
        loss = g.add(loss, penalty)?;
    }
    Ok(DesignGraph {
        graph: g,
        loss,
        reward: learned.then_some(r),
        stick_logit: k,
        net: bound,
    })
}

/// Initial game parameters and posterior for a configuration.
pub fn initial_state(cfg: &DesignConfig) -> Result<(GameParams, PosteriorNet)> {
    let mut rng = derive_rng(cfg.seed, &[STREAM_INIT]);
    let params = match cfg.learn {
        LearnMode::Baseline => baseline_params(&cfg.topology)?,
        _ => GameParams::init_scaled(&cfg.topology, cfg.reward_init_std, cfg.stick_init_logit, &mut rng),
    };
    let net = PosteriorNet::init(
        Head::Gaussian,
        cfg.topology.num_states(),
        cfg.topology.num_actions(),
        cfg.hidden,
        &mut rng,
    );
    Ok((params, net))
}

/// Traits and Gumbel noise for one training step.
pub fn step_inputs(cfg: &DesignConfig, step: usize) -> (Vec<PlayerTrait>, GumbelNoise) {
    let mut rng = derive_rng(cfg.seed, &[STREAM_STEP, step as u64]);
    let traits = sample_prior(&cfg.prior, cfg.batch, &mut rng);
    let noise = GumbelNoise::draw(
        cfg.batch,
        cfg.topology.num_states(),
        cfg.topology.num_actions(),
        cfg.interaction.horizon,
        &mut rng,
    );
    (traits, noise)
}

/// Progress hook called after every step with `(step, loss)`.
pub trait Observer {
    fn on_step(&mut self, step: usize, loss: f64);
}

impl Observer for () {
    fn on_step(&mut self, _: usize, _: f64) {}
}

impl<F: FnMut(usize, f64)> Observer for F {
    fn on_step(&mut self, step: usize, loss: f64) {
        self(step, loss)
    }
}

pub fn design_game(cfg: &DesignConfig) -> Result<DesignReport> {
    design_game_with(cfg, &mut ())
}

pub fn design_game_with<O: Observer + ?Sized>(cfg: &DesignConfig, observer: &mut O) -> Result<DesignReport> {
    cfg.validate()?;
    let (mut params, mut net) = initial_state(cfg)?;
    let mut opt = Adam::new(cfg.lr);
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let diverged = |step: usize, e: Error| Error::Diverged {
        step,
        source: Box::new(e),
    };

    for step in 0..cfg.steps {
        let (traits, noise) = step_inputs(cfg, step);
        let dg = build_design_graph(cfg, &params, &net, &traits, &noise).map_err(|e| diverged(step, e))?;
        let loss = dg.graph.scalar(dg.loss);
        if !loss.is_finite() {
            return Err(diverged(step, Error::NonFinite { node: dg.loss.index(), op: "mi_loss" }));
        }
        let leaves = dg.leaves();
        let grads = dg.graph.gradient(dg.loss, &leaves).map_err(|e| diverged(step, e))?;
        if grads.iter().any(|t| !t.is_finite()) {
            return Err(diverged(step, Error::NonFinite { node: dg.loss.index(), op: "gradient" }));
        }

        let mut targets: Vec<&mut Tensor> = Vec::with_capacity(leaves.len());
        let mut reward_t = Tensor::vector(core::mem::take(&mut params.reward));
        let mut stick_t = Tensor::vector(core::mem::take(&mut params.stick_logit));
        if dg.reward.is_some() {
            targets.push(&mut reward_t);
        }
        if dg.stick_logit.is_some() {
            targets.push(&mut stick_t);
        }
        targets.extend(net.params_mut());
        opt.step(&mut targets, &grads)?;
        params.reward = reward_t.into_data();
        params.stick_logit = stick_t.into_data();

        loss_curve.push(loss);
        observer.on_step(step, loss);
    }

    refit_posterior(cfg, &params, &mut net)?;
    let final_loss = evaluate_design_loss(cfg, &params, &net)?;
    Ok(DesignReport {
        topology: cfg.topology,
        learn: cfg.learn,
        gamma: cfg.gamma,
        params,
        posterior: net,
        loss_curve,
        final_loss,
        entropy: entropy_of_prior(&cfg.prior).ok(),
    })
}

/// Trains the posterior alone on hard trajectories of a fixed game.
pub fn refit_posterior(cfg: &DesignConfig, params: &GameParams, net: &mut PosteriorNet) -> Result<()> {
    let mdp = realize_mdp(&cfg.topology, params, cfg.learn.learns_transition(), cfg.gamma)?;
    let mut opt = Adam::new(cfg.lr);
    for step in 0..cfg.refit_steps {
        let mut rng = derive_rng(cfg.seed, &[STREAM_REFIT, step as u64]);
        let traits = sample_prior(&cfg.prior, cfg.batch, &mut rng);
        let trajectories = traits
            .iter()
            .map(|t| {
                let (_, policy) = plan(&mdp, t)?;
                sample_trajectory_hard(&mdp, &policy, &cfg.interaction, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new();
        let bound = net.bind(&mut g, true)?;
        let steps = one_hot_steps(&trajectories, mdp.num_states(), mdp.num_actions())?
            .into_iter()
            .map(|t| g.constant(t))
            .collect::<Result<Vec<_>>>()?;
        let loss = mi_loss(&mut g, &bound, &steps, &traits)?;
        let grads = g.gradient(loss, bound.vars())?;
        if !g.scalar(loss).is_finite() || grads.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged {
                step: cfg.steps + step,
                source: Box::new(Error::NonFinite { node: loss.index(), op: "refit" }),
            });
        }
        opt.step(&mut net.params_mut(), &grads)?;
    }
    Ok(())
}

/// Loss on fresh prior draws with converged planning and hard trajectories.
pub fn evaluate_design_loss(cfg: &DesignConfig, params: &GameParams, net: &PosteriorNet) -> Result<f64> {
    let mdp = realize_mdp(&cfg.topology, params, cfg.learn.learns_transition(), cfg.gamma)?;
    let mut rng = derive_rng(cfg.seed, &[STREAM_FINAL]);
    let traits = sample_prior(&cfg.prior, cfg.eval_batch, &mut rng);
    hard_loss(&mdp, net, &traits, &cfg.interaction, &mut rng)
}

/// `-mean log q(z|x)` with one hard trajectory per trait.
pub fn hard_loss<R: Rng + ?Sized>(
    mdp: &Mdp,
    net: &PosteriorNet,
    traits: &[PlayerTrait],
    interaction: &InteractionConfig,
    rng: &mut R,
) -> Result<f64> {
    let mut trajectories = Vec::with_capacity(traits.len());
    for t in traits {
        let (_, policy) = plan(mdp, t)?;
        trajectories.push(sample_trajectory_hard(mdp, &policy, interaction, rng)?);
    }
    let mut total = 0.0;
    for (chunk_t, chunk_z) in trajectories.chunks(256).zip(traits.chunks(256)) {
        for (out, z) in net.encode(chunk_t)?.iter().zip(chunk_z) {
            let g = out.as_gaussian().ok_or(Error::Unsupported("design loss needs a gaussian head"))?;
            total += gaussian_log_density(g, z);
        }
    }
    Ok(-total / traits.len() as f64)
}

/// Trailing moving average with the given window.
pub fn smoothed(curve: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || curve.len() < window {
        return vec![];
    }
    let mut out = Vec::with_capacity(curve.len() - window + 1);
    let mut acc: f64 = curve[..window].iter().sum();
    out.push(acc / window as f64);
    for i in window..curve.len() {
        acc += curve[i] - curve[i - window];
        out.push(acc / window as f64);
    }
    out
}

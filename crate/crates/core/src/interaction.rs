//! Trajectory generation from a planned policy.
//!
//! Hard trajectories are integer `(state, action)` sequences drawn with the
//! Gumbel-max trick. Soft trajectories live inside a [`Graph`] as per-step
//! probability vectors produced by Gumbel-softmax, so a design loss can be
//! differentiated through the whole rollout.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::game::{Mdp, MdpExpr};
use crate::planner::{PlanExpr, Policy};

/// Added inside logarithms of soft mixtures so that vanishing mass stays finite.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractionConfig {
    pub horizon: usize,
    pub lambda: f64,
    pub tau: f64,
    pub s_init: usize,
    /// Forward one-hot argmax samples while differentiating through the relaxation.
    pub straight_through: bool,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            lambda: 1.0,
            tau: 0.1,
            s_init: 0,
            straight_through: false,
        }
    }
}

impl InteractionConfig {
    pub fn validate(&self, num_states: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.lambda >= 1.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("lambda must be >= 1, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("tau must be > 0, got {}", self.tau)));
        }
        if self.s_init >= num_states {
            return Err(Error::InvalidConfig(alloc::format!(
                "s_init {} outside {} states",
                self.s_init,
                num_states
            )));
        }
        Ok(())
    }
}

/// Hard trajectory: `states[t]` is visited and `actions[t]` taken there.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// How many steps were spent in each state.
    pub fn visit_counts(&self, num_states: usize) -> Vec<usize> {
        let mut counts = vec![0; num_states];
        for &s in &self.states {
            counts[s] += 1;
        }
        counts
    }
}

/// Per-step soft vectors for a batch: states `[B, S]`, actions `[B, A]`.
#[derive(Clone, Debug)]
pub struct SoftTrajectory {
    pub states: Vec<Var>,
    pub actions: Vec<Var>,
}

/// Pre-drawn standard Gumbel noise for a batch of soft rollouts. Holding it
/// fixed makes a rollout a deterministic function of the game parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelNoise {
    /// One `[B, A]` tensor per step.
    pub actions: Vec<Tensor>,
    /// One `[B, S]` tensor per transition (`horizon - 1` of them).
    pub states: Vec<Tensor>,
}

/// One finite standard Gumbel draw.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let dist = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    loop {
        let g: f64 = dist.sample(rng);
        if g.is_finite() {
            return g;
        }
    }
}

impl GumbelNoise {
    pub fn draw<R: Rng + ?Sized>(batch: usize, num_states: usize, num_actions: usize, horizon: usize, rng: &mut R) -> Self {
        let mut block = |cols: usize| {
            let data = (0..batch * cols).map(|_| gumbel(rng)).collect();
            Tensor::new(vec![batch, cols], data).expect("noise shape")
        };
        let actions = (0..horizon).map(|_| block(num_actions)).collect();
        let states = (1..horizon).map(|_| block(num_states)).collect();
        Self { actions, states }
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// `argmax_i log(u_i) / lambda + g_i` over entries with `u_i > 0`.
pub fn gumbel_argmax(u: &[f64], lambda: f64, noise: &[f64]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, (&p, &g)) in u.iter().zip(noise).enumerate() {
        if p <= 0.0 {
            continue;
        }
        let score = p.ln() / lambda + g;
        if score > best.1 {
            best = (i, score);
        }
    }
    best.0
}

/// Draws an action index from `u` tempered by `lambda`.
pub fn sample_action_hard<R: Rng + ?Sized>(u: &[f64], lambda: f64, rng: &mut R) -> usize {
    let noise: Vec<f64> = u.iter().map(|_| gumbel(rng)).collect();
    gumbel_argmax(u, lambda, &noise)
}

/// The distribution `sample_action_hard` draws from: `u^(1/lambda)` normalized.
pub fn tempered(u: &[f64], lambda: f64) -> Vec<f64> {
    let w: Vec<f64> = u
        .iter()
        .map(|&p| if p > 0.0 { p.powf(1.0 / lambda) } else { 0.0 })
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn sample_trajectory_hard<R: Rng + ?Sized>(mdp: &Mdp, policy: &Policy, cfg: &InteractionConfig, rng: &mut R) -> Result<Trajectory> {
    cfg.validate(mdp.num_states())?;
    let mut states = Vec::with_capacity(cfg.horizon);
    let mut actions = Vec::with_capacity(cfg.horizon);
    let mut s = cfg.s_init;
    for t in 0..cfg.horizon {
        let a = sample_action_hard(policy.row(s), cfg.lambda, rng);
        states.push(s);
        actions.push(a);
        if t + 1 < cfg.horizon {
            s = sample_action_hard(mdp.next_state_dist(s, a), 1.0, rng);
        }
    }
    Ok(Trajectory { states, actions })
}

/// The hard trajectory that batch element `b` of `noise` selects.
pub fn hard_rollout_with_noise(mdp: &Mdp, policy: &Policy, cfg: &InteractionConfig, noise: &GumbelNoise, b: usize) -> Result<Trajectory> {
    cfg.validate(mdp.num_states())?;
    let mut states = Vec::with_capacity(cfg.horizon);
    let mut actions = Vec::with_capacity(cfg.horizon);
    let mut s = cfg.s_init;
    for t in 0..cfg.horizon {
        let a = gumbel_argmax(policy.row(s), cfg.lambda, noise.actions[t].row(b));
        states.push(s);
        actions.push(a);
        if t + 1 < cfg.horizon {
            s = gumbel_argmax(mdp.next_state_dist(s, a), 1.0, noise.states[t].row(b));
        }
    }
    Ok(Trajectory { states, actions })
}

fn gumbel_softmax(g: &mut Graph, probs: Var, scale: f64, noise: &Tensor, tau: f64) -> Result<Var> {
    let floored = g.offset(probs, LOG_FLOOR)?;
    let logp = g.log(floored)?;
    let scaled = g.scale(logp, scale)?;
    let n = g.constant(noise.clone())?;
    let perturbed = g.add(scaled, n)?;
    let tempered = g.scale(perturbed, 1.0 / tau)?;
    g.softmax(tempered)
}

/// Replaces the forward value of `soft` by its row-wise one-hot argmax.
fn straight_through(g: &mut Graph, soft: Var) -> Result<Var> {
    let value = g.value(soft);
    let width = *value.shape().last().expect("rank >= 1");
    let mut shift = value.clone();
    for row in shift.data_mut().chunks_mut(width) {
        let best = row
            .iter()
            .enumerate()
            .fold(0, |best, (i, &x)| if x > row[best] { i } else { best });
        for (i, x) in row.iter_mut().enumerate() {
            *x = f64::from(u8::from(i == best)) - *x;
        }
    }
    let shift = g.constant(shift)?;
    g.add(soft, shift)
}

/// Relaxed rollout of every batch element of `plan` under fixed noise.
pub fn soft_rollout(g: &mut Graph, mdp: &MdpExpr, plan: &PlanExpr, cfg: &InteractionConfig, noise: &GumbelNoise) -> Result<SoftTrajectory> {
    let (s_n, a_n) = (mdp.topology.num_states(), mdp.topology.num_actions());
    cfg.validate(s_n)?;
    let b = g.shape(plan.policy)[0];
    if noise.horizon() != cfg.horizon || noise.actions[0].shape() != [b, a_n] {
        return Err(Error::ShapeMismatch {
            op: "soft_rollout",
            lhs: vec![cfg.horizon, b, a_n],
            rhs: vec![noise.horizon(), noise.actions[0].shape()[0], noise.actions[0].shape()[1]],
        });
    }

    let mut start = Tensor::zeros(&[b, s_n]);
    for row in 0..b {
        start.data_mut()[row * s_n + cfg.s_init] = 1.0;
    }
    let mut sigma = g.constant(start)?;
    let mut states = Vec::with_capacity(cfg.horizon);
    let mut actions = Vec::with_capacity(cfg.horizon);
    for t in 0..cfg.horizon {
        let row = g.reshape(sigma, &[b, 1, s_n])?;
        let mix = g.batch_matmul(row, plan.policy)?;
        let mix = g.reshape(mix, &[b, a_n])?;
        let mut action = gumbel_softmax(g, mix, 1.0 / cfg.lambda, &noise.actions[t], cfg.tau)?;
        if cfg.straight_through {
            action = straight_through(g, action)?;
        }
        states.push(sigma);
        actions.push(action);
        if t + 1 < cfg.horizon {
            let col = g.reshape(sigma, &[b, s_n, 1])?;
            let arow = g.reshape(action, &[b, 1, a_n])?;
            let joint = g.batch_matmul(col, arow)?;
            let joint = g.reshape(joint, &[b, s_n * a_n])?;
            let next = g.matmul(joint, mdp.transition)?;
            sigma = gumbel_softmax(g, next, 1.0, &noise.states[t], cfg.tau)?;
            if cfg.straight_through {
                sigma = straight_through(g, sigma)?;
            }
        }
    }
    Ok(SoftTrajectory { states, actions })
}

/// [`soft_rollout`] with fresh noise.
pub fn sample_trajectory_soft<R: Rng + ?Sized>(
    g: &mut Graph,
    mdp: &MdpExpr,
    plan: &PlanExpr,
    cfg: &InteractionConfig,
    rng: &mut R,
) -> Result<SoftTrajectory> {
    let b = g.shape(plan.policy)[0];
    let noise = GumbelNoise::draw(b, mdp.topology.num_states(), mdp.topology.num_actions(), cfg.horizon, rng);
    soft_rollout(g, mdp, plan, cfg, &noise)
}

/// Exact distribution of the state visited at each step, by matrix powering.
pub fn state_marginals(mdp: &Mdp, policy: &Policy, cfg: &InteractionConfig) -> Vec<Vec<f64>> {
    let s_n = mdp.num_states();
    let mut d = vec![0.0; s_n];
    d[cfg.s_init] = 1.0;
    let mut out = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let mut next = vec![0.0; s_n];
        for (s, &mass) in d.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (a, &pa) in tempered(policy.row(s), cfg.lambda).iter().enumerate() {
                for (sp, &p) in mdp.next_state_dist(s, a).iter().enumerate() {
                    next[sp] += mass * pa * p;
                }
            }
        }
        out.push(core::mem::replace(&mut d, next));
    }
    out
}

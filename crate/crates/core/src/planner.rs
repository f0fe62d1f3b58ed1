//! Distorted value iteration and the softmax policy.
//!
//! Players plan on the game with every reward passed through their
//! distortion, `V(s) <- max_a sum_s' T(s'|s,a) (v(R(s')) + gamma V(s'))`,
//! starting from `V = 0`, and act with `pi(.|s) = softmax_a Q(s, a)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::game::{Mdp, MdpExpr};
use crate::players::{distort, distort_batch, PlayerTrait};

/// Sweeps unrolled inside a design gradient step.
pub const TRAINING_SWEEPS: usize = 50;
/// Sweep cap and early-stop tolerance when planning without gradients.
pub const INFERENCE_SWEEPS: usize = 200;
pub const INFERENCE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction(pub Vec<f64>);

/// Row-major `[S, A]` action probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn from_rows(actions: usize, probs: Vec<f64>) -> Self {
        Self { actions, probs }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.actions..(s + 1) * self.actions]
    }

    pub fn num_states(&self) -> usize {
        self.probs.len() / self.actions
    }

    pub fn num_actions(&self) -> usize {
        self.actions
    }
}

pub fn distorted_rewards(mdp: &Mdp, player: &PlayerTrait) -> Vec<f64> {
    mdp.reward.iter().map(|&r| distort(r, player)).collect()
}

/// `Q[s * A + a]` for a value function, using already distorted rewards.
pub fn q_from_values(mdp: &Mdp, perceived: &[f64], values: &[f64]) -> Vec<f64> {
    let target: Vec<f64> = perceived
        .iter()
        .zip(values)
        .map(|(r, v)| r + mdp.gamma * v)
        .collect();
    (0..mdp.num_states() * mdp.num_actions())
        .map(|row| {
            mdp.transition
                .row(row)
                .iter()
                .zip(&target)
                .map(|(p, w)| p * w)
                .sum()
        })
        .collect()
}

fn sweep(mdp: &Mdp, perceived: &[f64], values: &[f64]) -> Vec<f64> {
    let a_n = mdp.num_actions();
    q_from_values(mdp, perceived, values)
        .chunks(a_n)
        .map(|q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Exactly `iterations` sweeps from `V = 0`.
pub fn value_iteration(mdp: &Mdp, player: &PlayerTrait, iterations: usize) -> Result<ValueFunction> {
    value_iteration_until(mdp, player, iterations, 0.0)
}

/// Sweeps until the sup-norm change drops below `tol` or `max_sweeps` is reached.
pub fn value_iteration_until(mdp: &Mdp, player: &PlayerTrait, max_sweeps: usize, tol: f64) -> Result<ValueFunction> {
    if max_sweeps == 0 {
        return Err(Error::InvalidConfig("value iteration needs at least one sweep".into()));
    }
    let perceived = distorted_rewards(mdp, player);
    let mut values = vec![0.0; mdp.num_states()];
    for _ in 0..max_sweeps {
        let next = sweep(mdp, &perceived, &values);
        let change = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: 0,
                op: "value_iteration",
            });
        }
        if change < tol {
            break;
        }
    }
    Ok(ValueFunction(values))
}

pub fn q_values(mdp: &Mdp, player: &PlayerTrait, values: &ValueFunction) -> Vec<f64> {
    q_from_values(mdp, &distorted_rewards(mdp, player), &values.0)
}

pub fn softmax_policy(mdp: &Mdp, player: &PlayerTrait, values: &ValueFunction) -> Policy {
    let a_n = mdp.num_actions();
    let mut probs = q_values(mdp, player, values);
    for row in probs.chunks_mut(a_n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for q in row.iter_mut() {
            *q = (*q - max).exp();
            total += *q;
        }
        row.iter_mut().for_each(|p| *p /= total);
    }
    Policy::from_rows(a_n, probs)
}

/// Inference-time planning: converged values and the induced policy.
pub fn plan(mdp: &Mdp, player: &PlayerTrait) -> Result<(ValueFunction, Policy)> {
    let values = value_iteration_until(mdp, player, INFERENCE_SWEEPS, INFERENCE_TOL)?;
    let policy = softmax_policy(mdp, player, &values);
    Ok((values, policy))
}

/// Per-trait values `[B, S]` and policies `[B, S, A]` recorded in a graph.
#[derive(Clone, Copy, Debug)]
pub struct PlanExpr {
    pub values: Var,
    pub policy: Var,
}

/// Unrolled value iteration for a batch of traits over one game.
pub fn plan_expr(g: &mut Graph, mdp: &MdpExpr, traits: &[PlayerTrait], sweeps: usize) -> Result<PlanExpr> {
    if sweeps == 0 {
        return Err(Error::InvalidConfig("value iteration needs at least one sweep".into()));
    }
    let (s_n, a_n, b) = (mdp.topology.num_states(), mdp.topology.num_actions(), traits.len());
    let perceived = distort_batch(g, mdp.reward, traits)?;
    let t_t = g.transpose(mdp.transition)?;

    let q_of = |g: &mut Graph, values: Option<Var>| -> Result<Var> {
        let target = match values {
            None => perceived,
            Some(v) => {
                let disc = g.scale(v, mdp.gamma)?;
                g.add(perceived, disc)?
            }
        };
        let q = g.matmul(target, t_t)?;
        g.reshape(q, &[b, s_n, a_n])
    };

    let mut values = None;
    for _ in 0..sweeps {
        let q = q_of(g, values)?;
        values = Some(g.max_last(q)?);
    }
    let q = q_of(g, values)?;
    let policy = g.softmax(q)?;
    Ok(PlanExpr {
        values: values.expect("at least one sweep"),
        policy,
    })
}

/// Concrete policy rows from a [`PlanExpr`] for batch element `b`.
pub fn policy_at(g: &Graph, plan: &PlanExpr, b: usize) -> Policy {
    let t: &Tensor = g.value(plan.policy);
    let (s_n, a_n) = (t.shape()[1], t.shape()[2]);
    let start = b * s_n * a_n;
    Policy::from_rows(a_n, t.data()[start..start + s_n * a_n].to_vec())
}

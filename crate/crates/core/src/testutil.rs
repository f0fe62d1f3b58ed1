use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::game::{GameParams, Mdp, Topology};
use crate::planner::{q_values, value_iteration, ValueFunction};
use crate::players::PlayerTrait;
use crate::rng::derive_rng;

/// Random rewards in [-4, 4] and stick logits in [-2, 2].
pub fn random_params(topology: &Topology, seed: u64) -> GameParams {
    let mut rng = derive_rng(seed, &[0x7e57]);
    let mut params = GameParams::zeros(topology);
    params.reward.iter_mut().for_each(|r| *r = rng.random_range(-4.0..4.0));
    params.stick_logit.iter_mut().for_each(|r| *r = rng.random_range(-2.0..2.0));
    params
}

/// Smallest nonzero gap between the best and runner-up Q value over the
/// first `sweeps` value-iteration iterates. Exact ties come from actions
/// sharing a target and survive perturbation.
pub fn min_q_gap(mdp: &Mdp, t: &PlayerTrait, sweeps: usize) -> f64 {
    let mut gap = f64::INFINITY;
    for k in 0..=sweeps {
        let v = if k == 0 {
            ValueFunction(vec![0.0; mdp.num_states()])
        } else {
            value_iteration(mdp, t, k).unwrap()
        };
        for row in q_values(mdp, t, &v).chunks(mdp.num_actions()) {
            let mut s: Vec<f64> = row.to_vec();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if s[0] > s[1] {
                gap = gap.min(s[0] - s[1]);
            }
        }
    }
    gap
}

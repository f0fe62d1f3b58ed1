//! Path and Grid game topologies and their learnable parameterization.
//!
//! States are numbered row-major from the bottom-left corner. Internally they
//! are 0-based; [`Topology::state_label`] gives the 1-based number used in
//! reports, so that in a 3x6 grid label 9 is the third cell of the middle row
//! and label 18 the top-right corner.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Path,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stay,
    MoveRight,
    MoveUp,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Stay => "stay",
            Action::MoveRight => "moveRight",
            Action::MoveUp => "moveUp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub rows: usize,
    pub cols: usize,
}

const PATH_ACTIONS: [Action; 2] = [Action::Stay, Action::MoveRight];
const GRID_ACTIONS: [Action; 3] = [Action::Stay, Action::MoveRight, Action::MoveUp];

impl Topology {
    pub fn new(kind: TopologyKind, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidTopology(format!("{rows}x{cols} has no states")));
        }
        if kind == TopologyKind::Path && rows != 1 {
            return Err(Error::InvalidTopology(format!("a path has one row, got {rows}")));
        }
        Ok(Self { kind, rows, cols })
    }

    /// The 1x6 path.
    pub fn path6() -> Self {
        Self {
            kind: TopologyKind::Path,
            rows: 1,
            cols: 6,
        }
    }

    /// The 3x6 grid.
    pub fn grid3x6() -> Self {
        Self {
            kind: TopologyKind::Grid,
            rows: 3,
            cols: 6,
        }
    }

    pub fn num_states(&self) -> usize {
        self.rows * self.cols
    }

    pub fn actions(&self) -> &'static [Action] {
        match self.kind {
            TopologyKind::Path => &PATH_ACTIONS,
            TopologyKind::Grid => &GRID_ACTIONS,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.actions().len()
    }

    /// 0-based `(row, col)` with row 0 at the bottom.
    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s / self.cols, s % self.cols)
    }

    pub fn state_at(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn state_label(&self, s: usize) -> usize {
        s + 1
    }

    /// Deterministic target of an action; moves off the board self-loop.
    pub fn neighbor(&self, s: usize, a: usize) -> usize {
        let (row, col) = self.coords(s);
        match self.actions()[a] {
            Action::Stay => s,
            Action::MoveRight if col + 1 < self.cols => s + 1,
            Action::MoveUp if row + 1 < self.rows => s + self.cols,
            Action::MoveRight | Action::MoveUp => s,
        }
    }

    /// Whether `moveRight` can advance from `s` (and is therefore subject to stickiness).
    pub fn can_move_right(&self, s: usize) -> bool {
        self.coords(s).1 + 1 < self.cols
    }

    fn move_right_index(&self) -> usize {
        1
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            TopologyKind::Path => "path",
            TopologyKind::Grid => "grid",
        };
        write!(f, "{kind}:{}x{}", self.rows, self.cols)
    }
}

impl core::str::FromStr for Topology {
    type Err = Error;

    /// Parses `path:1x6` or `grid:3x6`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTopology(format!("cannot parse topology {s:?}"));
        let (kind, dims) = s.split_once(':').ok_or_else(bad)?;
        let kind = match kind {
            "path" => TopologyKind::Path,
            "grid" => TopologyKind::Grid,
            _ => return Err(bad()),
        };
        let (r, c) = dims.split_once('x').ok_or_else(bad)?;
        let rows = r.parse().map_err(|_| bad())?;
        let cols = c.parse().map_err(|_| bad())?;
        Topology::new(kind, rows, cols)
    }
}

/// Learnable game parameters: one reward and one stickiness logit per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub reward: Vec<f64>,
    pub stick_logit: Vec<f64>,
}

impl GameParams {
    pub fn zeros(topology: &Topology) -> Self {
        let n = topology.num_states();
        Self {
            reward: vec![0.0; n],
            stick_logit: vec![0.0; n],
        }
    }

    /// Rewards ~ N(0, 0.01^2), stickiness logits 0.
    pub fn init<R: Rng + ?Sized>(topology: &Topology, rng: &mut R) -> Self {
        Self::init_scaled(topology, 0.01, 0.0, rng)
    }

    /// Rewards ~ N(0, std^2), every stickiness logit set to `stick_logit`.
    pub fn init_scaled<R: Rng + ?Sized>(topology: &Topology, std: f64, stick_logit: f64, rng: &mut R) -> Self {
        let n = topology.num_states();
        let reward = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            reward,
            stick_logit: vec![stick_logit; n],
        }
    }

    pub fn check(&self, topology: &Topology) -> Result<()> {
        let n = topology.num_states();
        if self.reward.len() != n || self.stick_logit.len() != n {
            return Err(Error::ShapeMismatch {
                op: "game_params",
                lhs: vec![self.reward.len(), self.stick_logit.len()],
                rhs: vec![n],
            });
        }
        Ok(())
    }

    /// Probability that `moveRight` stays put, per state.
    pub fn stickiness(&self) -> Vec<f64> {
        self.stick_logit.iter().map(|&l| logistic(l)).collect()
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A concrete game.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    pub topology: Topology,
    /// `T[s, a, s']`, stored as `[S * A, S]`.
    pub transition: Tensor,
    pub reward: Vec<f64>,
    pub gamma: f64,
}

impl Mdp {
    pub fn num_states(&self) -> usize {
        self.topology.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.transition.shape()[0] / self.num_states()
    }

    /// Row `T[s, a, .]`.
    pub fn next_state_dist(&self, s: usize, a: usize) -> &[f64] {
        self.transition.row(s * self.num_actions() + a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        let (s, a) = (self.num_states(), self.num_actions());
        if self.transition.shape() != [s * a, s] || self.reward.len() != s {
            return Err(Error::ShapeMismatch {
                op: "mdp",
                lhs: self.transition.shape().to_vec(),
                rhs: vec![s * a, s],
            });
        }
        for r in 0..s * a {
            let row = self.transition.row(r);
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("transition row {r} is not a distribution")));
            }
        }
        Ok(())
    }
}

/// Deterministic transitions `[S * A, S]`.
pub fn deterministic_transition(topology: &Topology) -> Tensor {
    let (s_n, a_n) = (topology.num_states(), topology.num_actions());
    let mut t = vec![0.0; s_n * a_n * s_n];
    for s in 0..s_n {
        for a in 0..a_n {
            t[(s * a_n + a) * s_n + topology.neighbor(s, a)] = 1.0;
        }
    }
    Tensor::new(vec![s_n * a_n, s_n], t).expect("consistent shape")
}

/// Builds the concrete game for a parameter vector.
pub fn realize_mdp(topology: &Topology, params: &GameParams, learn_transition: bool, gamma: f64) -> Result<Mdp> {
    params.check(topology)?;
    let mut transition = deterministic_transition(topology);
    if learn_transition {
        let (s_n, a_n) = (topology.num_states(), topology.num_actions());
        let right = topology.move_right_index();
        let data = transition.data_mut();
        for s in 0..s_n {
            if topology.can_move_right(s) {
                let alpha = logistic(params.stick_logit[s]);
                let row = (s * a_n + right) * s_n;
                data[row + s] = alpha;
                data[row + s + 1] = 1.0 - alpha;
            }
        }
    }
    let mdp = Mdp {
        topology: *topology,
        transition,
        reward: params.reward.clone(),
        gamma,
    };
    mdp.validate()?;
    Ok(mdp)
}

/// A game recorded in a [`Graph`], with gradients flowing back to its parameters.
#[derive(Clone, Copy, Debug)]
pub struct MdpExpr {
    pub topology: Topology,
    /// `[S]`
    pub reward: Var,
    /// `[S * A, S]`
    pub transition: Var,
    pub gamma: f64,
}

/// Differentiable counterpart of [`realize_mdp`].
///
/// With `stick_logit` present, `T = D + E * (M_stay - M_advance)` where `D`
/// is the deterministic table, `E[(s, a), .]` broadcasts `logistic(stick[s])`,
/// and the masks select the sticky `moveRight` entries of interior states.
pub fn realize_mdp_expr(g: &mut Graph, topology: &Topology, reward: Var, stick_logit: Option<Var>, gamma: f64) -> Result<MdpExpr> {
    let (s_n, a_n) = (topology.num_states(), topology.num_actions());
    if g.shape(reward) != [s_n] {
        return Err(Error::ShapeMismatch {
            op: "realize_mdp",
            lhs: g.shape(reward).to_vec(),
            rhs: vec![s_n],
        });
    }
    let base = g.constant(deterministic_transition(topology))?;
    let transition = match stick_logit {
        None => base,
        Some(stick) => {
            if g.shape(stick) != [s_n] {
                return Err(Error::ShapeMismatch {
                    op: "realize_mdp",
                    lhs: g.shape(stick).to_vec(),
                    rhs: vec![s_n],
                });
            }
            let right = topology.move_right_index();
            let mut select = vec![0.0; s_n * a_n * s_n];
            let mut delta = vec![0.0; s_n * a_n * s_n];
            for s in 0..s_n {
                for a in 0..a_n {
                    select[(s * a_n + a) * s_n + s] = 1.0;
                }
                if topology.can_move_right(s) {
                    let row = (s * a_n + right) * s_n;
                    delta[row + s] = 1.0;
                    delta[row + s + 1] = -1.0;
                }
            }
            let alpha = g.sigmoid(stick)?;
            let alpha = g.reshape(alpha, &[s_n, 1])?;
            let select = g.constant(Tensor::new(vec![s_n * a_n, s_n], select)?)?;
            let per_row = g.matmul(select, alpha)?;
            let ones = g.constant(Tensor::full(&[1, s_n], 1.0))?;
            let spread = g.matmul(per_row, ones)?;
            let delta = g.constant(Tensor::new(vec![s_n * a_n, s_n], delta)?)?;
            let sticky = g.mul(spread, delta)?;
            g.add(base, sticky)?
        }
    };
    Ok(MdpExpr {
        topology: *topology,
        reward,
        transition,
        gamma,
    })
}

/// Hand-designed baseline rewards: -3 at state 3 (path) or 9 (grid) and +5 at
/// the last state, zero elsewhere; deterministic transitions.
pub fn baseline_params(topology: &Topology) -> Result<GameParams> {
    let (neg, pos) = match (topology.kind, topology.rows, topology.cols) {
        (TopologyKind::Path, 1, 6) => (3, 6),
        (TopologyKind::Grid, 3, 6) => (9, 18),
        _ => return Err(Error::Unsupported("baselines exist for path:1x6 and grid:3x6 only")),
    };
    let mut params = GameParams::zeros(topology);
    params.reward[neg - 1] = -3.0;
    params.reward[pos - 1] = 5.0;
    Ok(params)
}

pub fn baseline_game(topology: &Topology, gamma: f64) -> Result<Mdp> {
    realize_mdp(topology, &baseline_params(topology)?, false, gamma)
}

/// Rewards i.i.d. uniform on `[-5, 5]`, deterministic transitions.
pub fn random_game<R: Rng + ?Sized>(topology: &Topology, gamma: f64, rng: &mut R) -> Result<Mdp> {
    let mut params = GameParams::zeros(topology);
    for r in params.reward.iter_mut() {
        *r = -5.0 + 10.0 * rng.random::<f64>();
    }
    realize_mdp(topology, &params, false, gamma)
}

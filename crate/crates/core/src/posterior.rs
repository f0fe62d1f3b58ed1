//! Recurrent posterior over traits, and its categorical sibling.
//!
//! Each step's state and action encodings are concatenated, embedded
//! linearly, and fed to a gated recurrent cell whose hidden state starts at
//! zero. The final hidden state drives the head: either two Gaussian means
//! with global log-variances, or `K` class logits.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::interaction::Trajectory;
use crate::players::PlayerTrait;

pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// Means over `(xi_pos, xi_neg)` plus two free log-variances.
    Gaussian,
    Categorical { classes: usize },
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Gaussian => 2,
            Head::Categorical { classes } => classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorNet {
    pub head: Head,
    pub num_states: usize,
    pub num_actions: usize,
    pub hidden: usize,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub update_w: Tensor,
    pub update_u: Tensor,
    pub update_b: Tensor,
    pub reset_w: Tensor,
    pub reset_u: Tensor,
    pub reset_b: Tensor,
    pub cand_w: Tensor,
    pub cand_u: Tensor,
    pub cand_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
    /// Present for the Gaussian head only.
    pub log_var: Option<Tensor>,
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let a = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-a..a)).collect()).expect("shape")
}

impl PosteriorNet {
    pub fn input_width(&self) -> usize {
        self.num_states + self.num_actions
    }

    /// Weights drawn from `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, log-variances at zero.
    pub fn init<R: Rng + ?Sized>(head: Head, num_states: usize, num_actions: usize, hidden: usize, rng: &mut R) -> Self {
        let input = num_states + num_actions;
        let out = head.outputs();
        Self {
            head,
            num_states,
            num_actions,
            hidden,
            embed_w: uniform(&[input, hidden], input, rng),
            embed_b: uniform(&[hidden], input, rng),
            update_w: uniform(&[hidden, hidden], hidden, rng),
            update_u: uniform(&[hidden, hidden], hidden, rng),
            update_b: uniform(&[hidden], hidden, rng),
            reset_w: uniform(&[hidden, hidden], hidden, rng),
            reset_u: uniform(&[hidden, hidden], hidden, rng),
            reset_b: uniform(&[hidden], hidden, rng),
            cand_w: uniform(&[hidden, hidden], hidden, rng),
            cand_u: uniform(&[hidden, hidden], hidden, rng),
            cand_b: uniform(&[hidden], hidden, rng),
            out_w: uniform(&[hidden, out], hidden, rng),
            out_b: uniform(&[out], hidden, rng),
            log_var: matches!(head, Head::Gaussian).then(|| Tensor::zeros(&[2])),
        }
    }

    pub fn zeros(head: Head, num_states: usize, num_actions: usize, hidden: usize) -> Self {
        let mut net = Self::init(head, num_states, num_actions, hidden, &mut crate::rng::derive_rng(0, &[]));
        for t in net.params_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        net
    }

    /// Checks every tensor against the shapes implied by the head and sizes.
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 || self.hidden == 0 || self.head.outputs() == 0 {
            return Err(Error::InvalidConfig("posterior sizes must be positive".into()));
        }
        let want = Self::zeros(self.head, self.num_states, self.num_actions, self.hidden);
        if self.log_var.is_some() != want.log_var.is_some() {
            return Err(Error::InvalidConfig("log-variance must be present exactly for the Gaussian head".into()));
        }
        for (have, want) in self.params().into_iter().zip(want.params()) {
            let n: usize = have.shape().iter().product();
            if have.shape() != want.shape() || have.data().len() != n {
                return Err(Error::ShapeMismatch {
                    op: "posterior",
                    lhs: have.shape().to_vec(),
                    rhs: want.shape().to_vec(),
                });
            }
            if have.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig("posterior holds a non-finite weight".into()));
            }
        }
        Ok(())
    }

    /// Every parameter tensor in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![
            &self.embed_w,
            &self.embed_b,
            &self.update_w,
            &self.update_u,
            &self.update_b,
            &self.reset_w,
            &self.reset_u,
            &self.reset_b,
            &self.cand_w,
            &self.cand_u,
            &self.cand_b,
            &self.out_w,
            &self.out_b,
        ];
        out.extend(self.log_var.as_ref());
        out
    }

    /// Same order as [`PosteriorNet::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.embed_w,
            &mut self.embed_b,
            &mut self.update_w,
            &mut self.update_u,
            &mut self.update_b,
            &mut self.reset_w,
            &mut self.reset_u,
            &mut self.reset_b,
            &mut self.cand_w,
            &mut self.cand_u,
            &mut self.cand_b,
            &mut self.out_w,
            &mut self.out_b,
        ];
        out.extend(self.log_var.as_mut());
        out
    }

    /// Records the parameters in `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundNet> {
        let mut vars = Vec::new();
        for t in self.params() {
            vars.push(if trainable { g.param(t.clone())? } else { g.constant(t.clone())? });
        }
        Ok(BoundNet {
            head: self.head,
            width: self.input_width(),
            vars,
        })
    }

    /// Outputs for a batch of hard trajectories.
    pub fn encode(&self, trajectories: &[Trajectory]) -> Result<Vec<PosteriorOutput>> {
        let mut g = Graph::new();
        let net = self.bind(&mut g, false)?;
        let steps = one_hot_steps(trajectories, self.num_states, self.num_actions)?
            .into_iter()
            .map(|t| g.constant(t))
            .collect::<Result<Vec<_>>>()?;
        let h = net.encode(&mut g, &steps)?;
        net.outputs(&mut g, h)
    }
}

/// A [`PosteriorNet`] recorded in a graph.
#[derive(Clone, Debug)]
pub struct BoundNet {
    head: Head,
    width: usize,
    vars: Vec<Var>,
}

/// Mean `[B, 2]` and log-variance `[2]` of the Gaussian head.
#[derive(Clone, Copy, Debug)]
pub struct GaussianExpr {
    pub mean: Var,
    pub log_var: Var,
}

impl BoundNet {
    /// Parameter leaves in [`PosteriorNet::params`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn linear(&self, g: &mut Graph, x: Var, w: usize, b: usize) -> Result<Var> {
        let xw = g.matmul(x, self.vars[w])?;
        g.add(xw, self.vars[b])
    }

    fn gate(&self, g: &mut Graph, x: Var, h: Var, base: usize) -> Result<Var> {
        let xw = g.matmul(x, self.vars[base])?;
        let hu = g.matmul(h, self.vars[base + 1])?;
        let pre = g.add(xw, hu)?;
        g.add(pre, self.vars[base + 2])
    }

    /// Final hidden state `[B, H]` after consuming per-step inputs `[B, S + A]`.
    pub fn encode(&self, g: &mut Graph, steps: &[Var]) -> Result<Var> {
        let first = *steps.first().ok_or(Error::InvalidConfig("empty trajectory".into()))?;
        let batch = g.shape(first)[0];
        let hidden = g.shape(self.vars[2])[0];
        let mut h = g.constant(Tensor::zeros(&[batch, hidden]))?;
        for &x in steps {
            if g.shape(x) != [batch, self.width] {
                return Err(Error::ShapeMismatch {
                    op: "encode",
                    lhs: vec![batch, self.width],
                    rhs: g.shape(x).to_vec(),
                });
            }
            let e = self.linear(g, x, 0, 1)?;
            let z_pre = self.gate(g, e, h, 2)?;
            let z = g.sigmoid(z_pre)?;
            let r_pre = self.gate(g, e, h, 5)?;
            let r = g.sigmoid(r_pre)?;
            let rh = g.mul(r, h)?;
            let n_pre = self.gate(g, e, rh, 8)?;
            let n = g.tanh(n_pre)?;
            // h' = (1 - z) n + z h = n + z (h - n)
            let diff = g.sub(h, n)?;
            let keep = g.mul(z, diff)?;
            h = g.add(n, keep)?;
        }
        Ok(h)
    }

    /// Head output: means `[B, 2]` or logits `[B, K]`.
    pub fn head_output(&self, g: &mut Graph, hidden: Var) -> Result<Var> {
        self.linear(g, hidden, 11, 12)
    }

    pub fn gaussian(&self, g: &mut Graph, hidden: Var) -> Result<GaussianExpr> {
        if self.head != Head::Gaussian {
            return Err(Error::Unsupported("gaussian output from a categorical head"));
        }
        Ok(GaussianExpr {
            mean: self.head_output(g, hidden)?,
            log_var: self.vars[13],
        })
    }

    /// Per-row Gaussian log density `[B]` of the traits `z`.
    pub fn gaussian_log_density(&self, g: &mut Graph, out: &GaussianExpr, z: &[PlayerTrait]) -> Result<Var> {
        let zs = Tensor::new(vec![z.len(), 2], z.iter().flat_map(|t| t.as_pair()).collect())?;
        let zc = g.constant(zs)?;
        let diff = g.sub(zc, out.mean)?;
        let sq = g.mul(diff, diff)?;
        let neg_lv = g.neg(out.log_var)?;
        let precision = g.exp(neg_lv)?;
        let mahal = g.mul(sq, precision)?;
        let per_dim = g.add(mahal, out.log_var)?;
        let total = g.sum_last(per_dim)?;
        let shifted = g.offset(total, 2.0 * (2.0 * PI).ln())?;
        g.scale(shifted, -0.5)
    }

    /// Per-row log probability `[B]` of `labels` under the categorical head.
    pub fn categorical_log_prob(&self, g: &mut Graph, hidden: Var, labels: &[usize]) -> Result<Var> {
        let Head::Categorical { classes } = self.head else {
            return Err(Error::Unsupported("categorical output from a gaussian head"));
        };
        let mut pick = Tensor::zeros(&[labels.len(), classes]);
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            pick.data_mut()[i * classes + label] = 1.0;
        }
        let logits = self.head_output(g, hidden)?;
        let logp = g.log_softmax(logits)?;
        let mask = g.constant(pick)?;
        let chosen = g.mul(logp, mask)?;
        g.sum_last(chosen)
    }

    /// Concrete per-row outputs.
    pub fn outputs(&self, g: &mut Graph, hidden: Var) -> Result<Vec<PosteriorOutput>> {
        match self.head {
            Head::Gaussian => {
                let out = self.gaussian(g, hidden)?;
                let lv = g.value(out.log_var).data();
                let var = [lv[0].exp(), lv[1].exp()];
                Ok(g.value(out.mean)
                    .data()
                    .chunks(2)
                    .map(|m| PosteriorOutput::Gaussian(GaussianOutput { mean: [m[0], m[1]], var }))
                    .collect())
            }
            Head::Categorical { classes } => {
                let logits = self.head_output(g, hidden)?;
                let probs = g.softmax(logits)?;
                Ok(g.value(probs)
                    .data()
                    .chunks(classes)
                    .map(|p| PosteriorOutput::Categorical(CategoricalOutput { probs: p.to_vec() }))
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianOutput {
    pub mean: [f64; 2],
    pub var: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalOutput {
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PosteriorOutput {
    Gaussian(GaussianOutput),
    Categorical(CategoricalOutput),
}

impl PosteriorOutput {
    pub fn as_gaussian(&self) -> Option<&GaussianOutput> {
        match self {
            PosteriorOutput::Gaussian(g) => Some(g),
            PosteriorOutput::Categorical(_) => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&CategoricalOutput> {
        match self {
            PosteriorOutput::Categorical(c) => Some(c),
            PosteriorOutput::Gaussian(_) => None,
        }
    }
}

/// Sum over both trait coordinates of the univariate Gaussian log density.
pub fn gaussian_log_density(out: &GaussianOutput, z: &PlayerTrait) -> f64 {
    z.as_pair()
        .iter()
        .zip(out.mean.iter().zip(&out.var))
        .map(|(x, (m, v))| -0.5 * ((2.0 * PI * v).ln() + (x - m) * (x - m) / v))
        .sum()
}

pub fn categorical_log_prob(out: &CategoricalOutput, label: usize) -> Result<f64> {
    out.probs
        .get(label)
        .map(|p| p.ln())
        .ok_or(Error::LabelOutOfRange {
            label,
            classes: out.probs.len(),
        })
}

/// Index of the most probable class; ties go to the lowest index.
pub fn predicted_class(out: &CategoricalOutput) -> usize {
    out.probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0
}

/// One `[B, S + A]` one-hot tensor per step.
pub fn one_hot_steps(trajectories: &[Trajectory], num_states: usize, num_actions: usize) -> Result<Vec<Tensor>> {
    let horizon = trajectories.first().map_or(0, Trajectory::len);
    let width = num_states + num_actions;
    let b = trajectories.len();
    let mut steps = vec![Tensor::zeros(&[b, width]); horizon];
    for (i, traj) in trajectories.iter().enumerate() {
        if traj.len() != horizon || traj.actions.len() != horizon {
            return Err(Error::ShapeMismatch {
                op: "one_hot_steps",
                lhs: vec![horizon],
                rhs: vec![traj.states.len(), traj.actions.len()],
            });
        }
        for (t, (&s, &a)) in traj.states.iter().zip(&traj.actions).enumerate() {
            if s >= num_states || a >= num_actions {
                return Err(Error::ShapeMismatch {
                    op: "one_hot_steps",
                    lhs: vec![num_states, num_actions],
                    rhs: vec![s, a],
                });
            }
            let row = &mut steps[t].data_mut()[i * width..(i + 1) * width];
            row[s] = 1.0;
            row[num_states + a] = 1.0;
        }
    }
    Ok(steps)
}

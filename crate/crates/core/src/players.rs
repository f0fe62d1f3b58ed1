//! Prospect-theory player model.
//!
//! A player is described by the exponents it applies to gains and losses
//! relative to a reference point. Rewards are perceived through the
//! piecewise power distortion implemented by [`distort`].

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Exponents are clamped into this range when drawn from a Gaussian mixture.
pub const MIXTURE_EXPONENT_RANGE: (f64, f64) = (0.05, 3.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerTrait {
    pub xi_pos: f64,
    pub xi_neg: f64,
    #[serde(default)]
    pub xi_ref: f64,
}

impl PlayerTrait {
    pub fn new(xi_pos: f64, xi_neg: f64, xi_ref: f64) -> Result<Self> {
        if !(xi_pos > 0.0 && xi_pos.is_finite()) {
            return Err(Error::InvalidTrait("xi_pos must be positive and finite"));
        }
        if !(xi_neg > 0.0 && xi_neg.is_finite()) {
            return Err(Error::InvalidTrait("xi_neg must be positive and finite"));
        }
        if !xi_ref.is_finite() {
            return Err(Error::InvalidTrait("xi_ref must be finite"));
        }
        Ok(Self { xi_pos, xi_neg, xi_ref })
    }

    /// Trait with the reference point at zero.
    pub fn exponents(xi_pos: f64, xi_neg: f64) -> Result<Self> {
        Self::new(xi_pos, xi_neg, 0.0)
    }

    /// The undistorted player.
    pub fn identity() -> Self {
        Self {
            xi_pos: 1.0,
            xi_neg: 1.0,
            xi_ref: 0.0,
        }
    }

    pub fn distort(&self, r: f64) -> f64 {
        distort(r, self)
    }

    pub fn as_pair(&self) -> [f64; 2] {
        [self.xi_pos, self.xi_neg]
    }
}

/// Perceived reward: `(r - ref)^pos` above the reference, `-(ref - r)^neg` below.
pub fn distort(r: f64, t: &PlayerTrait) -> f64 {
    if r >= t.xi_ref {
        (r - t.xi_ref).powf(t.xi_pos)
    } else {
        -(t.xi_ref - r).powf(t.xi_neg)
    }
}

/// Distorts a per-state reward vector `[S]` once per trait, giving `[B, S]`.
///
/// Signs are routed with constant masks so the power primitive only ever sees
/// positive bases. At `r == ref` the derivative is the right derivative of the
/// gain branch when `xi_pos >= 1` and zero otherwise.
pub fn distort_batch(g: &mut Graph, reward: Var, traits: &[PlayerTrait]) -> Result<Var> {
    let states = match g.shape(reward) {
        [s] => *s,
        other => {
            return Err(Error::ShapeMismatch {
                op: "distort",
                lhs: other.to_vec(),
                rhs: vec![traits.len()],
            })
        }
    };
    let b = traits.len();
    let shape = [b, states];
    let r = g.value(reward).data().to_vec();

    let n = b * states;
    let mut neg_ref = vec![0.0; n];
    let mut gain = vec![0.0; n];
    let mut not_gain = vec![0.0; n];
    let mut loss_neg = vec![0.0; n];
    let mut not_loss = vec![0.0; n];
    let mut loss = vec![0.0; n];
    let mut pos_exp = vec![0.0; n];
    let mut neg_exp = vec![0.0; n];
    let mut at_ref = vec![0.0; n];
    for (i, t) in traits.iter().enumerate() {
        for (s, &rs) in r.iter().enumerate() {
            let k = i * states + s;
            neg_ref[k] = -t.xi_ref;
            let (is_gain, is_loss) = (rs > t.xi_ref, rs < t.xi_ref);
            gain[k] = f64::from(u8::from(is_gain));
            not_gain[k] = 1.0 - gain[k];
            loss[k] = f64::from(u8::from(is_loss));
            loss_neg[k] = -loss[k];
            not_loss[k] = 1.0 - loss[k];
            pos_exp[k] = t.xi_pos;
            neg_exp[k] = t.xi_neg;
            if !is_gain && !is_loss && t.xi_pos == 1.0 {
                at_ref[k] = 1.0;
            }
        }
    }
    let mk = |data: Vec<f64>| Tensor::new(shape.to_vec(), data);

    let neg_ref = g.constant(mk(neg_ref)?)?;
    let d = g.add(neg_ref, reward)?;

    let gain_c = g.constant(mk(gain)?)?;
    let not_gain_c = g.constant(mk(not_gain)?)?;
    let gain_base = g.mul(d, gain_c)?;
    let gain_base = g.add(gain_base, not_gain_c)?;
    let gain_pow = g.pow(gain_base, &mk(pos_exp)?)?;
    let gain_term = g.mul(gain_pow, gain_c)?;

    let loss_neg_c = g.constant(mk(loss_neg)?)?;
    let not_loss_c = g.constant(mk(not_loss)?)?;
    let loss_c = g.constant(mk(loss)?)?;
    let loss_base = g.mul(d, loss_neg_c)?;
    let loss_base = g.add(loss_base, not_loss_c)?;
    let loss_pow = g.pow(loss_base, &mk(neg_exp)?)?;
    let loss_term = g.mul(loss_pow, loss_c)?;

    let mut out = g.sub(gain_term, loss_term)?;
    if at_ref.iter().any(|&v| v != 0.0) {
        let lin = g.constant(mk(at_ref)?)?;
        let lin = g.mul(d, lin)?;
        out = g.add(out, lin)?;
    }
    Ok(out)
}

/// Single-trait version of [`distort_batch`], returning `[S]`.
pub fn distort_vector(g: &mut Graph, reward: Var, t: &PlayerTrait) -> Result<Var> {
    let out = distort_batch(g, reward, core::slice::from_ref(t))?;
    let s = g.shape(reward)[0];
    g.reshape(out, &[s])
}

/// The three canonical player types used for classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlayerType {
    LossNeutral,
    GainSeeking,
    LossAverse,
}

impl PlayerType {
    pub const ALL: [PlayerType; 3] = [Self::LossNeutral, Self::GainSeeking, Self::LossAverse];

    pub fn name(self) -> &'static str {
        match self {
            Self::LossNeutral => "Loss-Neutral",
            Self::GainSeeking => "Gain-Seeking",
            Self::LossAverse => "Loss-Averse",
        }
    }

    pub fn center(self) -> PlayerTrait {
        let (p, n) = match self {
            Self::LossNeutral => (1.0, 1.0),
            Self::GainSeeking => (1.2, 0.7),
            Self::LossAverse => (0.7, 1.2),
        };
        PlayerTrait {
            xi_pos: p,
            xi_neg: n,
            xi_ref: 0.0,
        }
    }
}

/// Equal-weight Gaussian mixture over `(xi_pos, xi_neg)` with isotropic covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSpec {
    pub means: Vec<[f64; 2]>,
    /// Scalar `c` of the shared covariance `c * I`.
    pub variance: f64,
}

impl MixtureSpec {
    /// Loss-Neutral, Gain-Seeking and Loss-Averse with covariance `0.1 * I`.
    pub fn standard() -> Self {
        Self {
            means: PlayerType::ALL.iter().map(|t| t.center().as_pair()).collect(),
            variance: 0.1,
        }
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        let k = self.means.len();
        vec![1.0 / k as f64; k]
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::InvalidConfig("mixture needs at least one component".to_string()));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidConfig("mixture variance must be positive".to_string()));
        }
        Ok(())
    }
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self::standard()
    }
}

/// Distribution over player traits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    /// Uniform over `[0.5, 1.5]^2`.
    FullUniform,
    /// Uniform over `[0.5, 1] x [1, 1.5]` union `[1, 1.5] x [0.5, 1]`.
    DiagonalUniform,
    /// Uniform over an arbitrary axis-aligned box.
    Box { pos: [f64; 2], neg: [f64; 2] },
    Mixture(MixtureSpec),
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::FullUniform | PriorSpec::DiagonalUniform => Ok(()),
            PriorSpec::Box { pos, neg } => {
                if pos[0] >= 0.0 && neg[0] >= 0.0 && pos[1] > pos[0] && neg[1] > neg[0] {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(
                        "prior box must have non-negative, non-empty ranges".to_string(),
                    ))
                }
            }
            PriorSpec::Mixture(m) => m.validate(),
        }
    }
}

/// Trait drawn from a mixture together with its component index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrait {
    pub player: PlayerTrait,
    pub label: usize,
}

fn uniform_pair<R: Rng + ?Sized>(rng: &mut R, pos: [f64; 2], neg: [f64; 2]) -> PlayerTrait {
    // (lo, hi], so a zero lower bound never yields a zero exponent
    let p = pos[1] - (pos[1] - pos[0]) * rng.random::<f64>();
    let n = neg[1] - (neg[1] - neg[0]) * rng.random::<f64>();
    PlayerTrait {
        xi_pos: p,
        xi_neg: n,
        xi_ref: 0.0,
    }
}

/// Draws `n` i.i.d. traits (reference point fixed at zero).
pub fn sample_prior<R: Rng + ?Sized>(spec: &PriorSpec, n: usize, rng: &mut R) -> Vec<PlayerTrait> {
    match spec {
        PriorSpec::FullUniform => (0..n).map(|_| uniform_pair(rng, [0.5, 1.5], [0.5, 1.5])).collect(),
        PriorSpec::DiagonalUniform => (0..n)
            .map(|_| {
                if rng.random::<bool>() {
                    uniform_pair(rng, [0.5, 1.0], [1.0, 1.5])
                } else {
                    uniform_pair(rng, [1.0, 1.5], [0.5, 1.0])
                }
            })
            .collect(),
        PriorSpec::Box { pos, neg } => (0..n).map(|_| uniform_pair(rng, *pos, *neg)).collect(),
        PriorSpec::Mixture(m) => sample_mixture(m, n, rng).into_iter().map(|l| l.player).collect(),
    }
}

/// Draws `n` labelled traits: a uniform component, then its Gaussian.
/// Exponents are clamped into [`MIXTURE_EXPONENT_RANGE`].
pub fn sample_mixture<R: Rng + ?Sized>(spec: &MixtureSpec, n: usize, rng: &mut R) -> Vec<LabeledTrait> {
    let sd = spec.variance.sqrt();
    let (lo, hi) = MIXTURE_EXPONENT_RANGE;
    (0..n)
        .map(|_| {
            let label = rng.random_range(0..spec.means.len());
            let [mp, mn] = spec.means[label];
            let zp: f64 = rng.sample(StandardNormal);
            let zn: f64 = rng.sample(StandardNormal);
            LabeledTrait {
                player: PlayerTrait {
                    xi_pos: (mp + sd * zp).clamp(lo, hi),
                    xi_neg: (mn + sd * zn).clamp(lo, hi),
                    xi_ref: 0.0,
                },
                label,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::check_gradient;
    use crate::rng::derive_rng;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Uniform};

    fn t(p: f64, n: f64, r: f64) -> PlayerTrait {
        PlayerTrait::new(p, n, r).unwrap()
    }

    #[test]
    fn distortion_examples() {
        assert_eq!(distort(1.0, &t(1.0, 1.0, 0.0)), 1.0);
        assert_eq!(distort(0.5, &t(2.0, 1.0, 0.0)), 0.25);
        // -exp(0.7 ln 2)
        let want = -(0.7 * core::f64::consts::LN_2).exp();
        let got = distort(-2.0, &t(1.2, 0.7, 0.0));
        assert!((got - want).abs() < 1e-12);
        assert!((got + 1.62450).abs() < 1e-5);
        assert_eq!(distort(1.0, &t(1.3, 0.8, 1.0)), 0.0);
    }

    #[test]
    fn invalid_traits_are_rejected() {
        assert!(PlayerTrait::new(0.0, 1.0, 0.0).is_err());
        assert!(PlayerTrait::new(1.0, -0.2, 0.0).is_err());
        assert!(PlayerTrait::new(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn vector_distortion_examples() {
        let mut g = Graph::new();
        let r = g.param(Tensor::vector(vec![0.0, 1.0, -1.0])).unwrap();
        let d = distort_vector(&mut g, r, &PlayerTrait::identity()).unwrap();
        assert_eq!(g.value(d).data(), &[0.0, 1.0, -1.0]);

        let r4 = g.param(Tensor::vector(vec![4.0])).unwrap();
        let d4 = distort_vector(&mut g, r4, &t(0.5, 1.0, 0.0)).unwrap();
        assert!((g.value(d4).data()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn vector_distortion_gradient_at_one() {
        let mut g = Graph::new();
        let r = g.param(Tensor::vector(vec![1.0])).unwrap();
        let d = distort_vector(&mut g, r, &t(1.2, 0.7, 0.0)).unwrap();
        let s = g.sum(d).unwrap();
        let grad = g.gradient(s, &[r]).unwrap();
        assert!((grad[0].data()[0] - 1.2).abs() < 1e-12);
        let check = check_gradient(&mut g, s, &[r], 1e-4).unwrap();
        assert!(check.max_rel_error < 1e-4);
    }

    #[test]
    fn gradient_at_reference_point() {
        for (p, want) in [(1.0, 1.0), (1.4, 0.0), (0.6, 0.0)] {
            let mut g = Graph::new();
            let r = g.param(Tensor::vector(vec![0.0])).unwrap();
            let d = distort_vector(&mut g, r, &t(p, 1.0, 0.0)).unwrap();
            let s = g.sum(d).unwrap();
            assert_eq!(g.scalar(s), 0.0);
            assert_eq!(g.gradient(s, &[r]).unwrap()[0].data()[0], want);
        }
    }

    #[test]
    fn batch_rows_follow_their_trait() {
        let traits = [t(1.0, 1.0, 0.0), t(2.0, 0.5, 0.0), t(1.5, 1.5, 0.5)];
        let rewards = [-3.0, -0.2, 0.0, 0.7, 5.0];
        let mut g = Graph::new();
        let r = g.param(Tensor::vector(rewards.to_vec())).unwrap();
        let d = distort_batch(&mut g, r, &traits).unwrap();
        assert_eq!(g.shape(d), &[3, 5]);
        for (i, tr) in traits.iter().enumerate() {
            for (s, &rs) in rewards.iter().enumerate() {
                let got = g.value(d).data()[i * 5 + s];
                assert!((got - distort(rs, tr)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standard_mixture_matches_player_types() {
        let m = MixtureSpec::standard();
        assert_eq!(m.means, vec![[1.0, 1.0], [1.2, 0.7], [0.7, 1.2]]);
        assert_eq!(m.variance, 0.1);
        assert_eq!(m.weights(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn uniform_priors_stay_in_support() {
        let mut rng = derive_rng(7, &[0]);
        assert!(sample_prior(&PriorSpec::FullUniform, 0, &mut rng).is_empty());
        for z in sample_prior(&PriorSpec::FullUniform, 5000, &mut rng) {
            assert!((0.5..=1.5).contains(&z.xi_pos) && (0.5..=1.5).contains(&z.xi_neg));
            assert_eq!(z.xi_ref, 0.0);
        }
        let diag = sample_prior(&PriorSpec::DiagonalUniform, 5000, &mut rng);
        let mut upper = 0;
        for z in &diag {
            let a = (0.5..=1.0).contains(&z.xi_pos) && (1.0..=1.5).contains(&z.xi_neg);
            let b = (1.0..=1.5).contains(&z.xi_pos) && (0.5..=1.0).contains(&z.xi_neg);
            assert!(a || b, "{z:?}");
            upper += usize::from(a);
        }
        // each square with probability 1/2: 4 sigma band at n = 5000
        assert!((upper as f64 - 2500.0).abs() < 4.0 * 35.4);
    }

    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn full_uniform_passes_kolmogorov_smirnov() {
        let mut rng = derive_rng(11, &[1]);
        let zs = sample_prior(&PriorSpec::FullUniform, 10_000, &mut rng);
        let u = Uniform::new(0.5, 1.5).unwrap();
        // asymptotic critical value at alpha = 0.001: 1.9495 / sqrt(n)
        let crit = 1.9495 / 100.0;
        let dp = ks_statistic(zs.iter().map(|z| z.xi_pos).collect(), |x| u.cdf(x));
        let dn = ks_statistic(zs.iter().map(|z| z.xi_neg).collect(), |x| u.cdf(x));
        assert!(dp < crit && dn < crit, "{dp} {dn}");
    }

    #[test]
    fn mixture_component_means_concentrate() {
        let spec = MixtureSpec::standard();
        let mut rng = derive_rng(3, &[2]);
        let draws = sample_mixture(&spec, 30_000, &mut rng);
        let comp: Vec<_> = draws.iter().filter(|d| d.label == 1).collect();
        assert!(comp.len() > 9_000);
        let n = comp.len() as f64;
        let mp = comp.iter().map(|d| d.player.xi_pos).sum::<f64>() / n;
        let mn = comp.iter().map(|d| d.player.xi_neg).sum::<f64>() / n;
        assert!((mp - 1.2).abs() < 0.02 && (mn - 0.7).abs() < 0.02, "{mp} {mn}");
        for d in &draws {
            assert!(d.label < 3);
            assert!(d.player.xi_pos >= 0.05 && d.player.xi_pos <= 3.0);
        }
    }

    proptest! {
        #[test]
        fn identity_trait_is_identity(r in -100.0f64..100.0) {
            prop_assert_eq!(distort(r, &PlayerTrait::identity()), r);
        }

        #[test]
        fn distortion_is_monotone_and_sign_preserving(
            p in 0.05f64..3.0, n in 0.05f64..3.0, rf in -2.0f64..2.0,
        ) {
            let tr = t(p, n, rf);
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=400 {
                let r = -10.0 + 0.05 * i as f64;
                let v = distort(r, &tr);
                prop_assert!(v >= prev);
                prev = v;
                let sign = |x: f64| if x > 0.0 { 1 } else if x < 0.0 { -1 } else { 0 };
                prop_assert_eq!(sign(v), sign(r - rf));
            }
        }

        #[test]
        fn distortion_gradients_match_finite_differences(
            rewards in prop::collection::vec(-5.0f64..5.0, 6),
            p in 0.3f64..2.0, n in 0.3f64..2.0,
        ) {
            prop_assume!(rewards.iter().all(|r| r.abs() > 1e-3));
            let mut g = Graph::new();
            let r = g.param(Tensor::vector(rewards)).unwrap();
            let d = distort_vector(&mut g, r, &t(p, n, 0.0)).unwrap();
            let s = g.sum(d).unwrap();
            let check = check_gradient(&mut g, s, &[r], 1e-5).unwrap();
            prop_assert!(check.max_rel_error < 1e-4, "{:?}", check);
        }
    }
}

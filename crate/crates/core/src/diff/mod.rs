//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! The problem sizes here (at most a few dozen states, three actions, short
//! horizons and a small recurrent net) make a dense, eagerly evaluated tape
//! the right trade-off. Non-finite intermediates abort with the offending
//! node's index instead of propagating.

mod check;
mod graph;
mod tensor;

pub use check::{check_gradient, relative_error, relative_error_above, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec())
    }

    #[test]
    fn softmax_matches_closed_form() {
        let mut g = Graph::new();
        let x = g.constant(v(&[1.0, 2.0])).unwrap();
        let s = g.softmax(x).unwrap();
        let e = core::f64::consts::E;
        let expected = [1.0 / (1.0 + e), e / (1.0 + e)];
        for (got, want) in g.value(s).data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((g.value(s).data()[0] - 0.26894).abs() < 1e-5);
        assert!((g.value(s).data()[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(v(&[3.5, 3.5])).unwrap();
        let s = g.softmax(x).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn log_inverts_exp() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.7)).unwrap();
        let e = g.exp(x).unwrap();
        let l = g.log(e).unwrap();
        assert!((g.scalar(l) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0)).unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = g.gradient(y, &[x]).unwrap();
        assert_eq!(grads[0].data(), &[6.0]);
    }

    #[test]
    fn softmax_jacobian_row() {
        let mut g = Graph::new();
        let x = g.param(v(&[0.0, 0.0])).unwrap();
        let s = g.softmax(x).unwrap();
        let s0 = g.index_select(s, &[0]).unwrap();
        let grads = g.gradient(s0, &[x]).unwrap();
        // s_0 (delta_0j - s_j)
        let s = [0.5, 0.5];
        let expected = [s[0] * (1.0 - s[0]), -s[0] * s[1]];
        assert_eq!(grads[0].data(), &expected);
    }

    #[test]
    fn constant_expression_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(v(&[1.0, 2.0])).unwrap();
        let c = g.constant(v(&[4.0, 5.0])).unwrap();
        let y = g.mul(c, c).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.gradient(s, &[x]).unwrap();
        assert_eq!(grads[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn linear_expression_checks_exactly() {
        let mut g = Graph::new();
        let x = g.param(v(&[0.3, -1.2, 2.0])).unwrap();
        let w = g.constant(v(&[1.5, -0.5, 2.5])).unwrap();
        let y = g.mul(x, w).unwrap();
        let y = g.offset(y, 4.0).unwrap();
        let s = g.sum(y).unwrap();
        let check = check_gradient(&mut g, s, &[x], 1e-4).unwrap();
        assert!(check.max_rel_error < 1e-10, "{check:?}");
    }

    #[test]
    fn unused_leaf_has_zero_error() {
        let mut g = Graph::new();
        let x = g.param(v(&[0.3, -1.2])).unwrap();
        let unused = g.param(v(&[5.0])).unwrap();
        let y = g.tanh(x).unwrap();
        let s = g.sum(y).unwrap();
        let check = check_gradient(&mut g, s, &[x, unused], 1e-4).unwrap();
        assert_eq!(check.per_leaf[1], 0.0);
        assert!(check.max_rel_error < 1e-4);
    }

    #[test]
    fn errors_are_reported() {
        let mut g = Graph::new();
        let a = g.constant(v(&[1.0, 2.0])).unwrap();
        let b = g.constant(v(&[1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { op: "add", .. })));

        let z = g.constant(v(&[0.0, 1.0])).unwrap();
        let l = g.log(z);
        assert!(matches!(l, Err(Error::NonFinite { op: "log", .. })));

        let neg = g.constant(v(&[-1.0, 1.0])).unwrap();
        let p = g.pow(neg, &v(&[2.0, 2.0]));
        assert!(matches!(p, Err(Error::NonPositiveBase { .. })));

        let x = g.param(v(&[1.0, 2.0])).unwrap();
        assert!(matches!(g.gradient(x, &[x]), Err(Error::NonScalarRoot(_))));
        let s = g.sum(x).unwrap();
        assert!(matches!(g.gradient(s, &[a]), Err(Error::UnknownLeaf(_))));
    }

    #[test]
    fn evaluation_is_repeatable() {
        let build = || {
            let mut g = Graph::new();
            let x = g.param(v(&[0.1, -0.4, 2.2, 1.0])).unwrap();
            let x2 = g.reshape(x, &[2, 2]).unwrap();
            let m = g.matmul(x2, x2).unwrap();
            let s = g.softmax(m).unwrap();
            let l = g.log(s).unwrap();
            let r = g.sum(l).unwrap();
            g.scalar(r)
        };
        assert_eq!(build().to_bits(), build().to_bits());
    }

    #[test]
    fn replay_after_rebinding_matches_fresh_build() {
        let mut g = Graph::new();
        let x = g.param(v(&[0.5, 1.5])).unwrap();
        let y = g.exp(x).unwrap();
        let s = g.sum(y).unwrap();
        g.set_value(x, v(&[1.0, 2.0])).unwrap();
        g.replay().unwrap();
        let want = 1.0f64.exp() + 2.0f64.exp();
        assert_eq!(g.scalar(s), want);
    }

    #[test]
    fn max_last_ties_route_to_lowest_index() {
        let mut g = Graph::new();
        let x = g.param(v(&[2.0, 2.0, 1.0])).unwrap();
        let m = g.max_last(x).unwrap();
        let grads = g.gradient(m, &[x]).unwrap();
        assert_eq!(grads[0].data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn suffix_broadcast() {
        let mut g = Graph::new();
        let a = g.param(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
        let b = g.param(v(&[10.0, 20.0, 30.0])).unwrap();
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[10.0, 40.0, 90.0, 40.0, 100.0, 180.0]);
        let s = g.sum(c).unwrap();
        let grads = g.gradient(s, &[a, b]).unwrap();
        assert_eq!(grads[1].data(), &[5.0, 7.0, 9.0]);
        assert_eq!(grads[0].data(), &[10.0, 20.0, 30.0, 10.0, 20.0, 30.0]);
    }

    /// Weighted sum of an op's output, so every output element is exercised.
    fn weighted(g: &mut Graph, y: Var, seed: u64) -> Var {
        let n = g.value(y).len();
        let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i as u64 * 7 + seed) % 5) as f64 * 0.4).collect();
        let w = g.constant(Tensor::new(g.shape(y).to_vec(), w).unwrap()).unwrap();
        let p = g.mul(y, w).unwrap();
        g.sum(p).unwrap()
    }

    fn check_unary(x: &[f64], op: impl Fn(&mut Graph, Var) -> Var) -> f64 {
        let mut g = Graph::new();
        let xv = g.param(Tensor::new(vec![2, 3], x.to_vec()).unwrap()).unwrap();
        let y = op(&mut g, xv);
        let r = weighted(&mut g, y, 1);
        check_gradient(&mut g, r, &[xv], 1e-4).unwrap().max_rel_error
    }

    fn check_binary(a: &[f64], b: &[f64], op: impl Fn(&mut Graph, Var, Var) -> Var) -> f64 {
        let mut g = Graph::new();
        let av = g.param(Tensor::new(vec![2, 3], a.to_vec()).unwrap()).unwrap();
        let bv = g.param(Tensor::new(vec![2, 3], b.to_vec()).unwrap()).unwrap();
        let y = op(&mut g, av, bv);
        let r = weighted(&mut g, y, 2);
        check_gradient(&mut g, r, &[av, bv], 1e-4).unwrap().max_rel_error
    }

    const TOL: f64 = 1e-4;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn elementwise_primitives_match_finite_differences(
            a in prop::collection::vec(-3.0f64..3.0, 6),
            b in prop::collection::vec(-3.0f64..3.0, 6),
            p in prop::collection::vec(0.3f64..2.0, 6),
        ) {
            prop_assert!(check_binary(&a, &b, |g, x, y| g.add(x, y).unwrap()) < TOL);
            prop_assert!(check_binary(&a, &b, |g, x, y| g.sub(x, y).unwrap()) < TOL);
            prop_assert!(check_binary(&a, &b, |g, x, y| g.mul(x, y).unwrap()) < TOL);
            let bpos: Vec<f64> = b.iter().map(|x| x.abs() + 0.5).collect();
            prop_assert!(check_binary(&a, &bpos, |g, x, y| g.div(x, y).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.exp(x).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.sigmoid(x).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.tanh(x).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.neg(x).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.scale(x, -1.7).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.offset(x, 0.4).unwrap()) < TOL);
            let apos: Vec<f64> = a.iter().map(|x| x.abs() + 0.2).collect();
            prop_assert!(check_unary(&apos, |g, x| g.log(x).unwrap()) < TOL);
            let exps = Tensor::new(vec![2, 3], p.clone()).unwrap();
            prop_assert!(check_unary(&apos, |g, x| g.pow(x, &exps).unwrap()) < TOL);
        }

        #[test]
        fn structural_primitives_match_finite_differences(
            a in prop::collection::vec(-3.0f64..3.0, 6),
            b in prop::collection::vec(-3.0f64..3.0, 6),
        ) {
            prop_assert!(check_unary(&a, |g, x| g.softmax(x).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.log_softmax(x).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.transpose(x).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.sum_last(x).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.reshape(x, &[3, 2]).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.index_select(x, &[1, 0, 1]).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.mean(x).unwrap()) < TOL);
            prop_assert!(check_unary(&a, |g, x| g.sum(x).unwrap()) < TOL);
            prop_assert!(check_binary(&a, &b, |g, x, y| g.concat(&[x, y]).unwrap()) < TOL);
            let mm = check_binary(&a, &b, |g, x, y| {
                let yt = g.transpose(y).unwrap();
                g.matmul(x, yt).unwrap()
            });
            prop_assert!(mm < TOL);
            let bmm = check_binary(&a, &b, |g, x, y| {
                let x3 = g.reshape(x, &[2, 1, 3]).unwrap();
                let y3 = g.reshape(y, &[2, 3, 1]).unwrap();
                g.batch_matmul(x3, y3).unwrap()
            });
            prop_assert!(bmm < TOL);
        }

        #[test]
        fn max_last_matches_finite_differences_away_from_ties(
            a in prop::collection::vec(-3.0f64..3.0, 6),
        ) {
            let min_gap = a.chunks(3).map(|r| {
                let mut s = r.to_vec();
                s.sort_by(|x, y| y.partial_cmp(x).unwrap());
                s[0] - s[1]
            }).fold(f64::INFINITY, f64::min);
            prop_assume!(min_gap > 1e-3);
            prop_assert!(check_unary(&a, |g, x| g.max_last(x).unwrap()) < TOL);
        }

        #[test]
        fn softmax_rows_are_distributions(a in prop::collection::vec(-30.0f64..30.0, 12)) {
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![4, 3], a).unwrap()).unwrap();
            let s = g.softmax(x).unwrap();
            for r in 0..4 {
                let row = g.value(s).row(r);
                prop_assert!(row.iter().all(|&p| p > 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

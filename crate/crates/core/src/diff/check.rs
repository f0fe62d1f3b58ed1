use alloc::vec::Vec;


use super::{Graph, Var};
use crate::error::Result;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Worst relative error over all checked components.
    pub max_rel_error: f64,
    /// Worst relative error per requested leaf.
    pub per_leaf: Vec<f64>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Relative error with the denominator floored at `floor`.
pub fn relative_error_above(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compares the reverse-mode gradient of `root` against central finite
/// differences, perturbing one leaf component at a time and replaying the
/// graph. Leaf values are restored before returning.
///
/// Components smaller than what a central difference of this step can
/// resolve, about `eps * |f| / step`, are compared on that absolute scale.
pub fn check_gradient(graph: &mut Graph, root: Var, wrt: &[Var], step: f64) -> Result<GradCheck> {
    let analytic = graph.gradient(root, wrt)?;
    let resolution = 1e4 * f64::EPSILON * graph.scalar(root).abs().max(1.0) / step;
    let floor = resolution.max(1e-8);
    let mut per_leaf = Vec::with_capacity(wrt.len());
    for (leaf, grad) in wrt.iter().zip(&analytic) {
        let original = graph.value(*leaf).clone();
        let mut worst = 0.0f64;
        for i in 0..original.len() {
            let mut plus = original.clone();
            plus.data_mut()[i] += step;
            graph.set_value(*leaf, plus)?;
            graph.replay()?;
            let f_plus = graph.scalar(root);

            let mut minus = original.clone();
            minus.data_mut()[i] -= step;
            graph.set_value(*leaf, minus)?;
            graph.replay()?;
            let f_minus = graph.scalar(root);

            let numeric = (f_plus - f_minus) / (2.0 * step);
            worst = worst.max(relative_error_above(grad.data()[i], numeric, floor));
        }
        graph.set_value(*leaf, original)?;
        per_leaf.push(worst);
    }
    graph.replay()?;
    let max_rel_error = per_leaf.iter().copied().fold(0.0, f64::max);
    Ok(GradCheck {
        max_rel_error,
        per_leaf,
    })
}

use serde::{Deserialize, Serialize};

use super::{loss, loss_with_gradient, AnchorError, AnchorGrid, HeadOutput, LossComponent, LossConfig, LossWeights};
use crate::geom::Box9;

/// Denominator floor for relative errors, so gradients that are zero up to
/// finite-difference noise do not blow up.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over smooth coordinates.
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Coordinates whose one-sided differences disagree; excluded from the maximum.
    pub kinks: Vec<usize>,
}

/// Compares `analytic` against central differences of `f` at `x` with step `eps`.
pub fn finite_difference_check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], eps: f64) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let f0 = f(x);
    let mut probe = x.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut kinks = Vec::new();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let fp = f(&probe);
        probe[i] = x[i] - eps;
        let fm = f(&probe);
        probe[i] = x[i];
        let forward = (fp - f0) / eps;
        let backward = (f0 - fm) / eps;
        let scale = forward.abs().max(backward.abs()).max(1.0);
        if (forward - backward).abs() > 1e-2 * scale {
            kinks.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel_error = max_rel_error.max(err);
    }
    GradCheckReport {
        max_rel_error,
        coordinates: x.len(),
        kinks,
    }
}

/// Checks one loss component (or the weighted total for `None`) against central
/// differences over every head parameter.
pub fn gradient_check(
    grid: &AnchorGrid,
    head: &HeadOutput,
    targets: &[Option<Box9>],
    config: &LossConfig,
    component: Option<LossComponent>,
    eps: f64,
) -> Result<GradCheckReport, AnchorError> {
    let config = LossConfig {
        weights: component.map_or(config.weights, LossWeights::only),
        ..*config
    };
    let (_, grad) = loss_with_gradient(grid, head, targets, &config)?;
    let x = head.to_params();
    let f = |params: &[f64]| {
        let probe = head.with_params(params).expect("same layout");
        loss(grid, &probe, targets, &config).expect("validated inputs").total
    };
    Ok(finite_difference_check(f, &x, &grad.to_params(), eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let r = finite_difference_check(f, &[0.7, -1.0], &[1.4, 3.0], 1e-5);
        assert!(r.max_rel_error <= 1e-8, "{r:?}");
        assert!(r.kinks.is_empty());
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |x: &[f64]| x[0] * x[0];
        let r = finite_difference_check(f, &[0.7], &[1.0], 1e-5);
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn kink_is_reported() {
        let f = |x: &[f64]| x[0].abs();
        let r = finite_difference_check(f, &[0.0], &[0.0], 1e-5);
        assert_eq!(r.kinks, vec![0]);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let r = finite_difference_check(|_| 4.2, &[1.0, 2.0, 3.0], &[0.0; 3], 1e-5);
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.kinks.is_empty());
    }
}

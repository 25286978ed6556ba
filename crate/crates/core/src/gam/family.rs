//! Count-response families for the growth regressions.
//!
//! Both families use the log link. Because the synthetic block's responses
//! are convex combinations of integer counts, every formula is the
//! continuous extension of its count counterpart: factorials become
//! log-gamma functions, so non-integer `y` is first-class rather than a
//! rounding hack.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Response family of a growth regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Poisson counts: variance equals the mean.
    Poisson,
    /// Negative binomial (NB2): variance `μ + μ²/θ` with dispersion θ
    /// estimated by outer profile likelihood.
    NegBin,
}

impl Family {
    /// Human-readable family label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            Family::Poisson => "Poisson",
            Family::NegBin => "NegBin",
        }
    }
}

/// Log-likelihood of the sample under the family (continuous extension;
/// `theta` is ignored for Poisson).
pub fn loglik(family: Family, theta: f64, y: &[f64], mu: &[f64]) -> f64 {
    match family {
        Family::Poisson => y
            .iter()
            .zip(mu)
            .map(|(&yi, &mi)| {
                let m = mi.max(1e-300);
                yi * m.ln() - m - ln_gamma(yi + 1.0)
            })
            .sum(),
        Family::NegBin => y
            .iter()
            .zip(mu)
            .map(|(&yi, &mi)| {
                let m = mi.max(1e-300);
                ln_gamma(yi + theta) - ln_gamma(theta) - ln_gamma(yi + 1.0)
                    + theta * (theta / (theta + m)).ln()
                    + yi * (m / (theta + m)).ln()
            })
            .sum(),
    }
}

/// IRLS working weight at mean `mi` under the log link: the negative
/// expected second derivative of the log-likelihood with respect to η.
pub fn irls_weight(family: Family, theta: f64, mi: f64) -> f64 {
    match family {
        Family::Poisson => mi,
        Family::NegBin => mi * theta / (theta + mi),
    }
}

/// Per-observation score with respect to η (`∂ℓ_i/∂η_i`) under the log
/// link; the design-space score is `Xᵀ` times this vector.
pub fn eta_score(family: Family, theta: f64, yi: f64, mi: f64) -> f64 {
    match family {
        Family::Poisson => yi - mi,
        Family::NegBin => (yi - mi) * theta / (theta + mi),
    }
}

/// Model deviance: twice the log-likelihood gap to the saturated model
/// (μ = y), with the usual `y = 0` limits.
pub fn deviance(family: Family, theta: f64, y: &[f64], mu: &[f64]) -> f64 {
    let mut dev = 0.0;
    for (&yi, &mi) in y.iter().zip(mu) {
        let m = mi.max(1e-300);
        let ylog = if yi > 0.0 { yi * (yi / m).ln() } else { 0.0 };
        dev += 2.0
            * match family {
                Family::Poisson => ylog - (yi - m),
                Family::NegBin => ylog - (yi + theta) * ((yi + theta) / (m + theta)).ln(),
            };
    }
    dev
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn poisson_loglik_matches_hand_value() {
        // y = 2, mu = 3: 2·ln3 − 3 − ln(2!) = 2.1972246 − 3 − 0.6931472
        let ll = loglik(Family::Poisson, f64::NAN, &[2.0], &[3.0]);
        assert_abs_diff_eq!(ll, 2.0 * 3.0f64.ln() - 3.0 - 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn negbin_approaches_poisson_for_large_theta() {
        let y = [0.0, 1.0, 4.0, 7.5, 2.3];
        let mu = [0.5, 1.5, 3.0, 6.0, 2.0];
        let ll_p = loglik(Family::Poisson, f64::NAN, &y, &mu);
        let ll_nb = loglik(Family::NegBin, 1e9, &y, &mu);
        assert_abs_diff_eq!(ll_p, ll_nb, epsilon = 1e-5);
    }

    #[test]
    fn deviance_zero_at_saturation() {
        let y = [1.0, 4.0, 0.0, 2.5];
        let dev_p = deviance(Family::Poisson, f64::NAN, &y, &y.map(|v| v.max(1e-300)));
        assert_abs_diff_eq!(dev_p, 0.0, epsilon = 1e-8);
        let dev_nb = deviance(Family::NegBin, 2.0, &y, &y.map(|v| v.max(1e-300)));
        assert_abs_diff_eq!(dev_nb, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn eta_score_is_loglik_gradient() {
        // Finite-difference check of ∂ℓ/∂η at a single observation.
        for &(fam, theta) in &[(Family::Poisson, f64::NAN), (Family::NegBin, 3.0)] {
            let y = 4.0;
            let eta = 1.2;
            let h = 1e-6;
            let f = |e: f64| loglik(fam, theta, &[y], &[e.exp()]);
            let fd = (f(eta + h) - f(eta - h)) / (2.0 * h);
            let analytic = eta_score(fam, theta, y, eta.exp());
            assert_abs_diff_eq!(fd, analytic, epsilon = 1e-6);
        }
    }
}

//! Penalized iteratively reweighted least squares for log-link count
//! models, plus the Laplace-approximate marginal likelihood used to select
//! the smoothing parameter.

use nalgebra::DVector;

use super::family::{self, Family};
use crate::error::{CoreError, Result};
use crate::{Matrix, Vector};

/// Cap on |η| so exp never overflows; generous for daily counts.
const ETA_CAP: f64 = 30.0;

/// Converged penalized-likelihood fit at fixed λ (and fixed θ for the
/// negative binomial).
#[derive(Debug, Clone)]
pub struct PirlsFit {
    /// Coefficients in design-column order.
    pub beta: Vector,
    /// Linear predictor per row.
    pub eta: Vec<f64>,
    /// Fitted means per row.
    pub mu: Vec<f64>,
    /// Unpenalized information `XᵀWX` at convergence.
    pub info: Matrix,
    /// Penalized information `XᵀWX + λS̄` at convergence.
    pub penalized_info: Matrix,
    /// Log-likelihood at convergence.
    pub loglik: f64,
    /// Penalized log-likelihood (`loglik − (λ/2)·βᵀS̄β`).
    pub penalized_loglik: f64,
    /// IRLS iterations consumed.
    pub iterations: usize,
}

fn eta_mu(x: &Matrix, beta: &Vector) -> (Vec<f64>, Vec<f64>) {
    let eta_v = x * beta;
    let eta: Vec<f64> = eta_v.iter().map(|e| e.clamp(-ETA_CAP, ETA_CAP)).collect();
    let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    (eta, mu)
}

fn penalty_value(sbar: Option<&Matrix>, lambda: f64, beta: &Vector) -> f64 {
    match sbar {
        Some(s) if lambda > 0.0 => 0.5 * lambda * (beta.transpose() * s * beta)[(0, 0)],
        _ => 0.0,
    }
}

/// Runs penalized IRLS to convergence.
///
/// `sbar` is the full-size penalty (zeros outside the smooth block); pass
/// `None` (or `lambda = 0`) for an unpenalized fit. `theta` is the negative
/// binomial dispersion and is ignored for Poisson. `beta0` warm-starts the
/// iteration, which the outer λ and θ searches use to stay cheap.
pub fn pirls(
    x: &Matrix,
    y: &[f64],
    sbar: Option<&Matrix>,
    lambda: f64,
    fam: Family,
    theta: f64,
    beta0: Option<&Vector>,
) -> Result<PirlsFit> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 || y.len() != n {
        return Err(CoreError::invalid("design and response sizes disagree"));
    }

    let penalty: Option<Matrix> = match sbar {
        Some(s) if lambda > 0.0 => Some(s * lambda),
        _ => None,
    };

    let mut beta = match beta0 {
        Some(b) => b.clone(),
        None => {
            let mut b = DVector::zeros(p);
            let ybar = y.iter().sum::<f64>() / n as f64;
            b[0] = (ybar.max(1e-8)).ln();
            b
        }
    };
    let (mut eta, mut mu) = eta_mu(x, &beta);
    let mut llp = family::loglik(fam, theta, y, &mu) - penalty_value(sbar, lambda, &beta);
    let mut iterations = 0;

    for it in 1..=200 {
        iterations = it;
        // Working response z = η + (y − μ)/μ and weights from the family.
        let mut wz = DVector::zeros(n);
        let mut xw = x.clone();
        for i in 0..n {
            let w = family::irls_weight(fam, theta, mu[i]).max(1e-10);
            let z = eta[i] + (y[i] - mu[i]) / mu[i].max(1e-300);
            wz[i] = w * z;
            for j in 0..p {
                xw[(i, j)] *= w;
            }
        }
        let mut lhs = x.transpose() * &xw;
        if let Some(pen) = &penalty {
            lhs += pen;
        }
        let rhs = x.transpose() * &wz;
        let beta_new = match lhs.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => lhs.clone().lu().solve(&rhs).ok_or_else(|| {
                let j = (0..p)
                    .min_by(|&a, &b| lhs[(a, a)].partial_cmp(&lhs[(b, b)]).unwrap())
                    .unwrap_or(0);
                CoreError::numerical(format!(
                    "rank deficiency in the penalized system near design column {j}"
                ))
            })?,
        };

        // Step-halve towards the Newton target on the penalized likelihood.
        let mut t = 1.0;
        let mut best_beta = beta.clone();
        let mut best_llp = llp;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &beta + (&beta_new - &beta) * t;
            let (_, mu_c) = eta_mu(x, &cand);
            let llp_c = family::loglik(fam, theta, y, &mu_c) - penalty_value(sbar, lambda, &cand);
            if llp_c.is_finite() && llp_c > best_llp {
                best_beta = cand;
                best_llp = llp_c;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            // No ascent direction left at floating precision: accept the
            // current iterate as converged.
            break;
        }
        beta = best_beta;
        let prev = llp;
        llp = best_llp;
        let (eta_n, mu_n) = eta_mu(x, &beta);
        eta = eta_n;
        mu = mu_n;
        if (llp - prev).abs() < 1e-10 * (llp.abs() + 0.1) {
            break;
        }
        if it == 200 {
            return Err(CoreError::convergence(format!(
                "IRLS did not converge in 200 iterations (last penalized loglik {llp:.6}, change {:.3e})",
                llp - prev
            )));
        }
    }

    let mut xw = x.clone();
    for i in 0..n {
        let w = family::irls_weight(fam, theta, mu[i]).max(1e-10);
        for j in 0..p {
            xw[(i, j)] *= w;
        }
    }
    let info = x.transpose() * &xw;
    let mut penalized_info = info.clone();
    if let Some(pen) = &penalty {
        penalized_info += pen;
    }
    let loglik = family::loglik(fam, theta, y, &mu);

    Ok(PirlsFit {
        beta,
        eta,
        mu,
        info,
        penalized_info,
        loglik,
        penalized_loglik: llp,
        iterations,
    })
}

/// Laplace-approximate marginal likelihood at the converged fit (up to
/// λ-independent constants):
/// `ℓ_p + (rank(S)/2)·ln λ − ½·ln|XᵀWX + λS̄|`.
pub fn laml(fit: &PirlsFit, lambda: f64, rank_s: usize) -> f64 {
    let logdet = match fit.penalized_info.clone().cholesky() {
        Some(ch) => 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => return f64::NEG_INFINITY,
    };
    fit.penalized_loglik + 0.5 * rank_s as f64 * lambda.ln() - 0.5 * logdet
}

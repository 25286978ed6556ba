//! Growth-change estimates, delta-method standard errors, and the model
//! comparison table.
//!
//! The fitted interaction structure lives on the log scale; the quantities
//! of applied interest are relative changes in the daily growth rate,
//! `Δρ₁ = exp(β+δ) − 1` for the treated region and `Δρ₀ = exp(β) − 1` for
//! its synthetic control. Standard errors follow from the delta method on
//! the joint normal approximation of `(β̂, δ̂)`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CoreError, Result};
use crate::gam::{Family, FitResult, SmoothTest};

/// How the variance of `β̂ + δ̂` combines the covariance term.
///
/// The textbook expansion carries `2·Cov(β̂, δ̂)`; the single-covariance
/// variant reproduces a published formula that omits the factor 2 and is
/// kept selectable so the numerical difference stays measurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceConvention {
    Textbook,
    SingleCovariance,
}

/// Relative growth-rate changes after the intervention, with delta-method
/// uncertainty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthChange {
    /// `exp(β̂+δ̂) − 1`: relative change in the treated region.
    pub delta_rho_treated: f64,
    /// `exp(β̂) − 1`: relative change in the synthetic control.
    pub delta_rho_control: f64,
    /// Delta-method standard error of the treated change.
    pub se_treated: f64,
    /// Delta-method standard error of the control change.
    pub se_control: f64,
    /// 95% normal-approximation interval for the treated change.
    pub ci95_treated: (f64, f64),
    /// 95% normal-approximation interval for the control change.
    pub ci95_control: (f64, f64),
    /// Covariance convention used for `se_treated`.
    pub convention: CovarianceConvention,
}

const Z95: f64 = 1.96;

/// Growth-rate changes with textbook delta-method variances.
pub fn growth_change(fit: &FitResult) -> Result<GrowthChange> {
    growth_change_with(fit, CovarianceConvention::Textbook)
}

/// Growth-rate changes under an explicit covariance convention.
pub fn growth_change_with(fit: &FitResult, convention: CovarianceConvention) -> Result<GrowthChange> {
    let (beta, se_beta) = fit
        .coef("Int")
        .ok_or_else(|| CoreError::invalid("fit has no intervention coefficient"))?;
    let (delta, se_delta) = fit
        .coef("IntReg")
        .ok_or_else(|| CoreError::invalid("fit has no interaction coefficient"))?;
    let cov = fit
        .cov("Int", "IntReg")
        .ok_or_else(|| CoreError::invalid("fit covariance lacks the (Int, IntReg) entry"))?;

    let cov_factor = match convention {
        CovarianceConvention::Textbook => 2.0,
        CovarianceConvention::SingleCovariance => 1.0,
    };
    let var_sum = se_beta * se_beta + se_delta * se_delta + cov_factor * cov;
    if var_sum < 0.0 {
        return Err(CoreError::numerical(format!(
            "negative variance {var_sum:.3e} for beta + delta"
        )));
    }

    let rho_treated = (beta + delta).exp() - 1.0;
    let rho_control = beta.exp() - 1.0;
    let se_treated = (beta + delta).exp() * var_sum.sqrt();
    let se_control = beta.exp() * se_beta;

    Ok(GrowthChange {
        delta_rho_treated: rho_treated,
        delta_rho_control: rho_control,
        se_treated,
        se_control,
        ci95_treated: (rho_treated - Z95 * se_treated, rho_treated + Z95 * se_treated),
        ci95_control: (rho_control - Z95 * se_control, rho_control + Z95 * se_control),
        convention,
    })
}

/// One rendered coefficient: estimate, uncertainty, and the two-sided
/// normal test against zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefCell {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    /// Significant at the table's p < 0.01 threshold.
    pub starred: bool,
}

/// Everything the comparison table reports about one fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSummary {
    pub label: String,
    pub family: Family,
    pub smooth: bool,
    pub with_controls: bool,
    pub theta: Option<f64>,
    /// The difference-in-differences block and the deceleration exponent.
    pub coefficients: Vec<CoefCell>,
    /// Testing-volume and weekday controls (empty without controls).
    pub controls: Vec<CoefCell>,
    pub smooth_test: Option<SmoothTest>,
    pub growth: GrowthChange,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub adj_r2: f64,
    pub dev_explained: f64,
    pub lambda: f64,
    pub edf_total: f64,
    pub n: usize,
}

/// Model comparison table over any number of fitted variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub models: Vec<ModelSummary>,
}

fn cell(fit: &FitResult, name: &str) -> Option<CoefCell> {
    let (estimate, se) = fit.coef(name)?;
    let z = if se > 0.0 { estimate / se } else { f64::INFINITY };
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = 2.0 * (1.0 - normal.cdf(z.abs()));
    Some(CoefCell {
        name: name.to_string(),
        estimate,
        se,
        z,
        p_value,
        starred: p_value < 0.01,
    })
}

/// Human-readable variant label, e.g. `SPG NBin+Ctrl`.
pub fn model_label(fit: &FitResult) -> String {
    let shape = if fit.smooth.is_some() { "SPG" } else { "EG" };
    let fam = match fit.family {
        Family::Poisson => "Pois",
        Family::NegBin => "NBin",
    };
    let ctrl = if fit.with_controls { "+Ctrl" } else { "" };
    format!("{shape} {fam}{ctrl}")
}

/// Builds the comparison table for a set of fits.
pub fn coefficient_table(fits: &[FitResult]) -> Result<CoefficientTable> {
    if fits.is_empty() {
        return Err(CoreError::invalid("coefficient table needs at least one fit"));
    }
    let mut models = Vec::with_capacity(fits.len());
    for fit in fits {
        let core_names = ["(Intercept)", "Int", "Reg", "IntReg", "log_x"];
        let coefficients: Vec<CoefCell> = core_names
            .iter()
            .filter_map(|n| cell(fit, n))
            .collect();
        let controls: Vec<CoefCell> = fit
            .names
            .iter()
            .filter(|n| n.starts_with("dNT") || n.starts_with("dow_"))
            .filter_map(|n| cell(fit, n))
            .collect();
        models.push(ModelSummary {
            label: model_label(fit),
            family: fit.family,
            smooth: fit.smooth.is_some(),
            with_controls: fit.with_controls,
            theta: fit.theta_nb,
            coefficients,
            controls,
            smooth_test: fit.smooth_chisq.clone(),
            growth: growth_change(fit)?,
            loglik: fit.loglik,
            aic: fit.aic,
            bic: fit.bic,
            adj_r2: fit.adj_r2,
            dev_explained: fit.dev_explained,
            lambda: fit.lambda,
            edf_total: fit.edf_total,
            n: fit.n,
        });
    }
    Ok(CoefficientTable { models })
}

impl CoefficientTable {
    /// Aligned-text rendering: one column per model, Table-1-shaped rows.
    pub fn render_text(&self) -> String {
        let width = 22usize;
        let label_w = 14usize;
        let mut out = String::new();
        let pad = |s: &str, w: usize| format!("{s:>w$}");

        out.push_str(&pad("", label_w));
        for m in &self.models {
            out.push_str(&pad(&m.label, width));
        }
        out.push('\n');

        let coef_rows = ["(Intercept)", "Int", "Reg", "IntReg", "log_x"];
        let pretty = ["alpha", "beta", "gamma", "delta", "p (log x)"];
        for (name, label) in coef_rows.iter().zip(pretty) {
            out.push_str(&pad(label, label_w));
            for m in &self.models {
                let cell = m
                    .coefficients
                    .iter()
                    .find(|c| c.name == *name)
                    .map(|c| {
                        let star = if c.starred { "*" } else { "" };
                        format!("{:.3} ({:.3}){star}", c.estimate, c.se)
                    })
                    .unwrap_or_default();
                out.push_str(&pad(&cell, width));
            }
            out.push('\n');
        }

        out.push_str(&pad("s(x) chi^2", label_w));
        for m in &self.models {
            let cell = m
                .smooth_test
                .as_ref()
                .map(|t| {
                    let star = if t.p_value < 0.01 { "*" } else { "" };
                    format!("{:.1} ({:.2}){star}", t.chisq, t.df)
                })
                .unwrap_or_default();
            out.push_str(&pad(&cell, width));
        }
        out.push('\n');

        out.push_str(&pad("theta", label_w));
        for m in &self.models {
            let cell = m.theta.map(|t| format!("{t:.2}")).unwrap_or_default();
            out.push_str(&pad(&cell, width));
        }
        out.push('\n');

        out.push_str(&pad("d-rho treated", label_w));
        for m in &self.models {
            let cell = format!(
                "{:.2} ({:.2})",
                100.0 * m.growth.delta_rho_treated,
                100.0 * m.growth.se_treated
            );
            out.push_str(&pad(&cell, width));
        }
        out.push('\n');

        out.push_str(&pad("d-rho control", label_w));
        for m in &self.models {
            let cell = format!(
                "{:.2} ({:.2})",
                100.0 * m.growth.delta_rho_control,
                100.0 * m.growth.se_control
            );
            out.push_str(&pad(&cell, width));
        }
        out.push('\n');

        for (label, get) in [
            ("AIC", (|m: &ModelSummary| m.aic) as fn(&ModelSummary) -> f64),
            ("BIC", |m| m.bic),
            ("adj R2 (%)", |m| m.adj_r2),
            ("dev expl (%)", |m| m.dev_explained),
        ] {
            out.push_str(&pad(label, label_w));
            for m in &self.models {
                out.push_str(&pad(&format!("{:.1}", get(m)), width));
            }
            out.push('\n');
        }

        out.push_str(&pad("n", label_w));
        for m in &self.models {
            out.push_str(&pad(&m.n.to_string(), width));
        }
        out.push('\n');
        out.push_str("star: p < 0.01\n");
        out
    }

    /// CSV export: one row per (model, statistic) pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,statistic,estimate,se,p_value\n");
        for m in &self.models {
            for c in m.coefficients.iter().chain(&m.controls) {
                out.push_str(&format!(
                    "{},{},{:.6},{:.6},{:.6}\n",
                    m.label, c.name, c.estimate, c.se, c.p_value
                ));
            }
            if let Some(t) = &m.smooth_test {
                out.push_str(&format!(
                    "{},s(x)_chisq,{:.6},{:.6},{:.6}\n",
                    m.label, t.chisq, t.df, t.p_value
                ));
            }
            out.push_str(&format!(
                "{},delta_rho_treated,{:.6},{:.6},\n",
                m.label, m.growth.delta_rho_treated, m.growth.se_treated
            ));
            out.push_str(&format!(
                "{},delta_rho_control,{:.6},{:.6},\n",
                m.label, m.growth.delta_rho_control, m.growth.se_control
            ));
            for (name, v) in [
                ("aic", m.aic),
                ("bic", m.bic),
                ("adj_r2", m.adj_r2),
                ("dev_explained", m.dev_explained),
                ("loglik", m.loglik),
                ("edf_total", m.edf_total),
            ] {
                out.push_str(&format!("{},{},{:.6},,\n", m.label, name, v));
            }
            if let Some(t) = m.theta {
                out.push_str(&format!("{},theta,{:.6},,\n", m.label, t));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::GrowthCoefficients;
    use crate::Matrix;

    fn synthetic_fit(beta: f64, delta: f64, var_b: f64, var_d: f64, cov: f64) -> FitResult {
        let names: Vec<String> = ["(Intercept)", "Int", "Reg", "IntReg", "log_x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut vcov = Matrix::zeros(5, 5);
        vcov[(1, 1)] = var_b;
        vcov[(3, 3)] = var_d;
        vcov[(1, 3)] = cov;
        vcov[(3, 1)] = cov;
        let beta_vec = vec![0.5, beta, 0.1, delta, 0.9];
        let se: Vec<f64> = (0..5).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect();
        FitResult {
            family: Family::Poisson,
            theta_nb: None,
            coefficients: GrowthCoefficients {
                alpha: 0.5,
                beta,
                gamma: 0.1,
                delta,
                xi: vec![],
                p: 0.9,
            },
            beta: beta_vec,
            se,
            names,
            vcov,
            smooth: None,
            smooth_chisq: None,
            lambda: 0.0,
            loglik: -100.0,
            edf_total: 5.0,
            aic: 210.0,
            bic: 220.0,
            adj_r2: 90.0,
            dev_explained: 95.0,
            fitted: vec![],
            n: 50,
            with_controls: false,
            warnings: vec![],
            iterations: 5,
        }
    }

    #[test]
    fn identity_links_delta_rho_ratio_to_delta() {
        let fit = synthetic_fit(-0.2, -0.5, 0.01, 0.02, 0.003);
        let g = growth_change(&fit).unwrap();
        let lhs = (1.0 + g.delta_rho_treated).ln() - (1.0 + g.delta_rho_control).ln();
        assert!((lhs - fit.coefficients.delta).abs() < 1e-12);
    }

    #[test]
    fn textbook_variance_carries_double_covariance() {
        let fit = synthetic_fit(-0.2, -0.5, 0.01, 0.02, 0.003);
        let text = growth_change_with(&fit, CovarianceConvention::Textbook).unwrap();
        let single = growth_change_with(&fit, CovarianceConvention::SingleCovariance).unwrap();
        let scale = (-0.7f64).exp();
        let expected_text = scale * (0.01f64 + 0.02 + 2.0 * 0.003).sqrt();
        let expected_single = scale * (0.01f64 + 0.02 + 0.003).sqrt();
        assert!((text.se_treated - expected_text).abs() < 1e-12);
        assert!((single.se_treated - expected_single).abs() < 1e-12);
        assert!(text.se_treated > single.se_treated);
    }

    #[test]
    fn null_effect_maps_to_zero_change() {
        let fit = synthetic_fit(0.0, 0.0, 0.01, 0.02, 0.0);
        let g = growth_change(&fit).unwrap();
        assert_eq!(g.delta_rho_treated, 0.0);
        assert_eq!(g.delta_rho_control, 0.0);
    }

    #[test]
    fn star_threshold_splits_at_one_percent() {
        let fit = synthetic_fit(-0.2, -0.5, 0.01, 0.02, 0.003);
        let table = coefficient_table(std::slice::from_ref(&fit)).unwrap();
        let delta_cell = table.models[0]
            .coefficients
            .iter()
            .find(|c| c.name == "IntReg")
            .unwrap();
        // z = -0.5 / sqrt(0.02) ≈ -3.54 → p ≈ 0.0004, starred.
        assert!(delta_cell.starred);
        let weak = synthetic_fit(-0.2, -0.05, 0.01, 0.02, 0.003);
        let table = coefficient_table(std::slice::from_ref(&weak)).unwrap();
        let delta_cell = table.models[0]
            .coefficients
            .iter()
            .find(|c| c.name == "IntReg")
            .unwrap();
        assert!(!delta_cell.starred);
    }

    #[test]
    fn text_rendering_contains_all_models() {
        let fits = vec![
            synthetic_fit(-0.2, -0.5, 0.01, 0.02, 0.003),
            synthetic_fit(-0.1, -0.3, 0.01, 0.02, 0.001),
        ];
        let table = coefficient_table(&fits).unwrap();
        let text = table.render_text();
        assert_eq!(text.matches("EG Pois").count(), 2);
        assert!(text.contains("d-rho treated"));
    }
}

//! Placebo inference across donor regions and counterfactual projection of
//! averted cases.
//!
//! The placebo study reruns the entire pipeline — synthetic-control
//! construction, frame assembly, model fit — once per donor region
//! pretending it was treated, which turns the single observed δ̂ into a
//! reference distribution. The counterfactual projection rolls the fitted
//! model forward from the intervention date with the interaction switched
//! off, the "unmitigated growth" scenario. A Monte Carlo calibration
//! harness closes the loop: simulate panels with a known effect, run the
//! same estimator, and check bias and coverage.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::gam::{build_frame, fit, Family, FitOptions, FitResult, ModelFrame, ModelSpec};
use crate::growth::{
    simulate_panel, GrowthCoefficients, GrowthFamily, ParametricGrowthSpec, ResponseFamily,
};
use crate::inference::growth_change;
use crate::panel::Panel;
use crate::synth::{
    build_donor_setup, fit_quality, fit_synthetic_control, mspe, solve_weights, SelectOptions,
    SynthFit,
};

/// One pseudo-treated region's refit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaceboEntry {
    /// Pseudo-treated region.
    pub region: String,
    /// Interaction estimate δ̂ with this region treated.
    pub delta: f64,
    /// Standard error of δ̂.
    pub se_delta: f64,
    /// Relative growth change `exp(β̂+δ̂) − 1` for the pseudo-treated region.
    pub delta_rho_treated: f64,
}

/// A placebo refit that could not be completed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaceboFailure {
    pub region: String,
    pub reason: String,
}

/// Full placebo study output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaceboResult {
    /// Successful placebo refits in region-id order.
    pub entries: Vec<PlaceboEntry>,
    /// Refits that failed, with reasons.
    pub failures: Vec<PlaceboFailure>,
    /// 2.5/97.5 empirical percentiles of the placebo δ̂ distribution.
    pub empirical_ci95: (f64, f64),
    /// δ̂ for the true treated region under the same model.
    pub treated_delta: f64,
    /// Treated region identifier.
    pub treated_region: String,
    /// 1-based position of the treated δ̂ among the placebo estimates
    /// (1 = more negative than every placebo).
    pub rank: usize,
}

/// Shared settings for every refit inside the placebo study.
#[derive(Debug, Clone)]
pub struct PlaceboOptions {
    /// Last pre-intervention day for synthetic-control matching.
    pub pre_end: NaiveDate,
    /// Intervention cutover date (same for every pseudo-treated region).
    pub intervention: NaiveDate,
    /// Standardize synthetic-control predictors.
    pub standardize: bool,
    /// Synthetic-control search settings.
    pub select: SelectOptions,
    /// Model fitting settings.
    pub fit: FitOptions,
}

fn pipeline_delta(
    panel: &Panel,
    treated: &str,
    model: ModelSpec,
    opts: &PlaceboOptions,
) -> Result<(f64, f64, f64)> {
    let synth = fit_synthetic_control(panel, treated, opts.pre_end, opts.standardize, &opts.select)?;
    let frame = build_frame(panel, &synth, model.with_controls, opts.intervention)?;
    let fitted = fit(&frame, model.family, model.smooth, &opts.fit)?;
    let (delta, se_delta) = fitted
        .coef("IntReg")
        .ok_or_else(|| CoreError::invalid("fit lacks the interaction coefficient"))?;
    let rho = growth_change(&fitted)?.delta_rho_treated;
    Ok((delta, se_delta, rho))
}

/// Type-7 (linear-interpolation) percentile of a sorted sample.
fn percentile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Runs the placebo study: every region other than `treated` is refit as
/// pseudo-treated against a donor pool that excludes both itself and the
/// true treated region, under the same intervention date and model.
///
/// Individual refit failures are recorded, not fatal; more than half
/// failing aborts the study. Placebo fits run concurrently and are
/// collected in region-id order, so results are deterministic.
pub fn placebo_study(
    panel: &Panel,
    treated: &str,
    model: ModelSpec,
    opts: &PlaceboOptions,
) -> Result<PlaceboResult> {
    if panel.regions.len() < 3 {
        return Err(CoreError::invalid("placebo study needs at least 3 regions"));
    }
    if panel.region(treated).is_none() {
        return Err(CoreError::invalid(format!("treated region '{treated}' not in panel")));
    }

    let (treated_delta, _, _) = pipeline_delta(panel, treated, model, opts)
        .map_err(|e| CoreError::invalid(format!("treated fit failed: {e}")))?;

    // Donor pools never contain the true treated region, so the actual
    // treatment cannot leak into any placebo control.
    let pruned = Panel::from_series(
        panel.dates.clone(),
        panel
            .regions
            .iter()
            .filter(|r| r.id != treated)
            .cloned()
            .collect(),
    )?;

    let pseudo_ids: Vec<String> = pruned.regions.iter().map(|r| r.id.clone()).collect();
    let outcomes: Vec<(String, Result<(f64, f64, f64)>)> = pseudo_ids
        .par_iter()
        .map(|id| (id.clone(), pipeline_delta(&pruned, id, model, opts)))
        .collect();

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (region, outcome) in outcomes {
        match outcome {
            Ok((delta, se_delta, delta_rho_treated)) => entries.push(PlaceboEntry {
                region,
                delta,
                se_delta,
                delta_rho_treated,
            }),
            Err(e) => failures.push(PlaceboFailure {
                region,
                reason: e.to_string(),
            }),
        }
    }

    if failures.len() * 2 > pseudo_ids.len() {
        return Err(CoreError::numerical(format!(
            "placebo study failed for {} of {} regions",
            failures.len(),
            pseudo_ids.len()
        )));
    }
    if entries.len() < 2 {
        return Err(CoreError::invalid(
            "empirical interval needs at least 2 successful placebo fits",
        ));
    }

    let mut deltas: Vec<f64> = entries.iter().map(|e| e.delta).collect();
    deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let empirical_ci95 = (
        percentile_type7(&deltas, 0.025),
        percentile_type7(&deltas, 0.975),
    );
    let rank = 1 + deltas.iter().filter(|&&d| d < treated_delta).count();

    Ok(PlaceboResult {
        entries,
        failures,
        empirical_ci95,
        treated_delta,
        treated_region: treated.to_string(),
        rank,
    })
}

impl PlaceboResult {
    /// CSV export: one row per pseudo-treated region.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("region,delta,se_delta,delta_rho_treated\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                e.region, e.delta, e.se_delta, e.delta_rho_treated
            ));
        }
        out
    }
}

/// Averted cases and percent reduction at one horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonSummary {
    /// Days since the intervention date (1 = the intervention day itself).
    pub horizon: usize,
    /// Cumulative counterfactual-minus-fitted cases over the horizon.
    pub averted: f64,
    /// `averted` as a percentage of counterfactual additional cases since
    /// the intervention.
    pub percent_reduction: f64,
}

/// Recursive forward projection with and without the interaction effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterfactualProjection {
    /// Post-intervention days, starting at the intervention date.
    pub dates: Vec<NaiveDate>,
    /// Daily means along the fitted path (δ = δ̂).
    pub actual_fitted_daily: Vec<f64>,
    /// Daily means along the counterfactual path (δ = 0, β retained).
    pub counterfactual_daily: Vec<f64>,
    /// Running sum of (counterfactual − fitted).
    pub cumulative_averted: Vec<f64>,
    /// Per-horizon summaries in the order requested.
    pub horizons: Vec<HorizonSummary>,
    /// Non-fatal issues (smooth extrapolation).
    pub warnings: Vec<String>,
}

/// Projects the treated block forward from the intervention date.
///
/// Both paths share every coefficient, control value, and the smooth; the
/// counterfactual sets δ = 0 while keeping β, so the treated region follows
/// the common post-period dynamic without the intervention's differential
/// effect. Cumulative cases update recursively (`x_{t+1} = x_t + ŷ_t`), so
/// the two paths diverge in x as well as in rate. Counterfactual x beyond
/// the smooth's fitted support triggers a warning and the smooth continues
/// linearly.
pub fn project_counterfactual(
    fit: &FitResult,
    frame: &ModelFrame,
    horizons: &[usize],
) -> Result<CounterfactualProjection> {
    if horizons.is_empty() {
        return Err(CoreError::invalid("at least one projection horizon required"));
    }

    // The treated block's post-intervention rows carry the dates and
    // control values the projection conditions on.
    let mut dates = Vec::new();
    let mut controls = Vec::new();
    let mut x_start = None;
    for i in 0..frame.n() {
        if frame.reg_i[i] != 1.0 {
            continue;
        }
        if frame.int_t[i] == 1.0 {
            dates.push(frame.dates[i]);
            let dnt = if frame.with_controls { frame.dnt[i] } else { 0.0 };
            controls.push((dnt, frame.dow[i]));
            if x_start.is_none() {
                return Err(CoreError::invalid(
                    "no pre-intervention day on the treated block to start the projection from",
                ));
            }
        } else {
            x_start = Some(frame.x[i]);
        }
    }
    let x0 = x_start.ok_or_else(|| {
        CoreError::invalid("treated block has no pre-intervention rows")
    })?;
    let n_post = dates.len();
    if n_post == 0 {
        return Err(CoreError::invalid("treated block has no post-intervention rows"));
    }
    for &h in horizons {
        if h == 0 || h > n_post {
            return Err(CoreError::invalid(format!(
                "horizon {h} outside the post-period (1..={n_post} days)"
            )));
        }
    }

    let support_max = fit
        .smooth
        .as_ref()
        .map(|s| s.basis.x_min + s.basis.x_range);
    let mut warnings = Vec::new();
    let mut extrapolated_to: Option<f64> = None;

    let mut run_path = |delta_override: Option<f64>| -> Vec<f64> {
        let mut x = x0;
        let mut daily = Vec::with_capacity(n_post);
        for &(dnt, dow) in &controls {
            if let Some(sup) = support_max {
                if x > sup {
                    let worst = extrapolated_to.get_or_insert(x);
                    if x > *worst {
                        *worst = x;
                    }
                }
            }
            let row = fit.design_row(x, true, true, dnt, dow);
            let yhat = fit.eta_for_row(&row, delta_override).exp();
            daily.push(yhat);
            x += yhat;
        }
        daily
    };

    let actual_fitted_daily = run_path(None);
    let counterfactual_daily = run_path(Some(0.0));
    if let (Some(worst), Some(sup)) = (extrapolated_to, support_max) {
        warnings.push(format!(
            "projection reached cumulative cases {worst:.0}, beyond the smooth's fitted support \
             (max {sup:.0}); smooth extended linearly"
        ));
    }

    let mut cumulative_averted = Vec::with_capacity(n_post);
    let mut acc = 0.0;
    for k in 0..n_post {
        acc += counterfactual_daily[k] - actual_fitted_daily[k];
        cumulative_averted.push(acc);
    }

    let horizons_out = horizons
        .iter()
        .map(|&h| {
            let averted = cumulative_averted[h - 1];
            let cum_cf: f64 = counterfactual_daily[..h].iter().sum();
            HorizonSummary {
                horizon: h,
                averted,
                percent_reduction: 100.0 * averted / cum_cf,
            }
        })
        .collect();

    Ok(CounterfactualProjection {
        dates,
        actual_fitted_daily,
        counterfactual_daily,
        cumulative_averted,
        horizons: horizons_out,
        warnings,
    })
}

impl CounterfactualProjection {
    /// CSV export: one row per projected day.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,fitted_daily,counterfactual_daily,cumulative_averted\n");
        for k in 0..self.dates.len() {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4}\n",
                self.dates[k],
                self.actual_fitted_daily[k],
                self.counterfactual_daily[k],
                self.cumulative_averted[k]
            ));
        }
        out
    }
}

/// Configuration for a Monte Carlo calibration run: simulate panels with a
/// known interaction effect and refit them with the production pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Number of simulated panels.
    pub n_sims: usize,
    /// Regions per panel (one treated plus `n_regions − 1` donors).
    pub n_regions: usize,
    /// Days simulated after the start date.
    pub horizon: usize,
    /// 0-based day index at which the intervention switches on.
    pub intervention_day: usize,
    /// Growth curve shared by every region (`rho` is ignored; the rate
    /// comes from `truth`).
    pub spec: ParametricGrowthSpec,
    /// Data-generating coefficients; `truth.delta` is the target.
    pub truth: GrowthCoefficients,
    /// Count distribution for the simulated increments.
    pub response: ResponseFamily,
    /// Family used when refitting.
    pub fit_family: Family,
    /// Whether the refit includes the penalized time smooth.
    pub fit_smooth: bool,
    /// Base seed; simulation `i` uses `seed + i`.
    pub seed: u64,
}

impl Default for CalibrationConfig {
    /// A well-conditioned benchmark: six regions growing exponentially at
    /// about 4% per day, a 120-day horizon with the intervention on day 80,
    /// Poisson counts, and an exponential-growth Poisson refit.
    fn default() -> Self {
        CalibrationConfig {
            n_sims: 100,
            n_regions: 6,
            horizon: 120,
            intervention_day: 80,
            spec: ParametricGrowthSpec {
                family: GrowthFamily::EG,
                rho: 0.04,
                p: 1.0,
                k: None,
                a: None,
                x0: 100.0,
            },
            truth: GrowthCoefficients {
                alpha: 0.04f64.ln(),
                beta: -0.2,
                gamma: 0.1,
                delta: -0.5,
                xi: Vec::new(),
                p: 1.0,
            },
            response: ResponseFamily::Poisson,
            fit_family: Family::Poisson,
            fit_smooth: false,
            seed: 7,
        }
    }
}

/// Aggregate results of a calibration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Simulations that produced an estimate.
    pub n_ok: usize,
    /// Simulations that errored anywhere in the pipeline.
    pub n_failed: usize,
    /// Per-failure messages, tagged with the simulation index.
    pub failures: Vec<String>,
    /// Mean of δ̂ across successful simulations.
    pub mean_delta: f64,
    /// Sample standard deviation of δ̂.
    pub sd_delta: f64,
    /// Mean of the model standard errors.
    pub mean_se: f64,
    /// Fraction of simulations whose 95% Wald interval covers the truth.
    pub coverage95: f64,
    /// Injected effect, repeated here so the result is self-describing.
    pub true_delta: f64,
}

/// Runs the calibration experiment described by `cfg`.
///
/// Each simulation draws a fresh panel, builds a uniform-diagonal synthetic
/// control for the treated region (the donors are exchangeable by
/// construction, so there is nothing for the nested selection to learn),
/// assembles the regression frame without testing controls (the simulator
/// does not model them), and refits. Simulations run in parallel and are
/// seeded by index, so results do not depend on scheduling. Errors in
/// individual simulations are collected rather than fatal; the run aborts
/// only when fewer than half succeed.
pub fn calibrate(cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    if cfg.n_sims < 2 {
        return Err(CoreError::invalid("calibration needs at least 2 simulations"));
    }
    if cfg.n_regions < 3 {
        return Err(CoreError::invalid(
            "calibration needs at least 3 regions (one treated, two donors)",
        ));
    }
    if cfg.intervention_day < 3 {
        return Err(CoreError::invalid(
            "intervention day must be at least 3 to leave a matching window",
        ));
    }
    let treated = "treated";
    let mut specs: Vec<(String, ParametricGrowthSpec)> =
        vec![(treated.to_string(), cfg.spec)];
    for r in 1..cfg.n_regions {
        specs.push((format!("donor-{r:02}"), cfg.spec));
    }
    let start_date = NaiveDate::from_ymd_opt(2020, 9, 1).unwrap();

    let outcomes: Vec<std::result::Result<(f64, f64), String>> = (0..cfg.n_sims)
        .into_par_iter()
        .map(|i| {
            calibration_estimate(cfg, &specs, treated, start_date, i)
                .map_err(|e| format!("simulation {i}: {e}"))
        })
        .collect();

    let mut estimates = Vec::with_capacity(cfg.n_sims);
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(pair) => estimates.push(pair),
            Err(msg) => failures.push(msg),
        }
    }
    let n_ok = estimates.len();
    if n_ok < cfg.n_sims.div_ceil(2) || n_ok < 2 {
        return Err(CoreError::convergence(format!(
            "calibration failed in {} of {} simulations; first failure: {}",
            failures.len(),
            cfg.n_sims,
            failures.first().map(String::as_str).unwrap_or("none recorded")
        )));
    }

    let nf = n_ok as f64;
    let mean_delta = estimates.iter().map(|(d, _)| d).sum::<f64>() / nf;
    let var = estimates
        .iter()
        .map(|(d, _)| (d - mean_delta) * (d - mean_delta))
        .sum::<f64>()
        / (nf - 1.0);
    let mean_se = estimates.iter().map(|(_, se)| se).sum::<f64>() / nf;
    let covered = estimates
        .iter()
        .filter(|(d, se)| (d - cfg.truth.delta).abs() <= 1.96 * se)
        .count();

    Ok(CalibrationResult {
        n_ok,
        n_failed: failures.len(),
        failures,
        mean_delta,
        sd_delta: var.sqrt(),
        mean_se,
        coverage95: covered as f64 / nf,
        true_delta: cfg.truth.delta,
    })
}

/// One simulation draw and refit; returns `(δ̂, se)`.
fn calibration_estimate(
    cfg: &CalibrationConfig,
    specs: &[(String, ParametricGrowthSpec)],
    treated: &str,
    start_date: NaiveDate,
    index: usize,
) -> Result<(f64, f64)> {
    let sim = simulate_panel(
        specs,
        treated,
        &cfg.truth,
        cfg.horizon,
        cfg.intervention_day,
        cfg.response,
        start_date,
        cfg.seed.wrapping_add(index as u64),
    )?;
    let panel = &sim.panel;
    let pre_end = panel.dates[cfg.intervention_day - 1];
    let intervention = panel.dates[cfg.intervention_day];

    let setup = build_donor_setup(panel, treated, pre_end, false)?;
    let m = setup.u1.len();
    let v = vec![1.0 / m as f64; m];
    let weights = solve_weights(&setup, &v)?;
    let z1: Vec<f64> = setup.z1.iter().copied().collect();
    let zw = &setup.z0 * &weights;
    let synth_pre: Vec<f64> = zw.iter().copied().collect();
    let (pre_r2, pre_pearson, _) = fit_quality(&z1, &synth_pre)?;
    let pairs: Vec<(String, f64)> = setup
        .donor_ids
        .iter()
        .cloned()
        .zip(weights.iter().copied())
        .collect();
    let synthetic = panel.weighted_series(&pairs)?;
    let synth = SynthFit {
        treated: treated.to_string(),
        donor_ids: setup.donor_ids.clone(),
        weights: weights.iter().copied().collect(),
        mspe: mspe(&setup, &weights),
        v,
        pre_r2,
        pre_pearson,
        pre_start: panel.dates[1],
        pre_end,
        synthetic,
        degenerate_v: false,
    };

    let frame = build_frame(panel, &synth, false, intervention)?;
    let fit_res = fit(&frame, cfg.fit_family, cfg.fit_smooth, &FitOptions::default())?;
    fit_res
        .coef("IntReg")
        .ok_or_else(|| CoreError::numerical("fit lost the interaction column"))
}

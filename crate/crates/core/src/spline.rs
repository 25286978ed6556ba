//! Low-rank penalized spline basis for the smooth cumulative-cases term.
//!
//! The smooth is a one-dimensional thin-plate-style regression spline: a
//! radial cubic kernel `G(r) = |r|³ / 12` placed at `q` knots chosen as
//! quantiles of the distinct covariate values, constrained to the null
//! space of the polynomial trend so the kernel coefficients carry only
//! curvature, plus an explicit linear column. With the constraint in place
//! the quadratic form in the kernel coefficients equals the integrated
//! squared second derivative of the smooth, which is the penalty used by
//! the model fit.
//!
//! Basis columns are centered (the model has its own intercept) and scaled
//! to unit root-mean-square so the penalized least-squares systems stay
//! well conditioned; the penalty matrix is transformed accordingly and
//! normalised by its largest absolute entry, with the normaliser kept for
//! anyone needing the raw roughness scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::{Matrix, Vector};

/// Penalized spline basis built on one covariate sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothBasis {
    /// Number of knots.
    pub q: usize,
    /// Knot locations on the rescaled `[0, 1]` axis.
    pub knots: Vec<f64>,
    /// Covariate minimum (raw scale) used for rescaling.
    pub x_min: f64,
    /// Covariate range (raw scale) used for rescaling.
    pub x_range: f64,
    /// Null-space basis of the linear trend at the knots, `q × (q − 2)`.
    pub z: Matrix,
    /// Column means subtracted from the raw basis columns.
    pub col_means: Vec<f64>,
    /// Root-mean-square scale divided out of each centered column.
    pub col_scale: Vec<f64>,
    /// Design columns for the build sample, `n × (q − 1)`.
    pub b: Matrix,
    /// Penalty matrix on the scaled coefficients, `(q − 1) × (q − 1)`,
    /// normalised to unit largest entry.
    pub s: Matrix,
    /// Normaliser divided out of the penalty: `βᵀSβ · s_max` is the
    /// integrated squared second derivative of the fitted smooth.
    pub s_max: f64,
}

fn kernel(r: f64) -> f64 {
    let a = r.abs();
    a * a * a / 12.0
}

fn kernel_deriv(r: f64) -> f64 {
    r * r.abs() / 4.0
}

/// Type-7 (linear interpolation) quantiles of an ascending sample.
pub fn quantiles_type7(sorted: &[f64], probs: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    probs
        .iter()
        .map(|&p| {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = h - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        })
        .collect()
}

/// Deterministic orthonormal basis of the null space of `[1, k]ᵀ` at the
/// knots, built by modified Gram–Schmidt over the coordinate directions
/// with a fixed sign convention.
fn trend_null_basis(knots: &[f64]) -> Result<Matrix> {
    let q = knots.len();
    let t1 = DVector::from_element(q, 1.0 / (q as f64).sqrt());
    let mean_k = knots.iter().sum::<f64>() / q as f64;
    let mut t2 = DVector::from_iterator(q, knots.iter().map(|k| k - mean_k));
    let t2_norm = t2.norm();
    if t2_norm < 1e-12 {
        return Err(CoreError::invalid("degenerate knots: zero spread"));
    }
    t2 /= t2_norm;

    let mut cols: Vec<Vector> = Vec::with_capacity(q - 2);
    for i in 0..q {
        if cols.len() == q - 2 {
            break;
        }
        let mut v = DVector::zeros(q);
        v[i] = 1.0;
        for _ in 0..2 {
            let c1 = t1.dot(&v);
            v -= &t1 * c1;
            let c2 = t2.dot(&v);
            v -= &t2 * c2;
            for z in &cols {
                let c = z.dot(&v);
                v -= z * c;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            let lead = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .map(|(idx, _)| idx)
                .unwrap();
            if v[lead] < 0.0 {
                v = -v;
            }
            cols.push(v);
        }
    }
    if cols.len() != q - 2 {
        return Err(CoreError::numerical(
            "failed to construct the trend null space at the knots",
        ));
    }
    Ok(Matrix::from_columns(&cols))
}

/// Builds the penalized spline basis on the covariate sample `x`
/// (raw scale) with `q` knots.
///
/// Knots are type-7 quantiles of the distinct rescaled values; the sample
/// must contain at least `q` distinct values spanning a positive range.
pub fn build_smooth_basis(x: &[f64], q: usize) -> Result<SmoothBasis> {
    if q < 4 {
        return Err(CoreError::invalid("need at least 4 knots for a cubic smooth"));
    }
    if x.len() < q {
        return Err(CoreError::invalid(format!(
            "sample of {} values cannot support {q} knots",
            x.len()
        )));
    }
    let x_min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x_range = x_max - x_min;
    if !(x_range.is_finite() && x_range > 0.0) {
        return Err(CoreError::invalid("covariate has zero or non-finite range"));
    }
    let xs: Vec<f64> = x.iter().map(|v| (v - x_min) / x_range).collect();

    let mut uniq = xs.clone();
    uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    uniq.dedup();
    if uniq.len() < q {
        return Err(CoreError::invalid(format!(
            "only {} distinct covariate values for {q} knots",
            uniq.len()
        )));
    }
    let probs: Vec<f64> = (0..q).map(|j| j as f64 / (q - 1) as f64).collect();
    let knots = quantiles_type7(&uniq, &probs);
    for w in knots.windows(2) {
        if w[1] <= w[0] {
            return Err(CoreError::invalid(
                "tied knots: covariate too concentrated for the requested basis size",
            ));
        }
    }

    let z = trend_null_basis(&knots)?;
    let n = xs.len();

    // E: kernel evaluations at the sample; Omega: kernel Gram at the knots.
    let mut e = DMatrix::zeros(n, q);
    for (i, &v) in xs.iter().enumerate() {
        for (j, &k) in knots.iter().enumerate() {
            e[(i, j)] = kernel(v - k);
        }
    }
    let mut omega = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            omega[(i, j)] = kernel(knots[i] - knots[j]);
        }
    }

    let ez = &e * &z;
    let ncol = q - 1;
    let mut b = DMatrix::zeros(n, ncol);
    b.view_mut((0, 0), (n, q - 2)).copy_from(&ez);
    for i in 0..n {
        b[(i, ncol - 1)] = xs[i];
    }

    let mut col_means = vec![0.0; ncol];
    for c in 0..ncol {
        col_means[c] = b.column(c).sum() / n as f64;
        for i in 0..n {
            b[(i, c)] -= col_means[c];
        }
    }
    let mut col_scale = vec![1.0; ncol];
    for c in 0..ncol {
        let rms = (b.column(c).iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if rms > 0.0 {
            col_scale[c] = rms;
            for i in 0..n {
                b[(i, c)] /= rms;
            }
        }
    }

    let s_top = z.transpose() * &omega * &z;
    let mut s = DMatrix::zeros(ncol, ncol);
    s.view_mut((0, 0), (q - 2, q - 2)).copy_from(&s_top);
    for i in 0..ncol {
        for j in 0..ncol {
            s[(i, j)] /= col_scale[i] * col_scale[j];
        }
    }
    let s_max = s.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if s_max <= 0.0 {
        return Err(CoreError::numerical("identically zero spline penalty"));
    }
    s /= s_max;
    // Symmetrise away rounding asymmetry from the scaling loop.
    let st = s.transpose();
    s = (&s + &st) * 0.5;

    Ok(SmoothBasis {
        q,
        knots,
        x_min,
        x_range,
        z,
        col_means,
        col_scale,
        b,
        s,
        s_max,
    })
}

impl SmoothBasis {
    /// Number of design columns contributed by the smooth.
    pub fn ncols(&self) -> usize {
        self.q - 1
    }

    /// Rank of the penalty (the curvature dimensions; the linear column is
    /// unpenalized).
    pub fn penalty_rank(&self) -> usize {
        self.q - 2
    }

    /// Design row for a raw-scale covariate value.
    ///
    /// Inside the build range this reproduces the training columns exactly;
    /// beyond it the smooth is continued linearly from the boundary with
    /// its analytic boundary slope, which both matches the natural behaviour
    /// of the constrained kernel and avoids catastrophic cancellation in
    /// the cubic kernel far from the knots.
    pub fn eval_row(&self, x_raw: f64) -> Vec<f64> {
        let xs = (x_raw - self.x_min) / self.x_range;
        if xs < 0.0 {
            let base = self.row_at(0.0);
            let slope = self.deriv_row_at(0.0);
            base.iter().zip(&slope).map(|(b, s)| b + xs * s).collect()
        } else if xs > 1.0 {
            let base = self.row_at(1.0);
            let slope = self.deriv_row_at(1.0);
            base.iter()
                .zip(&slope)
                .map(|(b, s)| b + (xs - 1.0) * s)
                .collect()
        } else {
            self.row_at(xs)
        }
    }

    fn row_at(&self, xs: f64) -> Vec<f64> {
        let q = self.q;
        let mut grow = vec![0.0; q];
        for (j, &k) in self.knots.iter().enumerate() {
            grow[j] = kernel(xs - k);
        }
        let mut out = vec![0.0; q - 1];
        for c in 0..q - 2 {
            let mut acc = 0.0;
            for j in 0..q {
                acc += grow[j] * self.z[(j, c)];
            }
            out[c] = acc;
        }
        out[q - 2] = xs;
        for c in 0..q - 1 {
            out[c] = (out[c] - self.col_means[c]) / self.col_scale[c];
        }
        out
    }

    fn deriv_row_at(&self, xs: f64) -> Vec<f64> {
        let q = self.q;
        let mut grow = vec![0.0; q];
        for (j, &k) in self.knots.iter().enumerate() {
            grow[j] = kernel_deriv(xs - k);
        }
        let mut out = vec![0.0; q - 1];
        for c in 0..q - 2 {
            let mut acc = 0.0;
            for j in 0..q {
                acc += grow[j] * self.z[(j, c)];
            }
            out[c] = acc;
        }
        out[q - 2] = 1.0;
        for c in 0..q - 1 {
            out[c] /= self.col_scale[c];
        }
        out
    }
}

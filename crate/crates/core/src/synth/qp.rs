//! Exact quadratic programming on the probability simplex.
//!
//! Solves `min_w  wᵀAw − 2bᵀw` subject to `w ≥ 0`, `Σw = 1` for symmetric
//! positive semi-definite `A` by a primal active-set method: at each step
//! the equality-constrained subproblem on the currently free coordinates is
//! solved, coordinates are clamped to zero when a step would cross the
//! boundary, and zero coordinates re-enter when their bound multiplier
//! turns negative. For the synthetic-control weighting problem
//! `A = U₀ᵀVU₀`, `b = U₀ᵀVu₁`, so the objective equals
//! `(u₁ − U₀w)ᵀV(u₁ − U₀w)` up to the constant `u₁ᵀVu₁`.
//!
//! Donor predictor columns are often nearly collinear (cumulative series
//! track each other closely), so working-set systems can be numerically
//! singular: plain LU then takes garbage steps and the iteration stalls in
//! a clamp/release cycle on a degenerate coordinate. The solver watches
//! for repeated working-set optima and escalates on a stall — first to a
//! spectral subproblem solver (nullspace parameterisation of the sum
//! constraint, symmetric eigendecomposition, relative-cutoff pseudo-
//! inverse, minimum-norm representative), then to ridge-regularised runs
//! whose support is polished back onto the original objective. Every
//! returned solution must pass a relative-slack KKT certificate and
//! dominate all simplex vertices; instances that survive the whole ladder
//! without a certified solution report a convergence error carrying the
//! best objective seen. Well-conditioned instances never leave the plain
//! LU path.
//!
//! The kernel is generic over the scalar so the same code serves `f64`
//! production use and lower-precision experimentation.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, RealField};
use num_traits::FromPrimitive;

use crate::error::{CoreError, Result};

/// Tolerances and iteration budget for [`solve_simplex_qp`].
#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Feasibility slack: subproblem solutions with coordinates above
    /// `-feas_tol` count as non-negative.
    pub feas_tol: f64,
    /// Relative KKT slack on the bound multipliers of clamped coordinates
    /// used by the inner iteration's release test, scaled by the gradient
    /// magnitude.
    pub kkt_tol: f64,
    /// Hard cap on active-set changes within one run before giving up.
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            feas_tol: 1e-12,
            kkt_tol: 1e-10,
            max_iter: 500,
        }
    }
}

/// Escalation ladder: subproblem solver paired with a ridge relative to
/// the mean diagonal of `A`. The first rung is the fast path; later rungs
/// only run after a stall or a failed certificate on every earlier rung.
const LADDER: [(Subproblem, f64); 5] = [
    (Subproblem::Lu, 0.0),
    (Subproblem::Spectral, 0.0),
    (Subproblem::Spectral, 1e-9),
    (Subproblem::Spectral, 1e-6),
    (Subproblem::Spectral, 1e-3),
];

/// Relative slack of the KKT certificate every returned solution must pass.
const CERT_KKT_REL: f64 = 1e-5;

/// Relative eigenvalue cutoff of the spectral subproblem pseudo-inverse.
const SPECTRAL_CUTOFF_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Subproblem {
    Lu,
    Spectral,
}

/// Minimises `wᵀAw − 2bᵀw` over the simplex with default settings.
pub fn solve_simplex_qp<T>(a: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>>
where
    T: RealField + Copy + FromPrimitive,
{
    solve_simplex_qp_with(a, b, QpSettings::default())
}

/// Minimises `wᵀAw − 2bᵀw` over the simplex.
///
/// `a` must be symmetric positive semi-definite. The returned weights
/// satisfy `Σw = 1` exactly up to rounding, `w ≥ 0` after a final clamp of
/// sub-tolerance negatives, pass a relative-slack KKT certificate on the
/// original problem, and dominate every vertex of the simplex in objective
/// value.
pub fn solve_simplex_qp_with<T>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    settings: QpSettings,
) -> Result<DVector<T>>
where
    T: RealField + Copy + FromPrimitive,
{
    let n = b.len();
    if n == 0 {
        return Err(CoreError::invalid("empty QP"));
    }
    if a.nrows() != n || a.ncols() != n {
        return Err(CoreError::invalid(format!(
            "QP dimension mismatch: A is {}x{}, b has length {n}",
            a.nrows(),
            a.ncols()
        )));
    }

    let mut mean_diag = T::zero();
    for i in 0..n {
        mean_diag += a[(i, i)];
    }
    mean_diag /= T::from_usize(n).unwrap();

    let mut best_f: Option<T> = None;
    let mut last_grad_norm = T::zero();
    for &(solver, eps) in LADDER.iter() {
        let ridge = T::from_f64(eps).unwrap() * (T::one() + mean_diag);
        let mut a_r = a.clone();
        for i in 0..n {
            a_r[(i, i)] += ridge;
        }
        let w_r = match active_set_run(&a_r, b, solver, settings) {
            RunOutcome::Converged(w) => w,
            RunOutcome::Stalled => continue,
        };
        let candidate = if eps == 0.0 {
            Some(w_r)
        } else {
            // A ridge perturbs the optimum; prefer the exact re-solve on
            // the ridge solution's support, fall back to the ridge
            // solution itself when the certificate accepts it directly.
            polish_support(a, b, &w_r, settings)
                .or_else(|| certify(a, b, &w_r, settings).then_some(w_r))
        };
        if let Some(w) = candidate {
            let f = objective(a, b, &w);
            if best_f.map_or(true, |bf| f < bf) {
                best_f = Some(f);
            }
            let grad = (a * &w) * T::from_f64(2.0).unwrap() - b * T::from_f64(2.0).unwrap();
            last_grad_norm = grad.amax();
            if certify(a, b, &w, settings) && dominates_vertices(a, b, f) {
                return Ok(w);
            }
        }
    }
    let diag = match best_f {
        Some(f) => format!(
            "simplex QP stalled on a degenerate active set (best objective {f:?}, gradient sup-norm {last_grad_norm:?})"
        ),
        None => "simplex QP stalled on a degenerate active set with no verified iterate".to_string(),
    };
    Err(CoreError::convergence(diag))
}

enum RunOutcome<T> {
    Converged(DVector<T>),
    Stalled,
}

/// One primal active-set run. Stalls — a repeated working-set optimum, an
/// unsolvable working-set system, or an exhausted iteration budget — are
/// reported for the caller's escalation rather than as hard errors.
fn active_set_run<T>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    solver: Subproblem,
    settings: QpSettings,
) -> RunOutcome<T>
where
    T: RealField + Copy + FromPrimitive,
{
    let n = b.len();
    let feas_tol = T::from_f64(settings.feas_tol).unwrap();
    let kkt_tol = T::from_f64(settings.kkt_tol).unwrap();
    let two = T::from_f64(2.0).unwrap();

    let mut w = DVector::from_element(n, T::one() / T::from_usize(n).unwrap());
    let mut free = vec![true; n];

    // A feasible working-set optimum revisited later means the iteration
    // is cycling on a degenerate coordinate: with a positive definite
    // reduced Hessian the objective strictly decreases between such
    // states, so only singular instances can come back. Transient working
    // sets from partial steps are not tracked — those may legitimately
    // recur. Bitmask tracking covers the solver's intended dimension
    // range; larger problems fall back to the iteration budget alone.
    let mut seen: HashSet<u64> = HashSet::new();

    for _ in 0..settings.max_iter {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let k = idx.len();
        let sol = match solve_working_set(a, b, &idx, solver) {
            Some(sol) => sol,
            None => return RunOutcome::Stalled,
        };

        let feasible = (0..k).all(|p| sol[p] >= -feas_tol);
        if feasible {
            if n <= 64 {
                let mask = free
                    .iter()
                    .enumerate()
                    .fold(0u64, |m, (i, &fr)| if fr { m | (1u64 << i) } else { m });
                if !seen.insert(mask) {
                    return RunOutcome::Stalled
                }
            }
            for (p, &i) in idx.iter().enumerate() {
                w[i] = if sol[p] > T::zero() { sol[p] } else { T::zero() };
            }
            for i in 0..n {
                if !free[i] {
                    w[i] = T::zero();
                }
            }
            let grad = (a * &w) * two - b * two;
            // The sum constraint's multiplier is re-derived from the
            // gradient at the updated point rather than taken from the
            // bordered solve: on ill-conditioned working sets the solved
            // multiplier carries enough error to trigger phantom releases
            // that zero-step straight back into the same working set. At a
            // working-set optimum the free gradient components all equal
            // μ, so their mean is the accurate estimate. The release
            // threshold likewise scales with the gradient, since an
            // absolute slack would sit far below rounding noise on
            // large-count problems.
            let mut mu = T::zero();
            for &i in &idx {
                mu += grad[i];
            }
            mu /= T::from_usize(k.max(1)).unwrap();
            let scale = T::one() + grad.amax() + mu.abs();
            let mut worst = -kkt_tol * scale;
            let mut worst_j = None;
            for j in 0..n {
                if !free[j] {
                    let lag = grad[j] - mu;
                    if lag < worst {
                        worst = lag;
                        worst_j = Some(j);
                    }
                }
            }
            match worst_j {
                None => {
                    let total: T = w.iter().fold(T::zero(), |acc, &x| acc + x);
                    if total > T::zero() {
                        w /= total;
                    }
                    return RunOutcome::Converged(w);
                }
                Some(j) => free[j] = true,
            }
        } else {
            let mut alpha = T::one();
            let mut block = None;
            for (p, &i) in idx.iter().enumerate() {
                if sol[p] < -feas_tol && w[i] > sol[p] {
                    let step = w[i] / (w[i] - sol[p]);
                    if step < alpha {
                        alpha = step;
                        block = Some(i);
                    }
                }
            }
            let j = match block {
                Some(j) => j,
                None => return RunOutcome::Stalled,
            };
            for (p, &i) in idx.iter().enumerate() {
                let wi = w[i];
                w[i] = wi + alpha * (sol[p] - wi);
            }
            w[j] = T::zero();
            free[j] = false;
        }
    }
    RunOutcome::Stalled
}

/// Re-solves the original equality-constrained problem on the support of a
/// ridge-assisted solution and accepts the result only when it certifies
/// as a stationary point of the original problem.
fn polish_support<T>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    w_ridge: &DVector<T>,
    settings: QpSettings,
) -> Option<DVector<T>>
where
    T: RealField + Copy + FromPrimitive,
{
    let n = b.len();
    let feas_tol = T::from_f64(settings.feas_tol).unwrap();
    let idx: Vec<usize> = (0..n).filter(|&i| w_ridge[i] > T::zero()).collect();
    if idx.is_empty() {
        return None;
    }
    let k = idx.len();
    let sol = solve_working_set(a, b, &idx, Subproblem::Spectral)?;
    if (0..k).any(|p| sol[p] < -feas_tol) {
        return None;
    }
    let mut w = DVector::zeros(n);
    for (p, &i) in idx.iter().enumerate() {
        w[i] = if sol[p] > T::zero() { sol[p] } else { T::zero() };
    }
    let total: T = w.iter().fold(T::zero(), |acc, &x| acc + x);
    if total <= T::zero() {
        return None;
    }
    w /= total;
    certify(a, b, &w, settings).then_some(w)
}

/// Relative-slack KKT certificate on the original problem: the candidate
/// must be feasible, the gradient components over its support must agree
/// (they all equal the sum constraint's multiplier at a true optimum), and
/// the bound multipliers of the zero coordinates must be non-negative.
fn certify<T>(a: &DMatrix<T>, b: &DVector<T>, w: &DVector<T>, settings: QpSettings) -> bool
where
    T: RealField + Copy + FromPrimitive,
{
    let n = b.len();
    let feas_tol = T::from_f64(settings.feas_tol).unwrap();
    if w.iter().any(|&x| x < -feas_tol) {
        return false;
    }
    let support: Vec<usize> = (0..n).filter(|&i| w[i] > T::zero()).collect();
    if support.is_empty() {
        return false;
    }
    let two = T::from_f64(2.0).unwrap();
    let grad = (a * w) * two - b * two;
    let mut mu = T::zero();
    for &i in &support {
        mu += grad[i];
    }
    mu /= T::from_usize(support.len()).unwrap();
    let scale = T::one() + grad.amax() + mu.abs();
    let slack = T::from_f64(CERT_KKT_REL).unwrap() * scale;
    for &i in &support {
        if (grad[i] - mu).abs() > slack {
            return false;
        }
    }
    let mut in_support = vec![false; n];
    for &i in &support {
        in_support[i] = true;
    }
    for j in 0..n {
        if !in_support[j] && grad[j] - mu < -slack {
            return false;
        }
    }
    true
}

fn objective<T>(a: &DMatrix<T>, b: &DVector<T>, w: &DVector<T>) -> T
where
    T: RealField + Copy,
{
    let aw = a * w;
    let mut f = T::zero();
    for i in 0..w.len() {
        f += w[i] * aw[i] - (b[i] + b[i]) * w[i];
    }
    f
}

/// The minimiser must do at least as well as every vertex `e_i`, whose
/// objective is `A_ii − 2b_i`.
fn dominates_vertices<T>(a: &DMatrix<T>, b: &DVector<T>, f: T) -> bool
where
    T: RealField + Copy + FromPrimitive,
{
    let n = b.len();
    let mut best_vertex = T::zero();
    for i in 0..n {
        let fv = a[(i, i)] - (b[i] + b[i]);
        if i == 0 || fv < best_vertex {
            best_vertex = fv;
        }
    }
    let tol = T::from_f64(1e-9).unwrap() * (T::one() + f.abs() + best_vertex.abs());
    f <= best_vertex + tol
}

/// Solves the equality-constrained subproblem on the free coordinates; the
/// last entry of the result is the multiplier of the sum constraint.
///
/// The LU variant factors the bordered KKT system (with a relative-ridge
/// retry when singular); the spectral variant eliminates the sum
/// constraint with an orthonormal nullspace basis and pseudo-inverts the
/// reduced Hessian through its eigendecomposition, returning the
/// minimum-norm stationary point, which keeps degenerate systems accurate
/// and deterministic.
fn solve_working_set<T>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    idx: &[usize],
    solver: Subproblem,
) -> Option<DVector<T>>
where
    T: RealField + Copy + FromPrimitive,
{
    match solver {
        Subproblem::Lu => solve_working_set_lu(a, b, idx),
        Subproblem::Spectral => solve_working_set_spectral(a, b, idx),
    }
}

fn solve_working_set_lu<T>(a: &DMatrix<T>, b: &DVector<T>, idx: &[usize]) -> Option<DVector<T>>
where
    T: RealField + Copy + FromPrimitive,
{
    let k = idx.len();
    let two = T::from_f64(2.0).unwrap();
    let mut kkt = DMatrix::<T>::zeros(k + 1, k + 1);
    let mut rhs = DVector::<T>::zeros(k + 1);
    for (p, &i) in idx.iter().enumerate() {
        for (q, &j) in idx.iter().enumerate() {
            kkt[(p, q)] = two * a[(i, j)];
        }
        kkt[(p, k)] = T::one();
        kkt[(k, p)] = T::one();
        rhs[p] = two * b[i];
    }
    rhs[k] = T::one();

    if let Some(sol) = kkt.clone().lu().solve(&rhs) {
        if sol.iter().all(|x| x.is_finite()) {
            return Some(sol);
        }
    }
    let mut trace = T::zero();
    for &i in idx {
        trace += a[(i, i)];
    }
    let ridge = T::from_f64(1e-10).unwrap() * (T::one() + trace / T::from_usize(k.max(1)).unwrap());
    let mut kkt2 = kkt;
    for p in 0..k {
        kkt2[(p, p)] += two * ridge;
    }
    kkt2.lu()
        .solve(&rhs)
        .filter(|sol| sol.iter().all(|x| x.is_finite()))
}

fn solve_working_set_spectral<T>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    idx: &[usize],
) -> Option<DVector<T>>
where
    T: RealField + Copy + FromPrimitive,
{
    let k = idx.len();
    let two = T::from_f64(2.0).unwrap();
    let mut a_f = DMatrix::<T>::zeros(k, k);
    let mut b_f = DVector::<T>::zeros(k);
    for (p, &i) in idx.iter().enumerate() {
        for (q, &j) in idx.iter().enumerate() {
            a_f[(p, q)] = a[(i, j)];
        }
        b_f[p] = b[i];
    }

    let x = if k == 1 {
        DVector::from_element(1, T::one())
    } else {
        // Feasible base point plus a Helmert-style orthonormal basis of
        // the zero-sum subspace.
        let x0 = DVector::from_element(k, T::one() / T::from_usize(k).unwrap());
        let mut z = DMatrix::<T>::zeros(k, k - 1);
        for c in 0..k - 1 {
            let len = T::from_usize((c + 1) * (c + 2)).unwrap().sqrt();
            for r in 0..=c {
                z[(r, c)] = T::one() / len;
            }
            z[(c + 1, c)] = -T::from_usize(c + 1).unwrap() / len;
        }
        let reduced = z.transpose() * &a_f * &z;
        let r = z.transpose() * (&b_f - &a_f * &x0);
        let eig = reduced.symmetric_eigen();
        let lam_max = eig
            .eigenvalues
            .iter()
            .fold(T::zero(), |acc, &l| if l > acc { l } else { acc });
        let cutoff = T::from_f64(SPECTRAL_CUTOFF_REL).unwrap() * lam_max;
        let mut y = DVector::<T>::zeros(k - 1);
        if lam_max > T::zero() {
            for j in 0..k - 1 {
                let lam = eig.eigenvalues[j];
                if lam > cutoff {
                    let qj = eig.eigenvectors.column(j);
                    let coef = qj.dot(&r) / lam;
                    y += qj * coef;
                }
            }
        }
        x0 + z * y
    };

    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // Multiplier consistent with the bordered-system convention
    // 2·A_F·x + μ·1 = 2·b_F.
    let ax = &a_f * &x;
    let mut mu = T::zero();
    for p in 0..k {
        mu += two * b_f[p] - two * ax[p];
    }
    mu /= T::from_usize(k).unwrap();
    if !mu.is_finite() {
        return None;
    }
    let mut sol = DVector::<T>::zeros(k + 1);
    for p in 0..k {
        sol[p] = x[p];
    }
    sol[k] = mu;
    Some(sol)
}

/// Objective value `(u₁ − U₀w)ᵀ diag(v) (u₁ − U₀w)` for diagnostics and
/// cross-checks against the quadratic form passed to the solver.
pub fn weighted_discrepancy<T>(u1: &DVector<T>, u0: &DMatrix<T>, v: &DVector<T>, w: &DVector<T>) -> T
where
    T: RealField + Copy,
{
    let resid = u1 - u0 * w;
    let mut acc = T::zero();
    for i in 0..resid.len() {
        acc += v[i] * resid[i] * resid[i];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unconstrained_interior_solution_is_returned() {
        // A = I, b = (0.5, 0.3, 0.2): the unconstrained minimiser of
        // wᵀw − 2bᵀw subject to Σw = 1 is b itself (already on the simplex).
        let a = DMatrix::<f64>::identity(3, 3);
        let b = DVector::from_vec(vec![0.5, 0.3, 0.2]);
        let w = solve_simplex_qp(&a, &b).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(w[2], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn boundary_solution_clamps_negative_coordinate() {
        // b pulls the first coordinate negative; the constrained optimum
        // puts zero weight there and splits the rest by the KKT conditions.
        let a = DMatrix::<f64>::identity(3, 3);
        let b = DVector::from_vec(vec![-0.4, 0.9, 0.5]);
        let w = solve_simplex_qp(&a, &b).unwrap();
        assert_abs_diff_eq!(w[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.7, epsilon = 1e-10);
        assert_abs_diff_eq!(w[2], 0.3, epsilon = 1e-10);
        assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn works_in_f32() {
        let a = DMatrix::<f32>::identity(2, 2);
        let b = DVector::from_vec(vec![0.25f32, 0.75f32]);
        let w = solve_simplex_qp(&a, &b).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-5);
        assert!((w[1] - 0.75).abs() < 1e-5);
    }

    #[test]
    fn rank_deficient_instance_terminates_on_the_simplex() {
        // Two identical columns plus a third: A has a null direction on
        // every working set containing both twins, the shape that stalls a
        // plain active-set iteration. Any convex split between the twins is
        // optimal; the solver must return one of them, not cycle.
        let g = DMatrix::<f64>::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let target = DVector::from_vec(vec![0.6, 0.4]);
        let a = g.transpose() * &g;
        let b = g.transpose() * &target;
        let w = solve_simplex_qp(&a, &b).unwrap();
        assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-10);
        assert!(w.iter().all(|&x| x >= -1e-12));
        // Fitted values must match the (attainable) target.
        let fit = &g * &w;
        assert_abs_diff_eq!(fit[0], 0.6, epsilon = 1e-8);
        assert_abs_diff_eq!(fit[1], 0.4, epsilon = 1e-8);
    }

    #[test]
    fn badly_scaled_collinear_instance_is_certified() {
        // Near-collinear columns at surveillance-count scale (~1e5 per
        // entry, ~1e10 in A): the geometry that defeats plain LU working
        // sets. The solver must still return simplex-feasible weights whose
        // fitted values track the target, with the target inside the hull.
        let t0 = 6;
        let n = 5;
        let mut g = DMatrix::<f64>::zeros(t0, n);
        for r in 0..t0 {
            let base = 1.0e5 * (1.0 + 0.3 * r as f64);
            for c in 0..n {
                let tilt = 1.0 + 0.002 * (c as f64) * (r as f64);
                g[(r, c)] = base * tilt;
            }
        }
        // Target: a known convex combination, so the optimum residual is 0.
        let mix = DVector::from_vec(vec![0.4, 0.3, 0.2, 0.1, 0.0]);
        let target = &g * &mix;
        let a = g.transpose() * &g;
        let b = g.transpose() * &target;
        let w = solve_simplex_qp(&a, &b).unwrap();
        assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-10);
        assert!(w.iter().all(|&x| x >= -1e-12));
        let fit = &g * &w;
        for r in 0..t0 {
            assert!(
                (fit[r] - target[r]).abs() <= 1e-6 * target[r],
                "row {r}: fit {} vs target {}",
                fit[r],
                target[r]
            );
        }
    }
}

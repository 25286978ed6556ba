//! Derivative-free and quasi-Newton optimisers used by the nested
//! predictor-importance search and by smoothing-parameter selection.
//!
//! These are small, deterministic implementations tuned for the low
//! dimensions this crate needs (a handful to a few hundred parameters), not
//! general-purpose solvers.

/// Maximises a unimodal function on `[lo, hi]` by golden-section search.
///
/// Returns `(x, f(x))` at the bracket midpoint once the bracket is shorter
/// than `tol`. On a function that is not unimodal the result is a local
/// maximum inside the initial bracket.
pub fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Result of a multivariate minimisation.
#[derive(Debug, Clone)]
pub struct OptimResult {
    /// Best point found.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub fx: f64,
    /// Number of objective evaluations consumed.
    pub evals: usize,
}

/// Minimises `f` by the Nelder–Mead simplex method.
///
/// Uses the conventional reflection/expansion/contraction/shrink
/// coefficients (1, 2, ½, ½) and an initial simplex built by perturbing
/// each coordinate of `x0` by 5% (or a small absolute step at zero).
/// Stops when simplex spread in `x` and `f` drops below `1e-4` or the
/// evaluation budget is exhausted.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], max_evals: usize) -> OptimResult {
    let n = x0.len();
    let mut evals = 0usize;
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::MAX
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] = if p[i] != 0.0 { p[i] * 1.05 } else { 0.00025 };
        simplex.push(p);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();

    let (xatol, fatol) = (1e-4, 1e-4);
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| fvals[i].partial_cmp(&fvals[j]).unwrap());
        let simplex_sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let fvals_sorted: Vec<f64> = order.iter().map(|&i| fvals[i]).collect();
        simplex = simplex_sorted;
        fvals = fvals_sorted;

        let spread_x = simplex[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        let spread_f = fvals[1..]
            .iter()
            .map(|v| (v - fvals[0]).abs())
            .fold(0.0f64, f64::max);
        if spread_x <= xatol && spread_f <= fatol {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let combine = |alpha: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + alpha * (centroid[j] - simplex[n][j]))
                .collect()
        };

        let xr = combine(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < fvals[0] {
            let xe = combine(2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                fvals[n] = fe;
            } else {
                simplex[n] = xr;
                fvals[n] = fr;
            }
        } else if fr < fvals[n - 1] {
            simplex[n] = xr;
            fvals[n] = fr;
        } else {
            let (xc, fc) = if fr < fvals[n] {
                let xc = combine(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc: Vec<f64> = (0..n)
                    .map(|j| centroid[j] - 0.5 * (centroid[j] - simplex[n][j]))
                    .collect();
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fvals[n].min(fr) {
                simplex[n] = xc;
                fvals[n] = fc;
            } else {
                for i in 1..=n {
                    let p: Vec<f64> = (0..n)
                        .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                        .collect();
                    fvals[i] = eval(&p, &mut evals);
                    simplex[i] = p;
                }
            }
        }
    }

    let best = (0..=n)
        .min_by(|&i, &j| fvals[i].partial_cmp(&fvals[j]).unwrap())
        .unwrap();
    OptimResult {
        x: simplex[best].clone(),
        fx: fvals[best],
        evals,
    }
}

/// Forward-difference gradient with a fixed absolute step.
fn fd_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], fx: f64, evals: &mut usize) -> Vec<f64> {
    let h = 1.4901161193847656e-8;
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        *evals += 1;
        g[i] = (f(&xp) - fx) / h;
        xp[i] = x[i];
    }
    g
}

struct LineSearchHit {
    x: Vec<f64>,
    fx: f64,
    g: Vec<f64>,
}

/// Strong-Wolfe line search (sufficient decrease c₁ = 1e−4, curvature
/// c₂ = 0.9) with a bisection zoom phase. Returns `None` when no step
/// satisfying both conditions is found — the caller treats that as loss of
/// precision and stops, which is the conventional quasi-Newton behaviour on
/// functions with kinks.
fn wolfe_search(
    f: &impl Fn(&[f64]) -> f64,
    x: &[f64],
    dir: &[f64],
    fx: f64,
    slope: f64,
    alpha1: f64,
    evals: &mut usize,
) -> Option<LineSearchHit> {
    let (c1, c2) = (1e-4, 0.9);
    let n = x.len();
    let at = |a: f64, evals: &mut usize| -> (Vec<f64>, f64) {
        let xa: Vec<f64> = (0..n).map(|i| x[i] + a * dir[i]).collect();
        *evals += 1;
        let fa = f(&xa);
        (xa, fa)
    };
    let dphi = |xa: &[f64], fa: f64, evals: &mut usize| -> (Vec<f64>, f64) {
        let ga = fd_gradient(f, xa, fa, evals);
        let d: f64 = ga.iter().zip(dir).map(|(gi, di)| gi * di).sum();
        (ga, d)
    };

    let zoom = |mut a_lo: f64,
                mut a_hi: f64,
                mut f_lo: f64,
                evals: &mut usize|
     -> Option<LineSearchHit> {
        for _ in 0..12 {
            let a = 0.5 * (a_lo + a_hi);
            let (xa, fa) = at(a, evals);
            if !fa.is_finite() || fa > fx + c1 * a * slope || fa >= f_lo {
                a_hi = a;
                continue;
            }
            let (ga, d) = dphi(&xa, fa, evals);
            if d.abs() <= -c2 * slope {
                return Some(LineSearchHit { x: xa, fx: fa, g: ga });
            }
            if d * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
            }
            a_lo = a;
            f_lo = fa;
        }
        None
    };

    let mut a_prev = 0.0f64;
    let mut f_prev = fx;
    let mut a = alpha1.clamp(1e-14, 1.0);
    for iter in 0..10 {
        let (xa, fa) = at(a, evals);
        if !fa.is_finite() || fa > fx + c1 * a * slope || (iter > 0 && fa >= f_prev) {
            return zoom(a_prev, a, f_prev, evals);
        }
        let (ga, d) = dphi(&xa, fa, evals);
        if d.abs() <= -c2 * slope {
            return Some(LineSearchHit { x: xa, fx: fa, g: ga });
        }
        if d >= 0.0 {
            return zoom(a, a_prev, fa, evals);
        }
        a_prev = a;
        f_prev = fa;
        a = (2.0 * a).min(100.0);
    }
    None
}

/// Minimises `f` by BFGS with forward-difference gradients and a
/// strong-Wolfe line search. Stops when the gradient norm falls below
/// `1e-6`, the line search fails (precision loss on non-smooth objectives),
/// or after `max_iter` updates.
///
/// The first trial step of each line search follows the conventional
/// quasi-Newton warm-start rule `min(1, 1.01·2·(f_k − f_{k−1})/φ′(0))`,
/// which keeps early steps proportionate on badly scaled problems instead
/// of jumping a unit step through the landscape.
pub fn bfgs_min(f: impl Fn(&[f64]) -> f64, x0: &[f64], max_iter: usize) -> OptimResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    evals += 1;
    if !fx.is_finite() {
        return OptimResult { x, fx, evals };
    }
    let mut g = fd_gradient(&f, &x, fx, &mut evals);
    let gnorm0 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut old_fx = fx + gnorm0 / 2.0;
    let mut hinv = identity(n);

    for _ in 0..max_iter {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-6 {
            break;
        }
        let dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| hinv[i][j] * g[j]).sum::<f64>())
            .collect();
        let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if slope >= 0.0 {
            break;
        }
        let alpha1 = {
            let guess = 1.01 * 2.0 * (fx - old_fx) / slope;
            if guess.is_finite() && guess > 0.0 {
                guess.min(1.0)
            } else {
                1.0
            }
        };
        let hit = match wolfe_search(&f, &x, &dir, fx, slope, alpha1, &mut evals) {
            Some(h) if h.fx < fx => h,
            _ => break,
        };
        let s: Vec<f64> = (0..n).map(|i| hit.x[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| hit.g[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-10 {
            let rho = 1.0 / sy;
            // H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| hinv[i][j] * y[j]).sum::<f64>())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + rho * rho * yhy * s[i] * s[j]
                        + rho * s[i] * s[j];
                }
            }
        }
        old_fx = fx;
        x = hit.x;
        fx = hit.fx;
        g = hit.g;
    }
    OptimResult { x, fx, evals }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, fx) = golden_max(|x| -(x - 1.7) * (x - 1.7) + 3.0, -10.0, 10.0, 1e-8);
        assert_abs_diff_eq!(x, 1.7, epsilon = 1e-6);
        assert_abs_diff_eq!(fx, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn nelder_mead_minimises_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(rosen, &[-1.2, 1.0], 2000);
        assert!(r.fx < 1e-6, "fx = {}", r.fx);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn bfgs_polishes_quadratic() {
        let quad = |x: &[f64]| 2.0 * (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2);
        let r = bfgs_min(quad, &[0.0, 0.0], 100);
        assert_abs_diff_eq!(r.x[0], 3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(r.x[1], -1.0, epsilon = 1e-5);
    }
}

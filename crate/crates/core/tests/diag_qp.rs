//! Temporary diagnostic: reproduce the placebo-pool QP budget failures and
//! instrument the active-set trajectory.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use synthgrowth_core::panel::{load_panel, IngestConfig, Panel};
use synthgrowth_core::synth::{build_donor_setup, solve_weights};

const DATA: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../data/dpc-covid19-ita-regioni-20200831-20201231.csv"
);

fn pruned_panel(panel: &Panel, drop: &str) -> Panel {
    let series: Vec<_> = panel
        .regions
        .iter()
        .filter(|r| r.id != drop)
        .cloned()
        .collect();
    Panel::from_series(panel.dates.clone(), series).unwrap()
}

#[test]
fn diag_qp_cycling() {
    let panel = load_panel(std::path::Path::new(DATA), &IngestConfig::default()).unwrap();
    let pruned = pruned_panel(&panel, "P.A. Bolzano");
    let pre_end = NaiveDate::from_ymd_opt(2020, 11, 20).unwrap();

    for region in [
        "Abruzzo",
        "Campania",
        "Lazio",
        "Liguria",
        "Lombardia",
        "Sicilia",
        "Toscana",
        "Umbria",
        "Veneto",
        "Basilicata",
        "Molise",
    ] {
        let setup = build_donor_setup(&pruned, region, pre_end, false).unwrap();
        let m = setup.u1.len();
        let j = setup.u0.ncols();
        let v = vec![1.0 / m as f64; m];

        // Assemble A, b exactly as solve_weights does.
        let mut vu0 = setup.u0.clone();
        for r in 0..m {
            for c in 0..j {
                vu0[(r, c)] *= v[r];
            }
        }
        let a = setup.u0.transpose() * &vu0;
        let b = vu0.transpose() * &setup.u1;
        let amax = (0..j).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        println!("\n=== {region}: n={j}, max diag(A) = {amax:.3e} ===");
        match solve_weights(&setup, &v) {
            Ok(w) => {
                let grad = (&a * &w) * 2.0 - &b * 2.0;
                let support: Vec<usize> = (0..j).filter(|&i| w[i] > 1e-8).collect();
                let mu = support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
                let spread = support
                    .iter()
                    .map(|&i| (grad[i] - mu).abs())
                    .fold(0.0_f64, f64::max);
                let worst_clamped = (0..j)
                    .filter(|i| w[*i] <= 1e-8)
                    .map(|i| grad[i] - mu)
                    .fold(f64::INFINITY, f64::min);
                println!(
                    "solve_weights OK: sum={:.12}, min w={:.2e}, support={}, grad spread (rel)={:.2e}, worst clamped lag (rel)={:.2e}",
                    w.sum(),
                    w.min(),
                    support.len(),
                    spread / (1.0 + grad.amax()),
                    worst_clamped / (1.0 + grad.amax())
                );
            }
            Err(e) => {
                println!("solve_weights ERR: {e}");
                if region == "Abruzzo" {
                    trace_until_cycle(&a, &b);
                }
            }
        }
    }
}

/// Runs the plain LU active-set iteration until a feasible working set
/// repeats, then dissects the subproblem of the cycle's release step.
fn trace_until_cycle(a: &DMatrix<f64>, b: &DVector<f64>) {
    let n = b.len();
    let feas_tol = 1e-12_f64;
    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut free = vec![true; n];
    let mut seen: HashMap<Vec<bool>, usize> = HashMap::new();
    let mut last_release: Option<usize> = None;

    for it in 0..600 {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let k = idx.len();
        let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut rhs = DVector::<f64>::zeros(k + 1);
        for (p, &i) in idx.iter().enumerate() {
            for (q, &jj) in idx.iter().enumerate() {
                kkt[(p, q)] = 2.0 * a[(i, jj)];
            }
            kkt[(p, k)] = 1.0;
            kkt[(k, p)] = 1.0;
            rhs[p] = 2.0 * b[i];
        }
        rhs[k] = 1.0;
        let sol = kkt.lu().solve(&rhs).unwrap();
        let feasible = (0..k).all(|p| sol[p] >= -feas_tol);
        if feasible {
            if let Some(prev_it) = seen.insert(free.clone(), it) {
                println!(
                    "  cycle: mask of it {prev_it} repeats at it {it}; free = {:?}, last release = {:?}",
                    idx, last_release
                );
                dissect_release(a, b, &w, &idx, last_release.unwrap());
                return;
            }
            for (p, &i) in idx.iter().enumerate() {
                w[i] = sol[p].max(0.0);
            }
            for i in 0..n {
                if !free[i] {
                    w[i] = 0.0;
                }
            }
            let mu = sol[k];
            let grad = (a * &w) * 2.0 - b * 2.0;
            let scale = 1.0 + grad.amax() + mu.abs();
            let mut worst = -1e-10 * scale;
            let mut worst_j = None;
            for jj in 0..n {
                if !free[jj] {
                    let lag = grad[jj] - mu;
                    if lag < worst {
                        worst = lag;
                        worst_j = Some(jj);
                    }
                }
            }
            match worst_j {
                None => {
                    println!("  converged at it {it}");
                    return;
                }
                Some(jj) => {
                    last_release = Some(jj);
                    free[jj] = true;
                }
            }
        } else {
            let mut alpha = 1.0_f64;
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
            let jj = block.unwrap();
            for (p, &i) in idx.iter().enumerate() {
                let wi = w[i];
                w[i] = wi + alpha * (sol[p] - wi);
            }
            w[jj] = 0.0;
            free[jj] = false;
        }
    }
    println!("  no cycle within 600 iterations");
}

/// Examines the equality subproblem after releasing `rel` into the current
/// optimum's working set: reduced-Hessian spectrum, LU vs spectral
/// solutions, and the released component's theoretical sign identity.
fn dissect_release(a: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>, base: &[usize], rel: usize) {
    let mut idx: Vec<usize> = base.to_vec();
    if !idx.contains(&rel) {
        idx.push(rel);
        idx.sort_unstable();
    }
    let k = idx.len();
    println!("  subproblem on {:?} (released {rel})", idx);

    let mut a_f = DMatrix::<f64>::zeros(k, k);
    let mut b_f = DVector::<f64>::zeros(k);
    for (p, &i) in idx.iter().enumerate() {
        for (q, &j) in idx.iter().enumerate() {
            a_f[(p, q)] = a[(i, j)];
        }
        b_f[p] = b[i];
    }

    // Current gradient and multiplier data at w.
    let grad = (a * w) * 2.0 - b * 2.0;
    let mu0: f64 = base.iter().map(|&i| grad[i]).sum::<f64>() / base.len() as f64;
    let lam_rel = grad[rel] - mu0;
    println!("    lambda_rel = {lam_rel:.6e} (scale {:.3e})", 1.0 + grad.amax());

    // LU solution of the bordered system.
    let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut rhs = DVector::<f64>::zeros(k + 1);
    for p in 0..k {
        for q in 0..k {
            kkt[(p, q)] = 2.0 * a_f[(p, q)];
        }
        kkt[(p, k)] = 1.0;
        kkt[(k, p)] = 1.0;
        rhs[p] = 2.0 * b_f[p];
    }
    rhs[k] = 1.0;
    let lu_sol = kkt.clone().lu().solve(&rhs).unwrap();
    let rel_pos = idx.iter().position(|&i| i == rel).unwrap();
    println!("    LU sol = {:?}, sol[rel] = {:.6e}", &lu_sol.as_slice()[..k], lu_sol[rel_pos]);
    let kkt_resid = (&kkt * &lu_sol - &rhs).amax() / (1.0 + rhs.amax());
    println!("    LU KKT residual (rel) = {kkt_resid:.3e}");

    // Spectral solve: Helmert nullspace + eigendecomposition.
    let x0 = DVector::from_element(k, 1.0 / k as f64);
    let mut z = DMatrix::<f64>::zeros(k, k - 1);
    for c in 0..k - 1 {
        let len = (((c + 1) * (c + 2)) as f64).sqrt();
        for r in 0..=c {
            z[(r, c)] = 1.0 / len;
        }
        z[(c + 1, c)] = -((c + 1) as f64) / len;
    }
    let reduced = z.transpose() * &a_f * &z;
    let r = z.transpose() * (&b_f - &a_f * &x0);
    let eig = reduced.clone().symmetric_eigen();
    println!("    reduced eigenvalues = {:?}", eig.eigenvalues.as_slice());
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    for cutoff_rel in [1e-10_f64, 1e-8, 1e-6] {
        let cutoff = cutoff_rel * lam_max;
        let mut y = DVector::<f64>::zeros(k - 1);
        for j in 0..k - 1 {
            let lam = eig.eigenvalues[j];
            if lam > cutoff {
                let qj = eig.eigenvectors.column(j);
                let coef = qj.dot(&r) / lam;
                y += qj * coef;
            }
        }
        let x = &x0 + &z * &y;
        // pᵀGp identity: p = x − w_F, G = 2 A_F.
        let mut wf = DVector::<f64>::zeros(k);
        for (p, &i) in idx.iter().enumerate() {
            wf[p] = w[i];
        }
        let p = &x - &wf;
        let ptgp = 2.0 * (p.transpose() * &a_f * &p)[(0, 0)];
        println!(
            "    spectral cutoff {cutoff_rel:.0e}: x[rel] = {:.6e}, pᵀGp = {:.6e}, -lam*p_rel = {:.6e}",
            x[rel_pos],
            ptgp,
            -lam_rel * p[rel_pos]
        );
    }
}

#[allow(dead_code)]
fn trace_active_set(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize, print_first: usize) {
    let n = b.len();
    let feas_tol = 1e-12_f64;
    let kkt_tol = 1e-10_f64;
    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut free = vec![true; n];
    let mut state_visits: HashMap<Vec<bool>, usize> = HashMap::new();

    for it in 0..max_iter {
        *state_visits.entry(free.clone()).or_insert(0) += 1;
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let k = idx.len();
        let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut rhs = DVector::<f64>::zeros(k + 1);
        for (p, &i) in idx.iter().enumerate() {
            for (q, &jj) in idx.iter().enumerate() {
                kkt[(p, q)] = 2.0 * a[(i, jj)];
            }
            kkt[(p, k)] = 1.0;
            kkt[(k, p)] = 1.0;
            rhs[p] = 2.0 * b[i];
        }
        rhs[k] = 1.0;
        let sol = match kkt.lu().solve(&rhs) {
            Some(s) if s.iter().all(|x| x.is_finite()) => s,
            _ => {
                println!("  it {it}: singular KKT (k={k})");
                return;
            }
        };
        let min_sol = (0..k).map(|p| sol[p]).fold(f64::INFINITY, f64::min);
        let feasible = min_sol >= -feas_tol;
        if feasible {
            for (p, &i) in idx.iter().enumerate() {
                w[i] = sol[p].max(0.0);
            }
            for i in 0..n {
                if !free[i] {
                    w[i] = 0.0;
                }
            }
            let mu = sol[k];
            let grad = (a * &w) * 2.0 - b * 2.0;
            let mut worst = -kkt_tol;
            let mut worst_j = None;
            for jj in 0..n {
                if !free[jj] {
                    let lag = grad[jj] - mu;
                    if lag < worst {
                        worst = lag;
                        worst_j = Some(jj);
                    }
                }
            }
            match worst_j {
                None => {
                    println!("  it {it}: CONVERGED, k={k}");
                    return;
                }
                Some(jj) => {
                    if it < print_first || it > max_iter - 6 {
                        println!(
                            "  it {it}: feasible k={k}, release {jj} (lag={:.3e}, |mu|={:.3e})",
                            worst, mu.abs()
                        );
                    }
                    free[jj] = true;
                }
            }
        } else {
            let mut alpha = 1.0_f64;
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
            let jj = match block {
                Some(jj) => jj,
                None => {
                    println!("  it {it}: infeasible but no blocker");
                    return;
                }
            };
            if it < print_first || it > max_iter - 6 {
                println!(
                    "  it {it}: infeasible k={k} (min sol={:.3e}), clamp {jj} alpha={:.3e}",
                    min_sol, alpha
                );
            }
            for (p, &i) in idx.iter().enumerate() {
                let wi = w[i];
                w[i] = wi + alpha * (sol[p] - wi);
            }
            w[jj] = 0.0;
            free[jj] = false;
        }
    }
    let max_revisit = state_visits.values().max().copied().unwrap_or(0);
    let distinct = state_visits.len();
    println!("  BUDGET EXHAUSTED: {distinct} distinct working sets, max revisits of one set = {max_revisit}");
}

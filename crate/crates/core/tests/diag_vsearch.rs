//! Temporary diagnostic: per-start, per-method MSPE landscape of the
//! V-selection search on the real panel.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synthgrowth_core::panel::{load_panel, IngestConfig};
use synthgrowth_core::synth::optim::{bfgs_min, nelder_mead};
use synthgrowth_core::synth::{build_donor_setup, mspe, softmax, solve_weights};

const DATA: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../data/dpc-covid19-ita-regioni-20200831-20201231.csv"
);

#[test]
fn per_start_landscape() {
    let panel = load_panel(std::path::Path::new(DATA), &IngestConfig::default()).unwrap();
    let setup = build_donor_setup(
        &panel,
        "P.A. Bolzano",
        NaiveDate::from_ymd_opt(2020, 11, 20).unwrap(),
        true,
    )
    .unwrap();
    let m = setup.u1.len();
    let t0 = m / 2;

    let mut starts: Vec<(String, Vec<f64>)> = Vec::new();
    starts.push(("uniform".into(), vec![0.0; m]));
    let mut cases_only = vec![-20.0; m];
    cases_only[..t0].fill(0.0);
    starts.push(("cases".into(), cases_only));
    let mut tests_only = vec![0.0; m];
    tests_only[..t0].fill(-20.0);
    starts.push(("tests".into(), tests_only));
    let mut rng = ChaCha8Rng::seed_from_u64(202011);
    for k in 0..5 {
        let g: Vec<f64> = (0..m)
            .map(|_| {
                let u: f64 = rng.gen_range(1e-12..1.0);
                -u.ln()
            })
            .collect();
        let total: f64 = g.iter().sum();
        starts.push((format!("dir{k}"), g.iter().map(|x| (x / total).ln()).collect()));
    }

    let objective = |theta: &[f64]| -> f64 {
        let v = softmax(theta);
        match solve_weights(&setup, &v) {
            Ok(w) => mspe(&setup, &w),
            Err(_) => f64::MAX,
        }
    };

    let top_w = |theta: &[f64]| -> String {
        let v = softmax(theta);
        let w = solve_weights(&setup, &v).unwrap();
        let mut idx: Vec<usize> = (0..w.len()).collect();
        idx.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap());
        idx.iter()
            .take(3)
            .map(|&i| format!("{}={:.3}", setup.donor_ids[i], w[i]))
            .collect::<Vec<_>>()
            .join(", ")
    };

    for (name, theta0) in &starts {
        let f0 = objective(theta0);
        let nm = nelder_mead(&objective, theta0, 3000);
        let qn = bfgs_min(&objective, theta0, 60);
        println!(
            "{name:8} f0={f0:9.1}  NM={:9.1} [{}]  BFGS={:9.1} [{}]",
            nm.fx,
            top_w(&nm.x),
            qn.fx,
            top_w(&qn.x)
        );
    }
}

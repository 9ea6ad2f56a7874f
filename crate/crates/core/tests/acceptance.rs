//! Acceptance battery: every criterion runs at its stated size and
//! tolerance and prints one pass/fail line. The per-check gates live in
//! the verification suites; this target asserts that complete suites hold
//! together with their runtime budgets and the determinism contract.

use emshape::harness::{self, Config, Suite};
use std::time::Instant;

struct Criterion {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn run_suite_criterion(
    name: &'static str,
    suite: Suite,
    budget_s: f64,
    criteria: &mut Vec<Criterion>,
) {
    let cfg = Config::default();
    let t0 = Instant::now();
    let reports = harness::run_suite(suite, &cfg).expect("suite runs");
    let elapsed = t0.elapsed().as_secs_f64();
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.check_id.clone())
        .collect();
    let within_budget = elapsed <= budget_s;
    criteria.push(Criterion {
        name,
        pass: failed.is_empty() && within_budget,
        detail: format!(
            "{} checks, {} failed ({}), {elapsed:.1} s of {budget_s:.0} s budget",
            reports.len(),
            failed.len(),
            if failed.is_empty() {
                "-".to_string()
            } else {
                failed.join(" ")
            }
        ),
    });
}

#[test]
fn acceptance() {
    let mut criteria = Vec::new();

    // 1. geometry derivatives against central differences, 3 presets x 2 grids
    run_suite_criterion(
        "1 geometry derivative suite",
        Suite::Geometry,
        30.0,
        &mut criteria,
    );

    // 2. surface-operator identities, spectrum and the derivative formulas
    run_suite_criterion(
        "2 surface-operator identities",
        Suite::Surfops,
        60.0,
        &mut criteria,
    );

    // 3. kernel operators: sphere eigenvalues, derivative kernels,
    //    translation invariance and the far-field phase law
    run_suite_criterion("3 kernel operators", Suite::Kernels, 120.0, &mut criteria);

    // 4. electromagnetic layer: intertwining, two-route agreement and
    //    the operator derivative sweeps
    run_suite_criterion("4 electromagnetic layer", Suite::Emfield, 240.0, &mut criteria);

    // 5. scattering solve: null test, transmission, radiation, the
    //    headline far-field derivative consistency and the boundary
    //    characterization
    run_suite_criterion("5 scattering solve", Suite::Scattering, 600.0, &mut criteria);

    // 6. determinism: the full battery twice at a small size, byte-identical
    {
        let mut cfg = Config::default();
        cfg.verify_band_limit = Some(8);
        cfg.band_limit = 8;
        cfg.n_theta = 9;
        cfg.n_phi = 19;
        let dir1 = std::env::temp_dir().join("emshape_acceptance_run1");
        let dir2 = std::env::temp_dir().join("emshape_acceptance_run2");
        let _ = harness::run_suite_to_dir(Suite::All, &cfg, &dir1).expect("first run");
        let _ = harness::run_suite_to_dir(Suite::All, &cfg, &dir2).expect("second run");
        let r1 = std::fs::read(dir1.join("reports.csv")).unwrap();
        let r2 = std::fs::read(dir2.join("reports.csv")).unwrap();
        let s1 = std::fs::read(dir1.join("summary.json")).unwrap();
        let s2 = std::fs::read(dir2.join("summary.json")).unwrap();
        let identical = r1 == r2 && s1 == s2;
        criteria.push(Criterion {
            name: "6 determinism",
            pass: identical,
            detail: format!(
                "reports {} bytes, summaries {} bytes, byte-identical: {identical}",
                r1.len(),
                s1.len()
            ),
        });
    }

    println!();
    let mut all_pass = true;
    for c in &criteria {
        println!(
            "{} criterion {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        all_pass &= c.pass;
    }
    assert!(all_pass, "at least one acceptance criterion failed");
}

//! Check reports and their deterministic serialization. Timings are kept
//! out of the comparable outputs so repeated runs are byte-identical.

use crate::error::Error;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Outcome of a single registered check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub check_id: String,
    pub params: String,
    pub analytic: f64,
    pub oracle: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    /// observed convergence order when a finite-difference sweep ran
    pub observed_order: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip)]
    pub runtime_ms: f64,
}

impl CheckReport {
    /// Relative-error check against a scalar reference.
    pub fn relative(
        check_id: impl Into<String>,
        params: impl Into<String>,
        analytic: f64,
        oracle: f64,
        rel_err: f64,
        tolerance: f64,
    ) -> Self {
        Self {
            check_id: check_id.into(),
            params: params.into(),
            analytic,
            oracle,
            abs_err: rel_err * oracle.abs().max(1e-300),
            rel_err,
            observed_order: None,
            tolerance,
            pass: rel_err <= tolerance,
            runtime_ms: 0.0,
        }
    }

    /// Absolute-error check for quantities whose target is zero.
    pub fn absolute(
        check_id: impl Into<String>,
        params: impl Into<String>,
        abs_err: f64,
        tolerance: f64,
    ) -> Self {
        Self {
            check_id: check_id.into(),
            params: params.into(),
            analytic: 0.0,
            oracle: 0.0,
            abs_err,
            rel_err: abs_err,
            observed_order: None,
            tolerance,
            pass: abs_err <= tolerance,
            runtime_ms: 0.0,
        }
    }

    pub fn with_order(mut self, order: f64, band: (f64, f64)) -> Self {
        self.observed_order = Some(order);
        if !(band.0..=band.1).contains(&order) {
            self.pass = false;
        }
        self
    }

    /// Accept superconvergent sweeps: the order band only binds when the
    /// error is above the measurement floor.
    pub fn with_order_or_floor(self, order: f64, band: (f64, f64), err: f64, floor: f64) -> Self {
        if err < floor {
            let mut s = self;
            s.observed_order = Some(order);
            s
        } else {
            self.with_order(order, band)
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.12e}")
    }
}

/// Deterministic CSV of the reports, sorted by check id.
pub fn write_reports_csv(path: &Path, reports: &[CheckReport]) -> Result<(), Error> {
    let mut rows: Vec<&CheckReport> = reports.iter().collect();
    rows.sort_by(|a, b| a.check_id.cmp(&b.check_id));
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "check_id,params,analytic,oracle,abs_err,rel_err,observed_order,tolerance,pass"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            r.check_id,
            r.params.replace(',', ";"),
            fmt_num(r.analytic),
            fmt_num(r.oracle),
            fmt_num(r.abs_err),
            fmt_num(r.rel_err),
            r.observed_order.map(|o| format!("{o:.4}")).unwrap_or_default(),
            fmt_num(r.tolerance),
            r.pass
        )?;
    }
    Ok(())
}

/// Machine-readable summary (deterministic: no timings).
#[derive(Serialize)]
struct Summary<'a> {
    suite: &'a str,
    seed: u64,
    total: usize,
    passed: usize,
    failed: Vec<&'a str>,
}

pub fn write_summary(
    path: &Path,
    suite: &str,
    seed: u64,
    reports: &[CheckReport],
) -> Result<(), Error> {
    let mut failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.check_id.as_str())
        .collect();
    failed.sort();
    let summary = Summary {
        suite,
        seed,
        total: reports.len(),
        passed: reports.iter().filter(|r| r.pass).count(),
        failed,
    };
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(&summary).unwrap())?;
    Ok(())
}

/// Wall-clock side channel, not part of the determinism contract.
pub fn write_timings(path: &Path, reports: &[CheckReport]) -> Result<(), Error> {
    let mut rows: Vec<&CheckReport> = reports.iter().collect();
    rows.sort_by(|a, b| a.check_id.cmp(&b.check_id));
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "check_id,runtime_ms")?;
    for r in rows {
        writeln!(f, "{},{:.3}", r.check_id, r.runtime_ms)?;
    }
    Ok(())
}

/// Node-value field CSV: node index, colatitude, azimuth, then real and
/// imaginary parts per component.
pub fn write_field_csv(
    path: &Path,
    surface: &crate::geometry::ReferenceSurface,
    components: &[&[num_complex::Complex64]],
    labels: &[&str],
) -> Result<(), Error> {
    let mut f = std::fs::File::create(path)?;
    let mut header = "node,theta,phi".to_string();
    for l in labels {
        header.push_str(&format!(",{l}_re,{l}_im"));
    }
    writeln!(f, "{header}")?;
    for (i, node) in surface.nodes.iter().enumerate() {
        let theta = node.z.clamp(-1.0, 1.0).acos();
        let phi = node.y.atan2(node.x);
        let mut row = format!("{i},{theta:.15e},{phi:.15e}");
        for c in components {
            row.push_str(&format!(",{:.15e},{:.15e}", c[i].re, c[i].im));
        }
        writeln!(f, "{row}")?;
    }
    Ok(())
}

/// Coefficient CSV: degree, order, real, imaginary.
pub fn write_coeffs_csv(
    path: &Path,
    coeffs: &[num_complex::Complex64],
) -> Result<(), Error> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "degree,order,re,im")?;
    for (idx, c) in coeffs.iter().enumerate() {
        let (n, m) = crate::sphharm::index_degree_order(idx);
        writeln!(f, "{n},{m},{:.15e},{:.15e}", c.re, c.im)?;
    }
    Ok(())
}

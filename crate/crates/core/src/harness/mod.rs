//! Verification-suite orchestration, the solve and derivative commands and
//! their file outputs.

pub mod checks;
pub mod config;
pub mod report;

pub use config::Config;
pub use report::CheckReport;

use crate::emfield::{hcoeffs, EmAssembly};
use crate::error::Error;
use crate::geometry::{build_sphere_grid, gateaux_fd_complex, DeformationField};
use crate::operator::{cvec, flatten_vec3};
use crate::scattering::{
    assemble_stack, characterization_check, d_solution, solve_with_stack, FieldEvaluator,
};
use nalgebra::Vector3;
use num_complex::Complex64;
use std::io::Write;
use std::path::Path;

/// Suite selector for the verification command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Geometry,
    Surfops,
    Kernels,
    Emfield,
    Scattering,
    All,
}

impl Suite {
    pub fn parse(name: &str) -> Result<Self, Error> {
        Ok(match name {
            "geometry" => Suite::Geometry,
            "surfops" => Suite::Surfops,
            "kernels" => Suite::Kernels,
            "emfield" => Suite::Emfield,
            "scattering" => Suite::Scattering,
            "all" => Suite::All,
            other => {
                return Err(Error::Usage(format!(
                    "unknown suite `{other}`; expected geometry|surfops|kernels|emfield|scattering|all"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Geometry => "geometry",
            Suite::Surfops => "surfops",
            Suite::Kernels => "kernels",
            Suite::Emfield => "emfield",
            Suite::Scattering => "scattering",
            Suite::All => "all",
        }
    }
}

/// Run every registered check of the named suite; deterministic for a
/// fixed configuration.
pub fn run_suite(suite: Suite, cfg: &Config) -> Result<Vec<CheckReport>, Error> {
    let mut reports = Vec::new();
    let wanted = |s: Suite| suite == s || suite == Suite::All;
    if wanted(Suite::Geometry) {
        reports.extend(checks::geometry_suite(cfg)?);
    }
    if wanted(Suite::Surfops) {
        reports.extend(checks::surfops_suite(cfg)?);
    }
    if wanted(Suite::Kernels) {
        reports.extend(checks::kernels_suite(cfg)?);
    }
    if wanted(Suite::Emfield) {
        reports.extend(checks::emfield_suite(cfg)?);
    }
    if wanted(Suite::Scattering) {
        reports.extend(checks::scattering_suite(cfg)?);
    }
    reports.sort_by(|a, b| a.check_id.cmp(&b.check_id));
    Ok(reports)
}

/// Run a suite and write reports, summary and timings under `out_dir`.
/// Returns true when every check passed.
pub fn run_suite_to_dir(suite: Suite, cfg: &Config, out_dir: &Path) -> Result<bool, Error> {
    std::fs::create_dir_all(out_dir)?;
    let reports = run_suite(suite, cfg)?;
    report::write_reports_csv(&out_dir.join("reports.csv"), &reports)?;
    report::write_summary(&out_dir.join("summary.json"), suite.name(), cfg.seed, &reports)?;
    report::write_timings(&out_dir.join("timings.csv"), &reports)?;
    for r in &reports {
        println!(
            "{} {} (err {:.3e} tol {:.1e}{})",
            if r.pass { "PASS" } else { "FAIL" },
            r.check_id,
            r.rel_err,
            r.tolerance,
            r.observed_order
                .map(|o| format!(", order {o:.2}"))
                .unwrap_or_default()
        );
    }
    Ok(reports.iter().all(|r| r.pass))
}

/// Solve the transmission problem from the configuration and write the
/// density, far field, probe fields and residual report.
pub fn solve_cmd(cfg: &Config, out_dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    let s = build_sphere_grid(cfg.n_theta, cfg.n_phi, cfg.band_limit)?;
    let asm = EmAssembly::new(&s);
    let scfg = cfg.scattering_config()?;
    let inc = cfg.incident()?;
    let r = cfg.deformation()?;
    let t = cfg.scale;
    let stack = assemble_stack(&asm, &scfg, &r, t)?;
    let sol = solve_with_stack(&asm, &scfg, &inc, &r, t, &stack)?;
    report::write_coeffs_csv(&out_dir.join("density_p.csv"), sol.j.p.coeffs(&s))?;
    report::write_coeffs_csv(&out_dir.join("density_q.csv"), sol.j.q.coeffs(&s))?;
    let ev = FieldEvaluator::new(&s, &scfg);
    // far field over the configured direction grid, two tangential
    // components per direction
    let dirs = direction_grid(cfg.ff_n_theta, cfg.ff_n_phi);
    let ff = ev.farfield(&sol, &dirs, &r, t)?;
    write_farfield_csv(&out_dir.join("farfield.csv"), &dirs, &ff)?;
    // probe fields
    let probes = [
        Vector3::new(0.12, 0.1, 0.25),
        Vector3::new(-0.15, 0.2, 0.28),
        Vector3::new(1.3, -1.3, 1.1),
        Vector3::new(3.0, 2.0, 3.0),
    ];
    let mut f = std::fs::File::create(out_dir.join("probes.csv"))?;
    writeln!(f, "x,y,z,side,ex_re,ex_im,ey_re,ey_im,ez_re,ez_im")?;
    for p in &probes {
        let interior = p.norm() < 1.0;
        let field = if interior {
            ev.e_interior(&sol, &[*p], &r, t)?[0]
        } else {
            ev.e_scattered(&sol, &[*p], &r, t)?[0]
        };
        writeln!(
            f,
            "{},{},{},{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}",
            p.x,
            p.y,
            p.z,
            if interior { "interior" } else { "scattered" },
            field.x.re,
            field.x.im,
            field.y.re,
            field.y.im,
            field.z.re,
            field.z.im
        )?;
    }
    // residual summary
    let mut f = std::fs::File::create(out_dir.join("residuals.csv"))?;
    writeln!(f, "name,value")?;
    writeln!(f, "condition,{:.6e}", sol.condition)?;
    let ffmax = ff.iter().map(|v| v.norm()).fold(0.0, f64::max);
    writeln!(f, "farfield_max,{ffmax:.6e}")?;
    Ok(())
}

/// Run the solution derivative for the named preset, compare against the
/// pipeline finite difference and emit the side-by-side tables.
pub fn derive_cmd(cfg: &Config, deformation: Option<&str>, out_dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    let s = build_sphere_grid(cfg.n_theta, cfg.n_phi, cfg.band_limit)?;
    let asm = EmAssembly::new(&s);
    let scfg = cfg.scattering_config()?;
    let inc = cfg.incident()?;
    let xi = match deformation {
        Some(kind) => cfg.deformation_named(kind)?,
        None => cfg.deformation()?,
    };
    let nodef = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    let stack = assemble_stack(&asm, &scfg, &nodef, 0.0)?;
    let sol = solve_with_stack(&asm, &scfg, &inc, &nodef, 0.0, &stack)?;
    let ev = FieldEvaluator::new(&s, &scfg);
    let dsol = d_solution(&asm, &scfg, &inc, &xi, &stack, &sol)?;
    let dirs = direction_grid(cfg.ff_n_theta, cfg.ff_n_phi);
    let analytic = ev.d_farfield(&sol, &dsol, &dirs)?;
    let f = |t: f64| -> Vec<Complex64> {
        let so = crate::scattering::solve(&asm, &scfg, &inc, &xi, t).unwrap();
        flatten_vec3(&ev.farfield(&so, &dirs, &xi, t).unwrap())
    };
    let steps = &cfg.fd_steps;
    let fd_small = gateaux_fd_complex(&f, *steps.last().unwrap(), 1);
    let flat_analytic = flatten_vec3(&analytic);
    // observed order from the two leading steps
    let err_at = |t: f64| -> f64 {
        gateaux_fd_complex(&f, t, 1)
            .iter()
            .zip(&flat_analytic)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    };
    let order = if steps.len() >= 2 {
        let e1 = err_at(steps[0]);
        let e2 = err_at(steps[1]);
        Some((e1 / e2).log2() / (steps[0] / steps[1]).log2())
    } else {
        None
    };
    let fd_vec = crate::operator::unflatten_vec3(&fd_small);
    let mut fcsv = std::fs::File::create(out_dir.join("d_farfield.csv"))?;
    writeln!(
        fcsv,
        "dir_x,dir_y,dir_z,component,analytic_re,analytic_im,fd_re,fd_im,rel_err,observed_order"
    )?;
    for (k, d) in dirs.iter().enumerate() {
        for (c, cname) in ["x", "y", "z"].iter().enumerate() {
            let a = analytic[k][c];
            let g = fd_vec[k][c];
            let rel = (a - g).norm() / a.norm().max(1e-300);
            writeln!(
                fcsv,
                "{},{},{},{},{:.15e},{:.15e},{:.15e},{:.15e},{:.6e},{}",
                d.x,
                d.y,
                d.z,
                cname,
                a.re,
                a.im,
                g.re,
                g.im,
                rel,
                order.map(|o| format!("{o:.3}")).unwrap_or_default()
            )?;
        }
    }
    // boundary characterization residual table
    let mut checkpoints = Vec::new();
    for i in 0..3 {
        for j in 0..4 {
            let th = 0.5 + 0.6 * i as f64;
            let ph = 0.37 + 1.5 * j as f64;
            checkpoints.push(Vector3::new(
                th.sin() * ph.cos(),
                th.sin() * ph.sin(),
                th.cos(),
            ));
        }
    }
    let rep = characterization_check(&ev, &inc, &xi, &sol, &dsol, &checkpoints, 0.05)?;
    let mut gcsv = std::fs::File::create(out_dir.join("characterization.csv"))?;
    writeln!(gcsv, "x,y,z,lhs_d_norm,g_d_norm,lhs_n_norm,g_n_norm")?;
    let vnorm = |v: &Vector3<Complex64>| {
        (v.x.norm_sqr() + v.y.norm_sqr() + v.z.norm_sqr()).sqrt()
    };
    for (k, x) in checkpoints.iter().enumerate() {
        writeln!(
            gcsv,
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e}",
            x.x,
            x.y,
            x.z,
            vnorm(&rep.lhs_d[k]),
            vnorm(&rep.g_d[k]),
            vnorm(&rep.lhs_n[k]),
            vnorm(&rep.g_n[k])
        )?;
    }
    let mut rcsv = std::fs::File::create(out_dir.join("residuals.csv"))?;
    writeln!(rcsv, "name,value")?;
    writeln!(rcsv, "characterization_rel_d,{:.6e}", rep.rel_d)?;
    writeln!(rcsv, "characterization_rel_n,{:.6e}", rep.rel_n)?;
    writeln!(rcsv, "dj_p_norm,{:.6e}", hcoeffs(&s, &dsol.dj.p).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())?;
    if let Some(o) = order {
        writeln!(rcsv, "observed_order,{o:.4}")?;
    }
    Ok(())
}

fn direction_grid(n_theta: usize, n_phi: usize) -> Vec<Vector3<f64>> {
    let mut dirs = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let th = std::f64::consts::PI * (i as f64 + 0.5) / n_theta as f64;
        for j in 0..n_phi {
            let ph = 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64;
            dirs.push(Vector3::new(
                th.sin() * ph.cos(),
                th.sin() * ph.sin(),
                th.cos(),
            ));
        }
    }
    dirs
}

/// Far-field CSV: one row per direction and tangential component in the
/// local spherical frame.
fn write_farfield_csv(
    path: &Path,
    dirs: &[Vector3<f64>],
    ff: &[Vector3<Complex64>],
) -> Result<(), Error> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "dir_x,dir_y,dir_z,component,re,im")?;
    for (d, v) in dirs.iter().zip(ff) {
        let sin_t = (d.x * d.x + d.y * d.y).sqrt().max(1e-300);
        let e_theta = Vector3::new(d.z * d.x / sin_t, d.z * d.y / sin_t, -sin_t);
        let e_phi = Vector3::new(-d.y / sin_t, d.x / sin_t, 0.0);
        let vt = cvec(&e_theta).map(|c| c.conj()).dot(v);
        let vp = cvec(&e_phi).map(|c| c.conj()).dot(v);
        writeln!(f, "{},{},{},theta,{:.15e},{:.15e}", d.x, d.y, d.z, vt.re, vt.im)?;
        writeln!(f, "{},{},{},phi,{:.15e},{:.15e}", d.x, d.y, d.z, vp.re, vp.im)?;
    }
    Ok(())
}

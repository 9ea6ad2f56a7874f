//! Registered verification checks, one battery per module. Every analytic
//! claim is paired with its independent oracle and reported with the
//! tolerance actually used.

use super::config::Config;
use super::report::CheckReport;
use crate::emfield::{self, hdensity_from_coeffs, EmAssembly, ScatteringConfig};
use crate::error::Error;
use crate::geometry::{
    build_sphere_grid, d2_jacobian, d2_normal, d_jacobian, d_normal, deformed_geometry,
    gateaux_fd, gateaux_fd_complex, observed_order, observed_order_complex, DeformationField,
    ReferenceSurface,
};
use crate::kernels::{self, HelmholtzKernel, SingularRule};
use crate::operator::{cross_c, cvec, flatten_vec3};
use crate::oracles;
use crate::scattering::{
    self, assemble_stack, boundary_data, characterization_check, d_solution, solve_with_stack,
    FieldEvaluator,
};
use crate::surfops::{
    self, curls_gamma, curlvec_gamma, div_gamma, grad_gamma, helmholtz_decompose,
    helmholtz_recompose, laplace_beltrami, laplace_beltrami_inv, HDensity, PiDirection,
    ScalarField, SurfOp, TangentField, Transport, WeightedLapSolver,
};
use nalgebra::Vector3;
use num_complex::Complex64;
use std::time::Instant;

const ORDER_BAND: (f64, f64) = (1.8, 2.2);
const ORDER_BAND_COMPOSED: (f64, f64) = (1.7, 2.3);
/// below this error the convergence order is not measurable
const ORDER_FLOOR: f64 = 1e-9;

fn timeit(report: CheckReport, start: Instant) -> CheckReport {
    let mut r = report;
    r.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    r
}

fn presets() -> Vec<(&'static str, DeformationField)> {
    vec![
        (
            "bump_a",
            DeformationField::GaussianBump {
                center: Vector3::new(0.4, -0.2, 0.8),
                width: 0.7,
                amp: Vector3::new(0.3, 0.1, 0.8),
            },
        ),
        (
            "bump_b",
            DeformationField::GaussianBump {
                center: Vector3::new(-0.6, 0.5, 0.4),
                width: 0.9,
                amp: Vector3::new(0.7, -0.2, 0.3),
            },
        ),
        (
            "normal_32",
            DeformationField::HarmonicNormal {
                degree: 3,
                order: 2,
                amp: 0.6,
            },
        ),
    ]
}

fn rel_err_complex(fd: &[Complex64], analytic: &[Complex64]) -> f64 {
    let num: f64 = fd
        .iter()
        .zip(analytic)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let den: f64 = analytic.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn random_field(s: &ReferenceSurface, max_degree: usize, seed: u64) -> ScalarField {
    // deterministic splitmix-style fill, decoupled from external crates
    let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
    let mut next = move || {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z = z ^ (z >> 31);
        (z as f64 / u64::MAX as f64) - 0.5
    };
    let mut c = vec![Complex64::default(); s.coeff_count()];
    for (idx, v) in c.iter_mut().enumerate() {
        let (n, _) = crate::sphharm::index_degree_order(idx);
        if n >= 1 && n <= max_degree {
            *v = Complex64::new(next(), next());
        }
    }
    ScalarField::from_coeffs(s, c)
}

fn random_tangent(s: &ReferenceSurface, max_degree: usize, seed: u64) -> TangentField {
    let p = random_field(s, max_degree, seed);
    let q = random_field(s, max_degree, seed + 101);
    helmholtz_recompose(s, &HDensity { p, q })
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

pub fn geometry_suite(cfg: &Config) -> Result<Vec<CheckReport>, Error> {
    let mut out = Vec::new();
    let grids = match cfg.verify_band_limit {
        Some(l) => {
            let l2 = (l.saturating_sub(3)).max(4);
            vec![(l + 1, 2 * l + 3, l), (l2 + 1, 2 * l2 + 3, l2)]
        }
        None => vec![(16usize, 33usize, 15usize), (13, 27, 12)],
    };
    for (nt, np, l) in grids {
        let t0 = Instant::now();
        let s = build_sphere_grid(nt, np, l)?;
        let area: f64 = s.weights.iter().sum();
        let rel = (area - 4.0 * std::f64::consts::PI).abs() / (4.0 * std::f64::consts::PI);
        out.push(timeit(
            CheckReport::relative(
                format!("geometry.grid.area.L{l}"),
                format!("n_theta={nt} n_phi={np}"),
                4.0 * std::f64::consts::PI,
                area,
                rel,
                cfg.tolerance(&format!("geometry.grid.area.L{l}"), 1e-12),
            ),
            t0,
        ));
        for (name, xi) in presets() {
            // first derivative of the area Jacobian
            let t0 = Instant::now();
            let dj = d_jacobian(&s, &xi);
            let f = |t: f64| deformed_geometry(&s, &xi, t).unwrap().jacobian;
            let (e1, _, order) = observed_order(f, &dj, 1e-2, 1);
            let fd = gateaux_fd(f, 1e-3, 1);
            let scale = dj.iter().map(|v| v.abs()).fold(1e-300, f64::max);
            let err = fd
                .iter()
                .zip(&dj)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / scale;
            let id = format!("geometry.d_jacobian.fd.{name}.L{l}");
            let tol = cfg.tolerance(&id, 1e-5);
            out.push(timeit(
                CheckReport::relative(id, format!("preset={name}"), 0.0, 0.0, err, tol)
                    .with_order_or_floor(order, ORDER_BAND, e1, ORDER_FLOOR),
                t0,
            ));
            // first derivative of the transported normal
            let t0 = Instant::now();
            let dn = d_normal(&s, &xi);
            let dn_flat: Vec<f64> = dn.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
            let fnrm = |t: f64| -> Vec<f64> {
                deformed_geometry(&s, &xi, t)
                    .unwrap()
                    .normal
                    .iter()
                    .flat_map(|v| [v.x, v.y, v.z])
                    .collect()
            };
            let (e1, _, order) = observed_order(fnrm, &dn_flat, 1e-2, 1);
            let fd = gateaux_fd(fnrm, 1e-3, 1);
            let scale = dn_flat.iter().map(|v| v.abs()).fold(1e-300, f64::max);
            let err = fd
                .iter()
                .zip(&dn_flat)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / scale;
            let id = format!("geometry.d_normal.fd.{name}.L{l}");
            let tol = cfg.tolerance(&id, 1e-5);
            out.push(timeit(
                CheckReport::relative(id, format!("preset={name}"), 0.0, 0.0, err, tol)
                    .with_order_or_floor(order, ORDER_BAND, e1, ORDER_FLOOR),
                t0,
            ));
            // tangency of the normal derivative
            let t0 = Instant::now();
            let defect = dn
                .iter()
                .zip(&s.frames)
                .map(|(v, fr)| v.dot(&fr.2).abs())
                .fold(0.0, f64::max);
            let id = format!("geometry.d_normal.tangency.{name}.L{l}");
            out.push(timeit(
                CheckReport::absolute(&id, format!("preset={name}"), defect, cfg.tolerance(&id, 1e-10)),
                t0,
            ));
            // second derivative of the Jacobian, diagonal sweep
            let t0 = Instant::now();
            let d2 = d2_jacobian(&s, &xi, &xi);
            let (e1, _, order) = observed_order(f, &d2, 1e-2, 2);
            let fd2 = gateaux_fd(f, 1e-3, 2);
            let scale = d2.iter().map(|v| v.abs()).fold(1e-300, f64::max);
            let err = fd2
                .iter()
                .zip(&d2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / scale;
            let id = format!("geometry.d2_jacobian.fd.{name}.L{l}");
            // second differences divide two orders of roundoff as well
            let tol = cfg.tolerance(&id, 1e-5);
            out.push(timeit(
                CheckReport::relative(id, format!("preset={name}"), 0.0, 0.0, err, tol)
                    .with_order_or_floor(order, ORDER_BAND, e1, 1e-6),
                t0,
            ));
            // second derivative of the normal, diagonal sweep
            let t0 = Instant::now();
            let d2n = d2_normal(&s, &xi, &xi);
            let d2n_flat: Vec<f64> = d2n.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
            let (e1, _, order) = observed_order(fnrm, &d2n_flat, 1e-2, 2);
            let fd2 = gateaux_fd(fnrm, 1e-3, 2);
            let scale = d2n_flat
                .iter()
                .map(|v| v.abs())
                .fold(1e-300, f64::max);
            let err = if scale > 1e-12 {
                fd2.iter()
                    .zip(&d2n_flat)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    / scale
            } else {
                fd2.iter().map(|v| v.abs()).fold(0.0, f64::max)
            };
            let id = format!("geometry.d2_normal.fd.{name}.L{l}");
            let tol = cfg.tolerance(&id, 1e-5);
            out.push(timeit(
                CheckReport::relative(id, format!("preset={name}"), 0.0, 0.0, err, tol)
                    .with_order_or_floor(order, ORDER_BAND, e1, 1e-6),
                t0,
            ));
        }
    }
    // structural identities on the fine grid
    let lmain = cfg.verify_band_limit.unwrap_or(15);
    let s = build_sphere_grid(lmain + 1, 2 * lmain + 3, lmain)?;
    let (xi1, xi2) = (presets()[0].1.clone(), presets()[2].1.clone());
    let t0 = Instant::now();
    let a = d2_jacobian(&s, &xi1, &xi2);
    let b = d2_jacobian(&s, &xi2, &xi1);
    let sym = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    out.push(timeit(
        CheckReport::absolute(
            "geometry.d2_jacobian.symmetry",
            "pair=bump_a;normal_32",
            sym,
            cfg.tolerance("geometry.d2_jacobian.symmetry", 1e-13),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let c = DeformationField::Constant {
        c: Vector3::new(0.4, 0.2, -0.7),
    };
    let null = d_jacobian(&s, &c)
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(
            d_normal(&s, &c)
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max),
        )
        .max(
            d2_jacobian(&s, &c, &xi1)
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max),
        )
        .max(
            d2_normal(&s, &c, &xi1)
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max),
        );
    out.push(timeit(
        CheckReport::absolute(
            "geometry.translation.null",
            "constant field",
            null,
            cfg.tolerance("geometry.translation.null", 1e-12),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let rot = DeformationField::Rotation {
        omega: Vector3::new(0.3, -0.1, 0.8),
    };
    let div = d_jacobian(&s, &rot)
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    out.push(timeit(
        CheckReport::absolute(
            "geometry.rotation.divergence_free",
            "omega=0.3;-0.1;0.8",
            div,
            cfg.tolerance("geometry.rotation.divergence_free", 1e-10),
        ),
        t0,
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------
// surfops
// ---------------------------------------------------------------------------

pub fn surfops_suite(cfg: &Config) -> Result<Vec<CheckReport>, Error> {
    let mut out = Vec::new();
    let l = cfg.verify_band_limit.unwrap_or(15);
    let s = build_sphere_grid(l + 1, 2 * l + 3, l)?;
    let seed = cfg.seed;
    let u = random_field(&s, l - 2, seed);
    let j = random_tangent(&s, l - 3, seed + 7);

    let t0 = Instant::now();
    let cg = curls_gamma(&s, &grad_gamma(&s, &u).values).l2_norm(&s) / u.l2_norm(&s);
    let dc = div_gamma(&s, &curlvec_gamma(&s, &u).values).l2_norm(&s) / u.l2_norm(&s);
    out.push(timeit(
        CheckReport::absolute(
            "surfops.eqd2.curls_of_grad",
            format!("seed={seed}"),
            cg,
            cfg.tolerance("surfops.eqd2.curls_of_grad", 1e-9),
        ),
        t0,
    ));
    out.push(CheckReport::absolute(
        "surfops.eqd2.div_of_curl",
        format!("seed={seed}"),
        dc,
        cfg.tolerance("surfops.eqd2.div_of_curl", 1e-9),
    ));

    let t0 = Instant::now();
    let nxj: Vec<_> = j
        .values
        .iter()
        .zip(&s.frames)
        .map(|(v, fr)| cross_c(&cvec(&fr.2), v))
        .collect();
    let lhs1 = div_gamma(&s, &nxj);
    let rhs1 = curls_gamma(&s, &j.values);
    let lhs2 = curls_gamma(&s, &nxj);
    let rhs2 = div_gamma(&s, &j.values);
    let mut e1 = 0.0f64;
    let mut e2 = 0.0f64;
    for i in 0..s.node_count() {
        e1 = e1.max((lhs1.values()[i] + rhs1.values()[i]).norm());
        e2 = e2.max((lhs2.values()[i] - rhs2.values()[i]).norm());
    }
    out.push(timeit(
        CheckReport::absolute(
            "surfops.eqd3.div_rotation",
            format!("seed={seed}"),
            e1,
            cfg.tolerance("surfops.eqd3.div_rotation", 1e-9),
        ),
        t0,
    ));
    out.push(CheckReport::absolute(
        "surfops.eqd3.curls_rotation",
        format!("seed={seed}"),
        e2,
        cfg.tolerance("surfops.eqd3.curls_rotation", 1e-9),
    ));

    // spectrum of the Laplace-Beltrami operator
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for n in 1..=(l - 2) {
        let y = ScalarField::harmonic(&s, n, (n as i64).min(3));
        let lap = laplace_beltrami(&s, &y);
        let eig = -(n as f64) * (n as f64 + 1.0);
        let err = lap
            .values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| (a - eig * b).norm())
            .fold(0.0, f64::max)
            / eig.abs();
        worst = worst.max(err);
    }
    out.push(timeit(
        CheckReport::relative(
            "surfops.laplace.spectrum",
            format!("degrees 1..{}", l - 2),
            0.0,
            0.0,
            worst,
            cfg.tolerance("surfops.laplace.spectrum", 1e-8),
        ),
        t0,
    ));
    // inverse round trip
    let t0 = Instant::now();
    let w = laplace_beltrami_inv(&s, &laplace_beltrami(&s, &u))?;
    let mean = u.mean(&s);
    let err = w
        .values()
        .iter()
        .zip(u.values())
        .map(|(a, b)| (a - (b - mean)).norm())
        .fold(0.0, f64::max);
    out.push(timeit(
        CheckReport::absolute(
            "surfops.laplace.inverse_roundtrip",
            format!("seed={seed}"),
            err,
            cfg.tolerance("surfops.laplace.inverse_roundtrip", 1e-7),
        ),
        t0,
    ));

    // derivative formulas against finite differences of the transported ops
    for (name, xi) in presets() {
        let fd_cases: Vec<(String, Box<dyn Fn(f64) -> Vec<Complex64>>, Vec<Complex64>)> = vec![
            (
                format!("surfops.d_grad.fd.{name}"),
                Box::new(|t| flatten_vec3(&Transport::new(&s, &xi, t).unwrap().grad(&u))),
                flatten_vec3(&surfops::d_grad_gamma(&s, &xi, &u)),
            ),
            (
                format!("surfops.d_div.fd.{name}"),
                Box::new(|t| {
                    Transport::new(&s, &xi, t)
                        .unwrap()
                        .div(&j.values)
                        .values()
                        .to_vec()
                }),
                surfops::d_div_gamma(&s, &xi, &j).values().to_vec(),
            ),
            (
                format!("surfops.d_curlvec.fd.{name}"),
                Box::new(|t| flatten_vec3(&Transport::new(&s, &xi, t).unwrap().curlvec(&u))),
                flatten_vec3(&surfops::d_curlvec_gamma(&s, &xi, &u)),
            ),
            (
                format!("surfops.d_curls.fd.{name}"),
                Box::new(|t| {
                    Transport::new(&s, &xi, t)
                        .unwrap()
                        .curls(&j.values)
                        .values()
                        .to_vec()
                }),
                surfops::d_curls_gamma(&s, &xi, &j).values().to_vec(),
            ),
            (
                format!("surfops.d_weighted_curls.fd.{name}"),
                Box::new(|t| {
                    let tr = Transport::new(&s, &xi, t).unwrap();
                    tr.curls(&j.values)
                        .values()
                        .iter()
                        .zip(&tr.geom.jacobian)
                        .map(|(v, jw)| v * *jw)
                        .collect()
                }),
                surfops::d_weighted_curls(&s, &xi, &j).values().to_vec(),
            ),
            (
                format!("surfops.d_weighted_div.fd.{name}"),
                Box::new(|t| {
                    let tr = Transport::new(&s, &xi, t).unwrap();
                    let pi_inv =
                        surfops::pi_projection(&s, &xi, t, PiDirection::Inverse).unwrap();
                    let mapped = crate::operator::unflatten_vec3(
                        &pi_inv.apply(&flatten_vec3(&j.values)),
                    );
                    tr.div(&mapped)
                        .values()
                        .iter()
                        .zip(&tr.geom.jacobian)
                        .map(|(v, jw)| v * *jw)
                        .collect()
                }),
                surfops::d_weighted_div(&s, &xi, &j).values().to_vec(),
            ),
            (
                format!("surfops.d_laplace_inv.fd.{name}"),
                Box::new(|t| {
                    let tr = Transport::new(&s, &xi, t).unwrap();
                    let src = {
                        let f = random_field(&s, 4, seed + 31);
                        let mean = f.mean(&s);
                        ScalarField::from_values(
                            f.values().iter().map(|v| v - mean).collect(),
                        )
                    };
                    WeightedLapSolver::new(&s, &tr).solve(src.values()).unwrap()
                }),
                {
                    let src = {
                        let f = random_field(&s, 4, seed + 31);
                        let mean = f.mean(&s);
                        ScalarField::from_values(
                            f.values().iter().map(|v| v - mean).collect(),
                        )
                    };
                    surfops::d_laplace_inv(&s, &xi, &src)?.values().to_vec()
                },
            ),
        ];
        for (id, f, analytic) in fd_cases {
            let t0 = Instant::now();
            let (e1, _, order) = observed_order_complex(|t| f(t), &analytic, 1e-2, 1);
            let fd = gateaux_fd_complex(|t| f(t), 1e-3, 1);
            let scale: f64 = analytic.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let tol = cfg.tolerance(&id, 1e-5);
            // null derivatives fall back to an absolute gate
            let report = if scale > 1e-12 {
                CheckReport::relative(
                    id,
                    format!("preset={name}"),
                    0.0,
                    0.0,
                    rel_err_complex(&fd, &analytic),
                    tol,
                )
                .with_order_or_floor(order, ORDER_BAND, e1, ORDER_FLOOR)
            } else {
                let abs: f64 = fd.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                CheckReport::absolute(id, format!("preset={name} null"), abs, 1e-8)
            };
            out.push(timeit(report, t0));
        }
    }

    // Helmholtz decomposition round trip and orthogonality
    let t0 = Instant::now();
    let h = helmholtz_decompose(&s, &j);
    let back = helmholtz_recompose(&s, &h);
    let num: f64 = (0..s.node_count())
        .map(|i| {
            let d = back.values[i] - j.values[i];
            (d.x.norm_sqr() + d.y.norm_sqr() + d.z.norm_sqr()) * s.weights[i]
        })
        .sum::<f64>()
        .sqrt();
    out.push(timeit(
        CheckReport::relative(
            "surfops.helmholtz.roundtrip",
            format!("seed={seed}"),
            0.0,
            0.0,
            num / j.l2_norm(&s),
            cfg.tolerance("surfops.helmholtz.roundtrip", 1e-8),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let gp = grad_gamma(&s, &h.p);
    let cq = curlvec_gamma(&s, &h.q);
    let pairing: Complex64 = (0..s.node_count())
        .map(|i| {
            (gp.values[i].x * cq.values[i].x.conj()
                + gp.values[i].y * cq.values[i].y.conj()
                + gp.values[i].z * cq.values[i].z.conj())
                * s.weights[i]
        })
        .sum();
    let scale = gp.l2_norm(&s) * cq.l2_norm(&s);
    out.push(timeit(
        CheckReport::absolute(
            "surfops.helmholtz.orthogonality",
            format!("seed={seed}"),
            pairing.norm() / scale.max(1e-300),
            cfg.tolerance("surfops.helmholtz.orthogonality", 1e-9),
        ),
        t0,
    ));

    // curvature commutators
    let t0 = Instant::now();
    let y = ScalarField::harmonic(&s, 2, 0);
    let pairs = [
        ("grad", SurfOp::Grad, true),
        ("curlvec", SurfOp::CurlVec, true),
        ("div", SurfOp::Div, false),
        ("curls", SurfOp::CurlScalar, false),
    ];
    for (nm, which, scalar_in) in pairs {
        let sides = if scalar_in {
            surfops::commutator_normal(&s, which, Some(&y), None)?
        } else {
            surfops::commutator_normal(&s, which, None, Some(&j))?
        };
        let err = match sides {
            surfops::CommutatorSides::Vector { lhs, rhs } => {
                let scale = rhs.iter().map(|v| v.norm()).fold(1e-300, f64::max);
                lhs.iter()
                    .zip(&rhs)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max)
                    / scale
            }
            surfops::CommutatorSides::Scalar { lhs, rhs } => {
                let scale = rhs.values().iter().map(|v| v.norm()).fold(1e-300, f64::max);
                lhs.values()
                    .iter()
                    .zip(rhs.values())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max)
                    / scale
            }
        };
        let id = format!("surfops.commutator.{nm}");
        let tol = cfg.tolerance(&id, 1e-6);
        out.push(timeit(
            CheckReport::relative(id, "radial extension", 0.0, 0.0, err, tol),
            t0,
        ));
    }

    // transported operators reduce and scale correctly
    let t0 = Instant::now();
    let tr = Transport::new(&s, &presets()[0].1, 0.0)?;
    let g0 = grad_gamma(&s, &u);
    let gt = tr.grad(&u);
    let red = g0
        .values
        .iter()
        .zip(&gt)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    out.push(timeit(
        CheckReport::absolute(
            "surfops.transported.identity_at_zero",
            "",
            red,
            cfg.tolerance("surfops.transported.identity_at_zero", 1e-10),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let tscale = 0.07;
    let trd = Transport::new(&s, &DeformationField::Dilation, tscale)?;
    let pos: Vec<_> = s.nodes.iter().map(cvec).collect();
    let d = trd.div(&pos);
    let expect = 2.0 / (1.0 + tscale);
    let err = d
        .values()
        .iter()
        .map(|v| (v - expect).norm())
        .fold(0.0, f64::max)
        / expect;
    out.push(timeit(
        CheckReport::relative(
            "surfops.transported.dilation_divergence",
            format!("t={tscale}"),
            expect,
            expect,
            err,
            cfg.tolerance("surfops.transported.dilation_divergence", 1e-9),
        ),
        t0,
    ));
    // projection pair is the identity on tangential data
    let t0 = Instant::now();
    let fwd = surfops::pi_projection(&s, &presets()[0].1, 0.08, PiDirection::Forward)?;
    let inv = surfops::pi_projection(&s, &presets()[0].1, 0.08, PiDirection::Inverse)?;
    let flat = flatten_vec3(&j.values);
    let round = fwd.apply(&inv.apply(&flat));
    let err = round
        .iter()
        .zip(&flat)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    out.push(timeit(
        CheckReport::absolute(
            "surfops.pi.roundtrip",
            "t=0.08",
            err,
            cfg.tolerance("surfops.pi.roundtrip", 1e-10),
        ),
        t0,
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

pub fn kernels_suite(cfg: &Config) -> Result<Vec<CheckReport>, Error> {
    let mut out = Vec::new();
    let l = cfg.verify_band_limit.unwrap_or(12);
    let s = build_sphere_grid(l + 1, 2 * l + 3, l)?;
    let rule = SingularRule::for_surface(&s);
    let nodef = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    let t0 = Instant::now();
    let worst = rule.validate(&s)?;
    out.push(timeit(
        CheckReport::absolute(
            "kernels.rule.selfcheck",
            format!("aux={}x{}", rule.n_theta_aux, rule.n_phi_aux),
            worst,
            cfg.tolerance("kernels.rule.selfcheck", 1e-8),
        ),
        t0,
    ));

    let t0 = Instant::now();
    let v0 = kernels::assemble_v(&s, &rule, &HelmholtzKernel::laplace(), &nodef, 0.0)?;
    let one = vec![Complex64::new(1.0, 0.0); s.node_count()];
    let c0 = v0
        .apply(&one)
        .iter()
        .map(|v| (v - 1.0).norm())
        .fold(0.0, f64::max);
    out.push(timeit(
        CheckReport::relative(
            "kernels.v0.constant",
            "unit sphere",
            1.0,
            1.0,
            c0,
            cfg.tolerance("kernels.v0.constant", 1e-8),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for n in 1..=8usize {
        let y = ScalarField::harmonic(&s, n, (n as i64).min(2));
        let eig = oracles::coulomb_single_layer_eigenvalue(n);
        let err = v0
            .apply(y.values())
            .iter()
            .zip(y.values())
            .map(|(a, b)| (a - eig * b).norm())
            .fold(0.0, f64::max)
            / eig;
        worst = worst.max(err);
    }
    out.push(timeit(
        CheckReport::relative(
            "kernels.v0.eigenvalues",
            "degrees 1..8",
            0.0,
            0.0,
            worst,
            cfg.tolerance("kernels.v0.eigenvalues", 1e-6),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let v1 = kernels::assemble_v(&s, &rule, &HelmholtzKernel::real(1.0), &nodef, 0.0)?;
    let mut worst = 0.0f64;
    for n in [0usize, 1, 2, 4, 6, 8] {
        let y = ScalarField::harmonic(&s, n, 0);
        let eig = oracles::helmholtz_single_layer_eigenvalue(n, 1.0);
        let err = v1
            .apply(y.values())
            .iter()
            .zip(y.values())
            .map(|(a, b)| (a - eig * b).norm())
            .fold(0.0, f64::max)
            / eig.norm();
        worst = worst.max(err);
    }
    out.push(timeit(
        CheckReport::relative(
            "kernels.vk.eigenvalues",
            "kappa=1 degrees 0..8",
            0.0,
            0.0,
            worst,
            cfg.tolerance("kernels.vk.eigenvalues", 1e-6),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let d0 = kernels::assemble_d(&s, &rule, &HelmholtzKernel::laplace(), &nodef, 0.0)?;
    let derr = d0
        .apply(&one)
        .iter()
        .map(|v| (v + 0.5).norm())
        .fold(0.0, f64::max)
        / 0.5;
    out.push(timeit(
        CheckReport::relative(
            "kernels.d0.constant",
            "unit sphere",
            -0.5,
            -0.5,
            derr,
            cfg.tolerance("kernels.d0.constant", 1e-6),
        ),
        t0,
    ));

    // derivative kernels against finite differences
    let xi = presets()[0].1.clone();
    let kernel = HelmholtzKernel::real(1.0);
    let u = ScalarField::harmonic(&s, 2, 1);
    let t0 = Instant::now();
    let dv = kernels::d_v(&s, &rule, &kernel, &xi)?;
    let analytic = dv.apply(u.values());
    let f = |t: f64| {
        kernels::assemble_v(&s, &rule, &kernel, &xi, t)
            .unwrap()
            .apply(u.values())
    };
    let (e1, _, order) = observed_order_complex(f, &analytic, 1e-2, 1);
    let rel = rel_err_complex(&gateaux_fd_complex(f, 1e-3, 1), &analytic);
    out.push(timeit(
        CheckReport::relative(
            "kernels.d_v.fd",
            "preset=bump_a",
            0.0,
            0.0,
            rel,
            cfg.tolerance("kernels.d_v.fd", 1e-5),
        )
        .with_order_or_floor(order, ORDER_BAND, e1, ORDER_FLOOR),
        t0,
    ));
    let t0 = Instant::now();
    let c = DeformationField::Constant {
        c: Vector3::new(0.4, -0.3, 0.6),
    };
    let dvc = kernels::d_v(&s, &rule, &kernel, &c)?;
    out.push(timeit(
        CheckReport::absolute(
            "kernels.d_v.translation_null",
            "constant field",
            dvc.norm_inf(),
            cfg.tolerance("kernels.d_v.translation_null", 1e-9),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let dd = kernels::d_d(&s, &rule, &kernel, &xi)?;
    let analytic = dd.apply(u.values());
    let f = |t: f64| {
        kernels::assemble_d(&s, &rule, &kernel, &xi, t)
            .unwrap()
            .apply(u.values())
    };
    let (e1, _, order) = observed_order_complex(f, &analytic, 1e-2, 1);
    let rel = rel_err_complex(&gateaux_fd_complex(f, 1e-3, 1), &analytic);
    out.push(timeit(
        CheckReport::relative(
            "kernels.d_d.fd",
            "preset=bump_a",
            0.0,
            0.0,
            rel,
            cfg.tolerance("kernels.d_d.fd", 1e-5),
        )
        .with_order_or_floor(order, ORDER_BAND, e1, ORDER_FLOOR),
        t0,
    ));
    // combined magnetic kernel derivative
    let t0 = Instant::now();
    let jt = random_tangent(&s, l - 3, cfg.seed + 13);
    let jf = flatten_vec3(&jt.values);
    let dm = kernels::d_m(&s, &rule, &kernel, &xi)?;
    let analytic = dm.apply(&jf);
    let f = |t: f64| {
        kernels::assemble_m_combined(&s, &rule, &kernel, &xi, t)
            .unwrap()
            .apply(&jf)
    };
    let (e1, _, order) = observed_order_complex(f, &analytic, 1e-2, 1);
    let rel = rel_err_complex(&gateaux_fd_complex(f, 1e-3, 1), &analytic);
    out.push(timeit(
        CheckReport::relative(
            "kernels.d_m.fd",
            "preset=bump_a",
            0.0,
            0.0,
            rel,
            cfg.tolerance("kernels.d_m.fd", 1e-5),
        )
        .with_order_or_floor(order, ORDER_BAND, e1, ORDER_FLOOR),
        t0,
    ));

    // potentials
    let t0 = Instant::now();
    let k0 = HelmholtzKernel::laplace();
    let targets = [Vector3::new(0.0, 0.0, 2.0)];
    let pot = kernels::potential_eval(&s, &k0, &one, &targets, &nodef, 0.0)?;
    out.push(timeit(
        CheckReport::relative(
            "kernels.potential.exterior_monopole",
            "|x|=2",
            0.5,
            pot[0].re,
            (pot[0] - 0.5).norm() / 0.5,
            cfg.tolerance("kernels.potential.exterior_monopole", 1e-8),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let inner = kernels::potential_eval(
        &s,
        &k0,
        &one,
        &[Vector3::new(0.1, 0.2, 0.2)],
        &nodef,
        0.0,
    )?;
    out.push(timeit(
        CheckReport::relative(
            "kernels.potential.interior_constancy",
            "|x|=0.3",
            1.0,
            inner[0].re,
            (inner[0] - 1.0).norm(),
            cfg.tolerance("kernels.potential.interior_constancy", 1e-8),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let da = kernels::d_potential(&s, &kernel, &xi, u.values(), &targets)?;
    let f = |t: f64| kernels::potential_eval(&s, &kernel, u.values(), &targets, &xi, t).unwrap();
    let (e1, _, order) = observed_order_complex(f, &da, 1e-2, 1);
    let rel = rel_err_complex(&gateaux_fd_complex(f, 1e-3, 1), &da);
    out.push(timeit(
        CheckReport::relative(
            "kernels.d_potential.fd",
            "preset=bump_a |x|=2",
            0.0,
            0.0,
            rel,
            cfg.tolerance("kernels.d_potential.fd", 1e-5),
        )
        .with_order_or_floor(order, ORDER_BAND, e1, 1e-12),
        t0,
    ));

    // far fields: exact translation phase law and a dilation sweep
    let t0 = Instant::now();
    let kf = HelmholtzKernel::real(1.3);
    let dirs = [
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(0.6, 0.8, 0.0),
        Vector3::new(-0.36, 0.48, 0.8),
    ];
    let uy = ScalarField::harmonic(&s, 2, 0);
    let base = kernels::farfield_scalar(&s, &kf, uy.values(), &dirs, &nodef, 0.0)?;
    let cshift = Vector3::new(0.23, -0.11, 0.31);
    let dff = kernels::d_farfield_scalar(
        &s,
        &kf,
        &DeformationField::Constant { c: cshift },
        uy.values(),
        &dirs,
    );
    let mut worst = 0.0f64;
    for (k, xh) in dirs.iter().enumerate() {
        let law = Complex64::new(0.0, -1.3) * xh.dot(&cshift) * base[k];
        worst = worst.max((dff[k] - law).norm() / base[k].norm().max(1e-300));
    }
    out.push(timeit(
        CheckReport::absolute(
            "kernels.d_farfield.translation_phase",
            "constant field",
            worst,
            cfg.tolerance("kernels.d_farfield.translation_phase", 1e-10),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let dfa = kernels::d_farfield_scalar(&s, &kernel, &xi, uy.values(), &dirs);
    let f = |t: f64| kernels::farfield_scalar(&s, &kernel, uy.values(), &dirs, &xi, t).unwrap();
    let (e1, _, order) = observed_order_complex(f, &dfa, 1e-2, 1);
    let rel = rel_err_complex(&gateaux_fd_complex(f, 1e-3, 1), &dfa);
    out.push(timeit(
        CheckReport::relative(
            "kernels.d_farfield.fd",
            "preset=bump_a",
            0.0,
            0.0,
            rel,
            cfg.tolerance("kernels.d_farfield.fd", 1e-5),
        )
        .with_order_or_floor(order, ORDER_BAND, e1, 1e-12),
        t0,
    ));

    // class contract: one extra power of smoothing across degrees
    let t0 = Instant::now();
    let lh = cfg.verify_band_limit.map(|v| v + 8).unwrap_or(18);
    let sh = build_sphere_grid(lh + 1, 2 * lh + 3, lh)?;
    let rule_h = SingularRule::for_surface(&sh);
    let vh = kernels::assemble_v(&sh, &rule_h, &HelmholtzKernel::real(1.0), &nodef, 0.0)?;
    let mut ratios = Vec::new();
    for n in [2usize, 4, 8, 16].iter().copied().filter(|n| *n <= lh - 2) {
        let y = ScalarField::harmonic(&sh, n, 1);
        let outv = ScalarField::from_values(vh.apply(y.values()));
        ratios.push(outv.l2_norm(&sh) / y.l2_norm(&sh));
    }
    let worst_ratio = ratios
        .windows(2)
        .map(|w| w[1] / w[0])
        .fold(0.0f64, f64::max);
    out.push(timeit(
        CheckReport::relative(
            "kernels.smoothing.single_layer",
            format!("ratios={ratios:?}"),
            0.5,
            worst_ratio,
            worst_ratio,
            cfg.tolerance("kernels.smoothing.single_layer", 0.65),
        ),
        t0,
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------
// emfield
// ---------------------------------------------------------------------------

pub fn emfield_suite(cfg: &Config) -> Result<Vec<CheckReport>, Error> {
    let mut out = Vec::new();
    let l = cfg.verify_band_limit.unwrap_or(10);
    let s = build_sphere_grid(l + 1, 2 * l + 3, l)?;
    let asm = EmAssembly::new(&s);
    let nodef = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    let kernel = HelmholtzKernel::real(1.0);
    let m = asm.coeff_dim();
    let h = {
        let mut p = vec![Complex64::default(); m];
        let mut q = vec![Complex64::default(); m];
        p[crate::sphharm::coeff_index(2, 1) - 1] = Complex64::new(0.9, 0.2);
        p[crate::sphharm::coeff_index(1, 0) - 1] = Complex64::new(-0.3, 0.4);
        q[crate::sphharm::coeff_index(1, -1) - 1] = Complex64::new(0.5, -0.1);
        q[crate::sphharm::coeff_index(2, 0) - 1] = Complex64::new(0.2, 0.7);
        hdensity_from_coeffs(&s, &p, &q)
    };
    let (hp, hq) = (
        emfield::hcoeffs(&s, &h.p),
        emfield::hcoeffs(&s, &h.q),
    );
    let j = helmholtz_recompose(&s, &h);

    // two-route assemblies at the reference configuration
    let two_route = |name: &str,
                     block_out: TangentField,
                     direct: Vec<nalgebra::Vector3<Complex64>>|
     -> (String, f64) {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..s.node_count() {
            let d = block_out.values[i] - direct[i];
            num += (d.x.norm_sqr() + d.y.norm_sqr() + d.z.norm_sqr()) * s.weights[i];
            den += (direct[i].x.norm_sqr() + direct[i].y.norm_sqr() + direct[i].z.norm_sqr())
                * s.weights[i];
        }
        (name.to_string(), (num / den).sqrt())
    };
    let t0 = Instant::now();
    let v0 = kernels::assemble_v(&s, &asm.rule, &kernel, &nodef, 0.0)?;
    let apply_v_comp = |jv: &[nalgebra::Vector3<Complex64>]| {
        let n = s.node_count();
        let jf = flatten_vec3(jv);
        let mut vj = vec![nalgebra::Vector3::from_element(Complex64::default()); n];
        for c in 0..3 {
            let outc = v0.apply(&jf[c * n..(c + 1) * n]);
            for i in 0..n {
                vj[i][c] = outc[i];
            }
        }
        vj
    };
    let block = asm.assemble_c(&kernel, &nodef, 0.0)?;
    let (op, oq) = block.apply(&hp, &hq);
    let block_field = helmholtz_recompose(&s, &hdensity_from_coeffs(&s, &op, &oq));
    let vj = apply_v_comp(&j.values);
    let divj = div_gamma(&s, &j.values);
    let vdiv = ScalarField::from_values(v0.apply(divj.values()));
    let curl_vdiv = curlvec_gamma(&s, &vdiv);
    let direct: Vec<_> = (0..s.node_count())
        .map(|i| {
            let nc = cvec(&s.frames[i].2);
            cross_c(&nc, &vj[i]) * (-kernel.kappa) + curl_vdiv.values[i] / kernel.kappa
        })
        .collect();
    let (_, rel) = two_route("c", block_field, direct);
    out.push(timeit(
        CheckReport::relative(
            "emfield.routes.c",
            "t=0",
            0.0,
            0.0,
            rel,
            cfg.tolerance("emfield.routes.c", 1e-6),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let v00 = kernels::assemble_v(&s, &asm.rule, &HelmholtzKernel::laplace(), &nodef, 0.0)?;
    let apply_v0_comp = |jv: &[nalgebra::Vector3<Complex64>]| {
        let n = s.node_count();
        let jf = flatten_vec3(jv);
        let mut vj = vec![nalgebra::Vector3::from_element(Complex64::default()); n];
        for c in 0..3 {
            let outc = v00.apply(&jf[c * n..(c + 1) * n]);
            for i in 0..n {
                vj[i][c] = outc[i];
            }
        }
        vj
    };
    let block = asm.assemble_c0star(&nodef, 0.0)?;
    let (op, oq) = block.apply(&hp, &hq);
    let block_field = helmholtz_recompose(&s, &hdensity_from_coeffs(&s, &op, &oq));
    let vj = apply_v0_comp(&j.values);
    let vdiv = ScalarField::from_values(v00.apply(divj.values()));
    let curl_vdiv = curlvec_gamma(&s, &vdiv);
    let direct: Vec<_> = (0..s.node_count())
        .map(|i| {
            let nc = cvec(&s.frames[i].2);
            cross_c(&nc, &vj[i]) + curl_vdiv.values[i]
        })
        .collect();
    let (_, rel) = two_route("c0", block_field, direct);
    out.push(timeit(
        CheckReport::relative(
            "emfield.routes.c0star",
            "t=0",
            0.0,
            0.0,
            rel,
            cfg.tolerance("emfield.routes.c0star", 1e-6),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let block = asm.assemble_m(&kernel, &nodef, 0.0)?;
    let (op, oq) = block.apply(&hp, &hq);
    let block_field = helmholtz_recompose(&s, &hdensity_from_coeffs(&s, &op, &oq));
    let mmat = kernels::assemble_m_combined(&s, &asm.rule, &kernel, &nodef, 0.0)?;
    let direct = crate::operator::unflatten_vec3(&mmat.apply(&flatten_vec3(&j.values)));
    let (_, rel) = two_route("m", block_field, direct);
    out.push(timeit(
        CheckReport::relative(
            "emfield.routes.m",
            "t=0",
            0.0,
            0.0,
            rel,
            cfg.tolerance("emfield.routes.m", 1e-6),
        ),
        t0,
    ));

    // potential intertwining and field equations, base and derivative
    let probes = [
        Vector3::new(0.12, 0.1, 0.25),
        Vector3::new(-0.1, 0.13, 0.2),
        Vector3::new(1.3, -1.3, 1.1),
        Vector3::new(3.0, 2.0, 3.0),
    ];
    let xi = presets()[0].1.clone();
    let t0 = Instant::now();
    let mut worst_base = 0.0f64;
    let mut worst_maxwell = 0.0f64;
    for x in &probes {
        let pe = |y: &Vector3<f64>| {
            emfield::psi_e(&s, &kernel, &h, &[*y], &nodef, 0.0).unwrap()[0]
        };
        let pm = |y: &Vector3<f64>| {
            emfield::psi_m(&s, &kernel, &h, &[*y], &nodef, 0.0).unwrap()[0]
        };
        let ce = emfield::fd_curl(&pe, x, 1e-3);
        let cm = emfield::fd_curl(&pm, x, 1e-3);
        let ve = pe(x);
        let vm = pm(x);
        let scale = ve.norm().max(vm.norm());
        worst_base = worst_base
            .max((ce - vm * kernel.kappa).norm() / scale)
            .max((cm - ve * kernel.kappa).norm() / scale);
        let cc = emfield::fd_curl(&|y: &Vector3<f64>| emfield::fd_curl(&pe, y, 1e-3), x, 1e-3);
        worst_maxwell =
            worst_maxwell.max((cc - ve * kernel.kappa * kernel.kappa).norm() / ve.norm());
    }
    out.push(timeit(
        CheckReport::relative(
            "emfield.intertwine.base",
            "4 probes",
            0.0,
            0.0,
            worst_base,
            cfg.tolerance("emfield.intertwine.base", 1e-4),
        ),
        t0,
    ));
    out.push(CheckReport::relative(
        "emfield.maxwell.base",
        "4 probes",
        0.0,
        0.0,
        worst_maxwell,
        cfg.tolerance("emfield.maxwell.base", 1e-4),
    ));
    let t0 = Instant::now();
    let mut worst_d = 0.0f64;
    let mut worst_dm = 0.0f64;
    for x in &probes[2..] {
        let dpe = |y: &Vector3<f64>| {
            emfield::d_psi_e(&s, &kernel, &xi, &h, &[*y]).unwrap()[0]
        };
        let dpm = |y: &Vector3<f64>| {
            emfield::d_psi_m(&s, &kernel, &xi, &h, &[*y]).unwrap()[0]
        };
        let ce = emfield::fd_curl(&dpe, x, 1e-3);
        let v_m = dpm(x);
        let v_e = dpe(x);
        let scale = v_e.norm().max(v_m.norm());
        worst_d = worst_d.max((ce - v_m * kernel.kappa).norm() / scale);
        let cc = emfield::fd_curl(&|y: &Vector3<f64>| emfield::fd_curl(&dpe, y, 1e-3), x, 1e-3);
        worst_dm = worst_dm.max((cc - v_e * kernel.kappa * kernel.kappa).norm() / v_e.norm());
    }
    out.push(timeit(
        CheckReport::relative(
            "emfield.intertwine.derivative",
            "exterior probes",
            0.0,
            0.0,
            worst_d,
            cfg.tolerance("emfield.intertwine.derivative", 1e-4),
        ),
        t0,
    ));
    out.push(CheckReport::relative(
        "emfield.maxwell.derivative",
        "exterior probes",
        0.0,
        0.0,
        worst_dm,
        cfg.tolerance("emfield.maxwell.derivative", 1e-4),
    ));

    // block derivative sweeps
    let kit = asm.derivative_kit(&kernel, &xi)?;
    let kit0 = asm.derivative_kit(&HelmholtzKernel::laplace(), &xi)?;
    let sweeps: Vec<(&str, Box<dyn Fn(f64) -> Vec<Complex64>>, Vec<Complex64>)> = vec![
        (
            "emfield.d_block.c.fd",
            Box::new(|t: f64| {
                let b = asm.assemble_c(&kernel, &xi, t).unwrap();
                let (p, q) = b.apply(&hp, &hq);
                [p, q].concat()
            }),
            {
                let d = asm.d_block_c(&kit)?;
                let (p, q) = d.apply(&hp, &hq);
                [p, q].concat()
            },
        ),
        (
            "emfield.d_block.c0star.fd",
            Box::new(|t: f64| {
                let b = asm.assemble_c0star(&xi, t).unwrap();
                let (p, q) = b.apply(&hp, &hq);
                [p, q].concat()
            }),
            {
                let d = asm.d_block_c0star(&kit0)?;
                let (p, q) = d.apply(&hp, &hq);
                [p, q].concat()
            },
        ),
        (
            "emfield.d_block.m.fd",
            Box::new(|t: f64| {
                let b = asm.assemble_m(&kernel, &xi, t).unwrap();
                let (p, q) = b.apply(&hp, &hq);
                [p, q].concat()
            }),
            {
                let d = asm.d_block_m(&kit)?;
                let (p, q) = d.apply(&hp, &hq);
                [p, q].concat()
            },
        ),
    ];
    for (id, f, analytic) in sweeps {
        let t0 = Instant::now();
        let (e1, _, order) = observed_order_complex(|t| f(t), &analytic, 1e-2, 1);
        let rel = rel_err_complex(&gateaux_fd_complex(|t| f(t), 5e-3, 1), &analytic);
        out.push(timeit(
            CheckReport::relative(
                id,
                "preset=bump_a",
                0.0,
                0.0,
                rel,
                cfg.tolerance(id, 1e-4),
            )
            .with_order_or_floor(order, ORDER_BAND_COMPOSED, e1, ORDER_FLOOR),
            t0,
        ));
    }
    // potential and far-field derivative sweeps
    let far_targets = [Vector3::new(1.4, -1.3, 1.0), Vector3::new(0.12, 0.1, 0.2)];
    let dirs = [
        Vector3::new(0.6, -0.48, 0.64).normalize(),
        Vector3::new(0.0, 0.6, 0.8),
    ];
    let dsweeps: Vec<(&str, Box<dyn Fn(f64) -> Vec<Complex64>>, Vec<Complex64>)> = vec![
        (
            "emfield.d_psi_e.fd",
            Box::new(|t: f64| {
                flatten_vec3(&emfield::psi_e(&s, &kernel, &h, &far_targets, &xi, t).unwrap())
            }),
            flatten_vec3(&emfield::d_psi_e(&s, &kernel, &xi, &h, &far_targets)?),
        ),
        (
            "emfield.d_psi_m.fd",
            Box::new(|t: f64| {
                flatten_vec3(&emfield::psi_m(&s, &kernel, &h, &far_targets, &xi, t).unwrap())
            }),
            flatten_vec3(&emfield::d_psi_m(&s, &kernel, &xi, &h, &far_targets)?),
        ),
        (
            "emfield.d_farfield_e.fd",
            Box::new(|t: f64| {
                flatten_vec3(&emfield::farfield_e(&s, &kernel, &h, &dirs, &xi, t).unwrap())
            }),
            flatten_vec3(&emfield::d_farfield_e(&s, &kernel, &xi, &h, &dirs)),
        ),
        (
            "emfield.d_farfield_m.fd",
            Box::new(|t: f64| {
                flatten_vec3(&emfield::farfield_m(&s, &kernel, &h, &dirs, &xi, t).unwrap())
            }),
            flatten_vec3(&emfield::d_farfield_m(&s, &kernel, &xi, &h, &dirs)),
        ),
    ];
    for (id, f, analytic) in dsweeps {
        let t0 = Instant::now();
        let (e1, _, order) = observed_order_complex(|t| f(t), &analytic, 1e-2, 1);
        let rel = rel_err_complex(&gateaux_fd_complex(|t| f(t), 5e-3, 1), &analytic);
        out.push(timeit(
            CheckReport::relative(
                id,
                "preset=bump_a",
                0.0,
                0.0,
                rel,
                cfg.tolerance(id, 1e-4),
            )
            .with_order_or_floor(order, ORDER_BAND_COMPOSED, e1, ORDER_FLOOR),
            t0,
        ));
    }
    // translation invariance of the boundary-operator derivatives
    let t0 = Instant::now();
    let cfield = DeformationField::Constant {
        c: Vector3::new(0.4, -0.3, 0.6),
    };
    let kit_c = asm.derivative_kit(&kernel, &cfield)?;
    let kit_c0 = asm.derivative_kit(&HelmholtzKernel::laplace(), &cfield)?;
    let n1 = asm.d_block_c(&kit_c)?.norm_max();
    let n2 = asm.d_block_m(&kit_c)?.norm_max();
    let n3 = asm.d_block_c0star(&kit_c0)?.norm_max();
    out.push(timeit(
        CheckReport::absolute(
            "emfield.translation.null",
            "constant field",
            n1.max(n2).max(n3),
            cfg.tolerance("emfield.translation.null", 1e-9),
        ),
        t0,
    ));
    // mean-zero structure of the blocks
    let t0 = Instant::now();
    let block = asm.assemble_c(&kernel, &nodef, 0.0)?;
    let (op, oq) = block.apply(&hp, &hq);
    let mz = emfield::field_from_hcoeffs(&s, &op)
        .mean(&s)
        .norm()
        .max(emfield::field_from_hcoeffs(&s, &oq).mean(&s).norm());
    out.push(timeit(
        CheckReport::absolute(
            "emfield.mean_zero",
            "",
            mz,
            cfg.tolerance("emfield.mean_zero", 1e-12),
        ),
        t0,
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------
// scattering
// ---------------------------------------------------------------------------

pub fn scattering_suite(cfg: &Config) -> Result<Vec<CheckReport>, Error> {
    let mut out = Vec::new();
    let l = cfg.verify_band_limit.unwrap_or(10);
    let s = build_sphere_grid(l + 1, 2 * l + 3, l)?;
    let asm = EmAssembly::new(&s);
    let nodef = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    let inc = cfg.incident()?;
    // identical-media null test
    let t0 = Instant::now();
    let kappa = Complex64::new(cfg.kappa_e, 0.0);
    let null_cfg = ScatteringConfig::new(
        kappa,
        kappa,
        cfg.eps_e,
        cfg.eps_e,
        cfg.mu_e,
        cfg.mu_e,
        cfg.omega,
        cfg.eta,
    )?;
    let sol0 = scattering::solve(&asm, &null_cfg, &inc, &nodef, 0.0)?;
    let ev0 = FieldEvaluator::new(&s, &null_cfg);
    let dirs = [
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(0.6, 0.8, 0.0),
        Vector3::new(-0.8, 0.0, 0.6),
    ];
    let ff = ev0.farfield(&sol0, &dirs, &nodef, 0.0)?;
    let null = ff.iter().map(|v| v.norm()).fold(0.0, f64::max) / cfg.inc_pol.norm();
    out.push(timeit(
        CheckReport::absolute(
            "scattering.null_test",
            "identical media",
            null,
            cfg.tolerance("scattering.null_test", 1e-5),
        ),
        t0,
    ));

    let scfg = cfg.scattering_config()?;
    let t0 = Instant::now();
    let stack = assemble_stack(&asm, &scfg, &nodef, 0.0)?;
    let sol = solve_with_stack(&asm, &scfg, &inc, &nodef, 0.0, &stack)?;
    out.push(timeit(
        CheckReport::relative(
            "scattering.condition",
            "desk scale",
            0.0,
            sol.condition,
            sol.condition / 1e6,
            cfg.tolerance("scattering.condition", 1.0),
        ),
        t0,
    ));
    let ev = FieldEvaluator::new(&s, &scfg);
    let mut checkpoints = Vec::new();
    for i in 0..4 {
        for jj in 0..6 {
            let th = 0.35 + 0.6 * i as f64;
            let ph = 0.21 + 1.0 * jj as f64;
            checkpoints.push(Vector3::new(
                th.sin() * ph.cos(),
                th.sin() * ph.sin(),
                th.cos(),
            ));
        }
    }
    let hoff = 0.05;
    let t0 = Instant::now();
    let ext = boundary_data(&checkpoints, 1.0, hoff, |xs| {
        let es = ev.e_scattered(&sol, xs, &nodef, 0.0)?;
        Ok(xs
            .iter()
            .zip(&es)
            .map(|(x, v)| v + inc.eval(scfg.kappa_e, x))
            .collect())
    })?;
    let int = boundary_data(&checkpoints, -1.0, hoff, |xs| {
        ev.e_interior(&sol, xs, &nodef, 0.0)
    })?;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (k, x) in checkpoints.iter().enumerate() {
        let nc = cvec(x);
        worst = worst.max(cross_c(&nc, &(int.value[k] - ext.value[k])).norm());
        scale = scale.max(ext.value[k].norm());
    }
    out.push(timeit(
        CheckReport::relative(
            "scattering.transmission.electric",
            format!("{} checkpoints", checkpoints.len()),
            0.0,
            0.0,
            worst / scale,
            cfg.tolerance("scattering.transmission.electric", 1e-3),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let mu_e = Complex64::new(1.0 / scfg.mu_e, 0.0);
    let mu_i = Complex64::new(1.0 / scfg.mu_i, 0.0);
    let ext_c = boundary_data(&checkpoints, 1.0, hoff, |xs| {
        let cs = ev.curl_e_scattered(&sol, xs, &nodef, 0.0)?;
        Ok(xs
            .iter()
            .zip(&cs)
            .map(|(x, v)| (v + inc.curl(scfg.kappa_e, x)) * mu_e)
            .collect())
    })?;
    let int_c = boundary_data(&checkpoints, -1.0, hoff, |xs| {
        Ok(ev
            .curl_e_interior(&sol, xs, &nodef, 0.0)?
            .iter()
            .map(|v| v * mu_i)
            .collect())
    })?;
    let mut worst_n = 0.0f64;
    let mut scale_n = 0.0f64;
    for (k, x) in checkpoints.iter().enumerate() {
        let nc = cvec(x);
        worst_n = worst_n.max(cross_c(&nc, &(int_c.value[k] - ext_c.value[k])).norm());
        scale_n = scale_n.max(ext_c.value[k].norm());
    }
    out.push(timeit(
        CheckReport::relative(
            "scattering.transmission.magnetic",
            format!("{} checkpoints", checkpoints.len()),
            0.0,
            0.0,
            worst_n / scale_n,
            cfg.tolerance("scattering.transmission.magnetic", 1e-3),
        ),
        t0,
    ));
    // field equations at probes
    let t0 = Instant::now();
    let probe = Vector3::new(1.4, 1.3, 1.2);
    let cc = emfield::fd_curl(
        &|x: &Vector3<f64>| ev.curl_e_scattered(&sol, &[*x], &nodef, 0.0).unwrap()[0],
        &probe,
        1e-3,
    );
    let e0 = ev.e_scattered(&sol, &[probe], &nodef, 0.0)?[0];
    let k2 = scfg.kappa_e * scfg.kappa_e;
    out.push(timeit(
        CheckReport::relative(
            "scattering.maxwell.exterior",
            "probe |x|=2.25",
            0.0,
            0.0,
            (cc - e0 * k2).norm() / e0.norm(),
            cfg.tolerance("scattering.maxwell.exterior", 1e-4),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let probe_i = Vector3::new(0.15, 0.1, 0.2);
    let cci = emfield::fd_curl(
        &|x: &Vector3<f64>| ev.curl_e_interior(&sol, &[*x], &nodef, 0.0).unwrap()[0],
        &probe_i,
        1e-3,
    );
    let e0i = ev.e_interior(&sol, &[probe_i], &nodef, 0.0)?[0];
    let k2i = scfg.kappa_i * scfg.kappa_i;
    out.push(timeit(
        CheckReport::relative(
            "scattering.maxwell.interior",
            "probe |x|=0.34",
            0.0,
            0.0,
            (cci - e0i * k2i).norm() / e0i.norm(),
            cfg.tolerance("scattering.maxwell.interior", 1e-4),
        ),
        t0,
    ));
    // outgoing radiation decay
    let t0 = Instant::now();
    let xh = Vector3::new(0.48, 0.6, 0.64).normalize();
    let sm = |rr: f64| -> Result<f64, Error> {
        let x = rr * xh;
        let es = ev.e_scattered(&sol, &[x], &nodef, 0.0)?[0];
        let cs = ev.curl_e_scattered(&sol, &[x], &nodef, 0.0)?[0];
        Ok(
            (cross_c(&cs, &cvec(&xh)) - es * (Complex64::new(0.0, 1.0) * scfg.kappa_e))
                .norm(),
        )
    };
    let ratio = sm(40.0)? / sm(20.0)?;
    out.push(timeit(
        CheckReport::relative(
            "scattering.radiation.decay",
            "radii 20 and 40",
            0.25,
            ratio,
            ratio,
            cfg.tolerance("scattering.radiation.decay", 0.35),
        ),
        t0,
    ));

    // headline consistency: far-field derivative against the pipeline sweep
    let xi = cfg.deformation()?;
    let t0 = Instant::now();
    let dsol = d_solution(&asm, &scfg, &inc, &xi, &stack, &sol)?;
    let analytic = flatten_vec3(&ev.d_farfield(&sol, &dsol, &dirs)?);
    let f = |t: f64| -> Vec<Complex64> {
        let so = scattering::solve(&asm, &scfg, &inc, &xi, t).unwrap();
        flatten_vec3(&ev.farfield(&so, &dirs, &xi, t).unwrap())
    };
    let steps = &cfg.fd_steps;
    let (_, _, order) = observed_order_complex(|t| f(t), &analytic, steps[0], 1);
    let fd = gateaux_fd_complex(|t| f(t), *steps.last().unwrap(), 1);
    let rel = rel_err_complex(&fd, &analytic);
    out.push(timeit(
        CheckReport::relative(
            "scattering.d_farfield.fd",
            format!("preset={} steps={steps:?}", cfg.deformation_kind),
            0.0,
            0.0,
            rel,
            cfg.tolerance("scattering.d_farfield.fd", 1e-3),
        )
        .with_order(order, (1.7, 4.0)),
        t0,
    ));

    // translation law of the full pipeline
    let t0 = Instant::now();
    let c = Vector3::new(0.2, -0.1, 0.3);
    let dsol_c = d_solution(
        &asm,
        &scfg,
        &inc,
        &DeformationField::Constant { c },
        &stack,
        &sol,
    )?;
    let dff_c = ev.d_farfield(&sol, &dsol_c, &dirs)?;
    let ff0 = ev.farfield(&sol, &dirs, &nodef, 0.0)?;
    let mut worst = 0.0f64;
    for (k, xh) in dirs.iter().enumerate() {
        let ik = Complex64::new(0.0, 1.0) * scfg.kappa_e;
        let law = ff0[k] * (ik * (inc.direction.dot(&c) - xh.dot(&c)));
        worst = worst.max((dff_c[k] - law).norm() / ff0[k].norm());
    }
    out.push(timeit(
        CheckReport::absolute(
            "scattering.d_farfield.translation_law",
            "constant field",
            worst,
            cfg.tolerance("scattering.d_farfield.translation_law", 1e-10),
        ),
        t0,
    ));

    // characterization of the first derivative
    let char_points: Vec<Vector3<f64>> = checkpoints.iter().step_by(2).cloned().collect();
    let t0 = Instant::now();
    let rot = DeformationField::Rotation {
        omega: Vector3::new(0.0, 0.0, 1.0),
    };
    let dsol_r = d_solution(&asm, &scfg, &inc, &rot, &stack, &sol)?;
    let rep_r = characterization_check(&ev, &inc, &rot, &sol, &dsol_r, &char_points, hoff)?;
    out.push(timeit(
        CheckReport::absolute(
            "scattering.characterization.tangential_null",
            "rotation field",
            rep_r.abs_d.max(rep_r.abs_n),
            cfg.tolerance("scattering.characterization.tangential_null", 1e-6),
        ),
        t0,
    ));
    let t0 = Instant::now();
    let rep = characterization_check(&ev, &inc, &xi, &sol, &dsol, &char_points, hoff)?;
    out.push(timeit(
        CheckReport::relative(
            "scattering.characterization.electric",
            format!("preset={}", cfg.deformation_kind),
            0.0,
            0.0,
            rep.rel_d,
            cfg.tolerance("scattering.characterization.electric", 5e-2),
        ),
        t0,
    ));
    out.push(CheckReport::relative(
        "scattering.characterization.magnetic",
        format!("preset={}", cfg.deformation_kind),
        0.0,
        0.0,
        rep.rel_n,
        cfg.tolerance("scattering.characterization.magnetic", 5e-2),
    ));
    Ok(out)
}

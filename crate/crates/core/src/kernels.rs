//! Weakly singular boundary integral operators for the Helmholtz kernel on
//! deformed sphere-like surfaces, their derivative kernels, off-surface
//! potentials and far-field operators.
//!
//! Singular integrals use a rotated polar rule: for every target node the
//! grid is rotated so the target sits at the pole, the smooth part of the
//! integrand is interpolated spectrally, and the polar area element
//! cancels the 1/|x-y| singularity.

use crate::error::Error;
use crate::geometry::{deformed_at_point, DeformationField, ReferenceSurface};
use crate::operator::{DenseOperator, Space};
use crate::sphharm;
use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;

/// Helmholtz wavenumber with nonnegative imaginary part.
#[derive(Clone, Copy, Debug)]
pub struct HelmholtzKernel {
    pub kappa: Complex64,
}

impl HelmholtzKernel {
    pub fn new(kappa: Complex64) -> Result<Self, Error> {
        if kappa.im < 0.0 {
            return Err(Error::Usage(format!(
                "wavenumber must have nonnegative imaginary part, got {kappa}"
            )));
        }
        Ok(Self { kappa })
    }

    pub fn real(kappa: f64) -> Self {
        Self {
            kappa: Complex64::new(kappa, 0.0),
        }
    }

    pub fn laplace() -> Self {
        Self {
            kappa: Complex64::default(),
        }
    }
}

/// e^{i kappa s} / (4 pi s)
pub fn green(kappa: Complex64, s: f64) -> Complex64 {
    (Complex64::new(0.0, 1.0) * kappa * s).exp() / (4.0 * std::f64::consts::PI * s)
}

/// Radial factor of the gradient: grad_x G = factor * (x - y).
pub fn green_grad_factor(kappa: Complex64, s: f64) -> Complex64 {
    let iks = Complex64::new(0.0, 1.0) * kappa * s;
    (iks - 1.0) * iks.exp() / (4.0 * std::f64::consts::PI * s * s * s)
}

/// s-derivative of the gradient factor.
pub fn green_grad_factor_prime(kappa: Complex64, s: f64) -> Complex64 {
    let iks = Complex64::new(0.0, 1.0) * kappa * s;
    let k2s2 = kappa * kappa * s * s;
    (-k2s2 - 3.0 * iks + 3.0) * iks.exp() / (4.0 * std::f64::consts::PI * s * s * s * s)
}

/// Pointwise geometry of the deformed surface at a parameter point.
#[derive(Clone, Copy, Debug)]
pub struct PointGeom {
    /// Deformed position.
    pub pos: Vector3<f64>,
    /// Deformed unit normal.
    pub normal: Vector3<f64>,
    /// Area Jacobian of the deformation.
    pub jac: f64,
}

/// Orthonormal tangent pair at a unit vector with e1 x e2 = y.
fn frame_at(y: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = if y.x.abs() < 0.9 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let e1 = a.cross(y).normalize();
    let e2 = y.cross(&e1);
    (e1, e2)
}

/// Deformed geometry at an arbitrary point of the reference sphere.
pub fn point_geometry(r: &DeformationField, t: f64, y: &Vector3<f64>) -> PointGeom {
    let (e1, e2) = frame_at(y);
    let (jac, normal, _) = deformed_at_point(r, t, y, &e1, &e2);
    PointGeom {
        pos: y + t * r.eval(y),
        normal,
        jac,
    }
}

/// Rotation taking the north pole onto the given unit vector.
fn rotation_to(target: &Vector3<f64>) -> Matrix3<f64> {
    let z = Vector3::new(0.0, 0.0, 1.0);
    let axis = z.cross(target);
    let s = axis.norm();
    let c = z.dot(target);
    if s < 1e-14 {
        if c > 0.0 {
            Matrix3::identity()
        } else {
            Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
        }
    } else {
        let k = axis / s;
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        Matrix3::identity() + s * kx + (1.0 - c) * (kx * kx)
    }
}

/// Rotated polar quadrature for weakly singular kernels.
#[derive(Clone, Debug)]
pub struct SingularRule {
    pub n_theta_aux: usize,
    pub n_phi_aux: usize,
    /// Band limit of the spectral interpolation of the smooth factor.
    pub interp_degree: usize,
    /// Polar nodes as (cos, sin, weight incl. the area element sin(theta)).
    thetas: Vec<(f64, f64, f64)>,
    phis: Vec<(f64, f64)>,
}

impl SingularRule {
    pub fn new(n_theta_aux: usize, n_phi_aux: usize, interp_degree: usize) -> Self {
        let (tn, tw) = sphharm::gauss_legendre_on(n_theta_aux, 0.0, std::f64::consts::PI);
        let thetas = tn
            .iter()
            .zip(&tw)
            .map(|(t, w)| (t.cos(), t.sin(), w * t.sin()))
            .collect();
        let dphi = 2.0 * std::f64::consts::PI / n_phi_aux as f64;
        let phis = (0..n_phi_aux)
            .map(|j| {
                let p = dphi * j as f64 + 0.5 * dphi;
                (p.cos(), p.sin())
            })
            .collect();
        Self {
            n_theta_aux,
            n_phi_aux,
            interp_degree,
            thetas,
            phis,
        }
    }

    pub fn for_surface(surface: &ReferenceSurface) -> Self {
        let l = surface.band_limit;
        Self::new(2 * l + 6, 2 * l + 6, l)
    }

    fn phi_weight(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n_phi_aux as f64
    }

    /// Quadrature self-check: the Laplace kernel applied to the constant
    /// density on the unit sphere must give exactly one at every target.
    pub fn validate(&self, surface: &ReferenceSurface) -> Result<f64, Error> {
        if self.interp_degree != surface.band_limit {
            return Err(Error::Quadrature(format!(
                "rule interpolates degree {} but the grid carries degree {}",
                self.interp_degree, surface.band_limit
            )));
        }
        let mut worst = 0.0f64;
        for node in &surface.nodes {
            let rot = rotation_to(node);
            let mut acc = 0.0f64;
            for (ct, st, wt) in &self.thetas {
                for (cp, sp) in &self.phis {
                    let y = rot * Vector3::new(st * cp, st * sp, *ct);
                    let s = (node - y).norm();
                    acc += wt * self.phi_weight() / (4.0 * std::f64::consts::PI * s);
                }
            }
            worst = worst.max((acc - 1.0).abs());
        }
        if worst > 1e-8 {
            return Err(Error::Quadrature(format!(
                "constant-density identity off by {worst:.3e}"
            )));
        }
        Ok(worst)
    }
}

/// Assemble a scalar-kernel boundary operator on node values. The kernel
/// closure receives the target index and geometry, the source parameter
/// point and its geometry; it must include every smooth factor (Jacobian,
/// kernel, derivative weights).
pub fn assemble_scalar_kernel<K>(
    surface: &ReferenceSurface,
    rule: &SingularRule,
    r: &DeformationField,
    t: f64,
    kernel: K,
) -> Result<DMatrix<Complex64>, Error>
where
    K: Fn(usize, &PointGeom, &Vector3<f64>, &PointGeom) -> Complex64 + Sync,
{
    rule.validate(surface)?;
    let n = surface.node_count();
    let ncoef = surface.coeff_count();
    let l = surface.band_limit;
    let rows: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let tgt = point_geometry(r, t, &surface.nodes[i]);
            let rot = rotation_to(&surface.nodes[i]);
            let mut acc = vec![Complex64::default(); ncoef];
            for (ct, st, wt) in &rule.thetas {
                for (cp, sp) in &rule.phis {
                    let y = rot * Vector3::new(st * cp, st * sp, *ct);
                    let ygeom = point_geometry(r, t, &y);
                    let k = kernel(i, &tgt, &y, &ygeom) * (wt * rule.phi_weight());
                    let yv = sphharm::harmonics_values_at(l, &y);
                    for (a, v) in acc.iter_mut().zip(&yv) {
                        *a += k * v;
                    }
                }
            }
            // project interpolation coefficients back to node values
            let mut row = vec![Complex64::default(); n];
            for (k, a) in acc.iter().enumerate() {
                for (j, rv) in row.iter_mut().enumerate() {
                    *rv += a * surface.analysis[(k, j)];
                }
            }
            row
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// Assemble a matrix-kernel boundary operator on vector node values
/// (component-block layout). The kernel closure returns the 3x3 matrix
/// acting on the density value at the source point.
pub fn assemble_vector_kernel<K>(
    surface: &ReferenceSurface,
    rule: &SingularRule,
    r: &DeformationField,
    t: f64,
    kernel: K,
) -> Result<DMatrix<Complex64>, Error>
where
    K: Fn(usize, &PointGeom, &Vector3<f64>, &PointGeom) -> Matrix3<Complex64> + Sync,
{
    rule.validate(surface)?;
    let n = surface.node_count();
    let ncoef = surface.coeff_count();
    let l = surface.band_limit;
    let rows: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let tgt = point_geometry(r, t, &surface.nodes[i]);
            let rot = rotation_to(&surface.nodes[i]);
            // acc[a][c * ncoef + k]: output component a from density
            // component c through interpolation coefficient k
            let mut acc = vec![vec![Complex64::default(); 3 * ncoef]; 3];
            for (ct, st, wt) in &rule.thetas {
                for (cp, sp) in &rule.phis {
                    let y = rot * Vector3::new(st * cp, st * sp, *ct);
                    let ygeom = point_geometry(r, t, &y);
                    let km = kernel(i, &tgt, &y, &ygeom) * Complex64::new(wt * rule.phi_weight(), 0.0);
                    let yv = sphharm::harmonics_values_at(l, &y);
                    for a in 0..3 {
                        for c in 0..3 {
                            let kac = km[(a, c)];
                            if kac.norm_sqr() == 0.0 {
                                continue;
                            }
                            let dst = &mut acc[a][c * ncoef..(c + 1) * ncoef];
                            for (d, v) in dst.iter_mut().zip(&yv) {
                                *d += kac * v;
                            }
                        }
                    }
                }
            }
            let mut row = vec![Complex64::default(); 3 * 3 * n];
            for a in 0..3 {
                for c in 0..3 {
                    for k in 0..ncoef {
                        let v = acc[a][c * ncoef + k];
                        if v.norm_sqr() == 0.0 {
                            continue;
                        }
                        let dst = &mut row[a * 3 * n + c * n..a * 3 * n + (c + 1) * n];
                        for (j, rv) in dst.iter_mut().enumerate() {
                            *rv += v * surface.analysis[(k, j)];
                        }
                    }
                }
            }
            row
        })
        .collect();
    let mut m = DMatrix::zeros(3 * n, 3 * n);
    for (i, row) in rows.iter().enumerate() {
        for a in 0..3 {
            for jc in 0..3 * n {
                m[(a * n + i, jc)] = row[a * 3 * n + jc];
            }
        }
    }
    Ok(m)
}

/// Transported single layer operator on scalar node values.
pub fn assemble_v(
    surface: &ReferenceSurface,
    rule: &SingularRule,
    kernel: &HelmholtzKernel,
    r: &DeformationField,
    t: f64,
) -> Result<DenseOperator, Error> {
    let kappa = kernel.kappa;
    let m = assemble_scalar_kernel(surface, rule, r, t, |_, tgt, _, ygeom| {
        let s = (tgt.pos - ygeom.pos).norm();
        green(kappa, s) * ygeom.jac
    })?;
    Ok(DenseOperator::new(
        "single layer",
        Space::Values(surface.node_count()),
        Space::Values(surface.node_count()),
        m,
    ))
}

/// Derivative of the transported single layer at r = 0 in direction xi.
pub fn d_v(
    surface: &ReferenceSurface,
    rule: &SingularRule,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
) -> Result<DenseOperator, Error> {
    let kappa = kernel.kappa;
    let none = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    let m = assemble_scalar_kernel(surface, rule, &none, 0.0, |_, tgt, y, ygeom| {
        let z = tgt.pos - ygeom.pos;
        let s = z.norm();
        let dxi = xi.eval(&tgt.pos) - xi.eval(y);
        let div_xi = {
            let p = Matrix3::identity() - y * y.transpose();
            (p * xi.jac(y).transpose()).trace()
        };
        let ik = Complex64::new(0.0, 1.0) * kappa;
        green(kappa, s) * ((dxi.dot(&z) / s) * (ik - 1.0 / s) + div_xi)
    })?;
    Ok(DenseOperator::new(
        "single layer derivative",
        Space::Values(surface.node_count()),
        Space::Values(surface.node_count()),
        m,
    ))
}

/// Transported adjoint double layer (normal derivative at the target of
/// the single layer), a weakly singular class -1 operator.
pub fn assemble_d(
    surface: &ReferenceSurface,
    rule: &SingularRule,
    kernel: &HelmholtzKernel,
    r: &DeformationField,
    t: f64,
) -> Result<DenseOperator, Error> {
    let kappa = kernel.kappa;
    let m = assemble_scalar_kernel(surface, rule, r, t, |_, tgt, _, ygeom| {
        let z = tgt.pos - ygeom.pos;
        let s = z.norm();
        green_grad_factor(kappa, s) * tgt.normal.dot(&z) * ygeom.jac
    })?;
    Ok(DenseOperator::new(
        "adjoint double layer",
        Space::Values(surface.node_count()),
        Space::Values(surface.node_count()),
        m,
    ))
}

/// Derivative of the transported adjoint double layer at r = 0.
pub fn d_d(
    surface: &ReferenceSurface,
    rule: &SingularRule,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
) -> Result<DenseOperator, Error> {
    let kappa = kernel.kappa;
    let none = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    let dn_table = crate::geometry::d_normal(surface, xi);
    let m = assemble_scalar_kernel(surface, rule, &none, 0.0, |i, tgt, y, ygeom| {
        let z = tgt.pos - ygeom.pos;
        let s = z.norm();
        let zh = z / s;
        let dxi = xi.eval(&tgt.pos) - xi.eval(y);
        let div_xi = {
            let p = Matrix3::identity() - y * y.transpose();
            (p * xi.jac(y).transpose()).trace()
        };
        let g = green_grad_factor(kappa, s);
        let gp = green_grad_factor_prime(kappa, s);
        // grouped to keep the O(|z|^2) cancellation explicit
        let linear = dn_table[i].dot(&z) + tgt.normal.dot(&dxi);
        g * linear + gp * (zh.dot(&dxi)) * tgt.normal.dot(&z) + g * tgt.normal.dot(&z) * div_xi
    })?;
    Ok(DenseOperator::new(
        "adjoint double layer derivative",
        Space::Values(surface.node_count()),
        Space::Values(surface.node_count()),
        m,
    ))
}

/// Combined magnetic boundary operator kernel on tangential densities:
/// the difference of the adjoint double layer and the gradient-pairing
/// term, with the smooth-surface cancellations applied analytically.
pub fn assemble_m_combined(
    surface: &ReferenceSurface,
    rule: &SingularRule,
    kernel: &HelmholtzKernel,
    r: &DeformationField,
    t: f64,
) -> Result<DenseOperator, Error> {
    let kappa = kernel.kappa;
    let m = assemble_vector_kernel(surface, rule, r, t, |_, tgt, _, ygeom| {
        let z = tgt.pos - ygeom.pos;
        let s = z.norm();
        let g = green_grad_factor(kappa, s);
        let dn = tgt.normal - ygeom.normal;
        let mut km = Matrix3::zeros();
        let nz = tgt.normal.dot(&z);
        for a in 0..3 {
            for c in 0..3 {
                let val = if a == c { nz } else { 0.0 };
                km[(a, c)] = g * (val - z[a] * dn[c]) * ygeom.jac;
            }
        }
        km
    })?;
    Ok(DenseOperator::new(
        "magnetic boundary operator",
        Space::VectorValues(surface.node_count()),
        Space::VectorValues(surface.node_count()),
        m,
    ))
}

/// Gradient-pairing part alone (valid on tangential densities).
pub fn assemble_b(
    surface: &ReferenceSurface,
    rule: &SingularRule,
    kernel: &HelmholtzKernel,
    r: &DeformationField,
    t: f64,
) -> Result<DenseOperator, Error> {
    let kappa = kernel.kappa;
    let m = assemble_vector_kernel(surface, rule, r, t, |_, tgt, _, ygeom| {
        let z = tgt.pos - ygeom.pos;
        let s = z.norm();
        let g = green_grad_factor(kappa, s);
        let dn = tgt.normal - ygeom.normal;
        let mut km = Matrix3::zeros();
        for a in 0..3 {
            for c in 0..3 {
                km[(a, c)] = g * z[a] * dn[c] * ygeom.jac;
            }
        }
        km
    })?;
    Ok(DenseOperator::new(
        "gradient pairing operator",
        Space::VectorValues(surface.node_count()),
        Space::VectorValues(surface.node_count()),
        m,
    ))
}

/// Derivative of the combined magnetic operator at r = 0.
pub fn d_m(
    surface: &ReferenceSurface,
    rule: &SingularRule,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
) -> Result<DenseOperator, Error> {
    let kappa = kernel.kappa;
    let none = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    // derivative of the unit normal at an arbitrary surface point
    let dn_any = |y: &Vector3<f64>| -> Vector3<f64> {
        let p = Matrix3::identity() - y * y.transpose();
        -((p * xi.jac(y).transpose()) * y)
    };
    let dn_table = crate::geometry::d_normal(surface, xi);
    let m = assemble_vector_kernel(surface, rule, &none, 0.0, |i, tgt, y, _| {
        let z = tgt.pos - y;
        let s = z.norm();
        let zh = z / s;
        let g = green_grad_factor(kappa, s);
        let gp = green_grad_factor_prime(kappa, s);
        let dxi = xi.eval(&tgt.pos) - xi.eval(y);
        let div_xi = {
            let p = Matrix3::identity() - y * y.transpose();
            (p * xi.jac(y).transpose()).trace()
        };
        let nx = tgt.normal;
        let dn = nx - y; // reference normals
        let dnx = dn_table[i];
        let dny = dn_any(y);
        let ddn = dnx - dny;
        let nz = nx.dot(&z);
        let d_nz = dnx.dot(&z) + nx.dot(&dxi);
        let radial = gp * zh.dot(&dxi);
        let mut km = Matrix3::zeros();
        for a in 0..3 {
            for c in 0..3 {
                let base = if a == c { nz } else { 0.0 } - z[a] * dn[c];
                let d_base = if a == c { d_nz } else { 0.0 } - dxi[a] * dn[c] - z[a] * ddn[c];
                km[(a, c)] = radial * base + g * d_base + g * base * div_xi;
            }
        }
        km
    })?;
    Ok(DenseOperator::new(
        "magnetic operator derivative",
        Space::VectorValues(surface.node_count()),
        Space::VectorValues(surface.node_count()),
        m,
    ))
}

// ---------------------------------------------------------------------------
// Off-surface potentials and far fields (smooth quadrature)
// ---------------------------------------------------------------------------

/// Largest nearest-neighbor spacing of the deformed node set.
pub fn max_node_spacing(surface: &ReferenceSurface, r: &DeformationField, t: f64) -> f64 {
    let pts: Vec<Vector3<f64>> = surface
        .nodes
        .iter()
        .map(|x| x + t * r.eval(x))
        .collect();
    let mut worst = 0.0f64;
    for (i, p) in pts.iter().enumerate() {
        let mut nearest = f64::INFINITY;
        for (j, q) in pts.iter().enumerate() {
            if i != j {
                nearest = nearest.min((p - q).norm());
            }
        }
        worst = worst.max(nearest);
    }
    worst
}

fn check_separation(
    surface: &ReferenceSurface,
    r: &DeformationField,
    t: f64,
    targets: &[Vector3<f64>],
) -> Result<(), Error> {
    let d_min = 2.0 * max_node_spacing(surface, r, t);
    for (k, x) in targets.iter().enumerate() {
        let closest = surface
            .nodes
            .iter()
            .map(|y| (x - (y + t * r.eval(y))).norm())
            .fold(f64::INFINITY, f64::min);
        if closest < d_min {
            return Err(Error::TargetTooClose(format!(
                "target {k} at distance {closest:.3e} < required {d_min:.3e}"
            )));
        }
    }
    Ok(())
}

/// Single layer potential at separated off-surface targets.
pub fn potential_eval(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    density: &[Complex64],
    targets: &[Vector3<f64>],
    r: &DeformationField,
    t: f64,
) -> Result<Vec<Complex64>, Error> {
    check_separation(surface, r, t, targets)?;
    let geom = crate::geometry::deformed_geometry(surface, r, t)?;
    Ok(targets
        .iter()
        .map(|x| {
            (0..surface.node_count())
                .map(|q| {
                    let yq = surface.nodes[q] + t * r.eval(&surface.nodes[q]);
                    let s = (x - yq).norm();
                    green(kernel.kappa, s) * density[q] * (geom.jacobian[q] * surface.weights[q])
                })
                .sum()
        })
        .collect())
}

/// Gradient (in the target) of the single layer potential.
pub fn potential_grad_eval(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    density: &[Complex64],
    targets: &[Vector3<f64>],
    r: &DeformationField,
    t: f64,
) -> Result<Vec<Vector3<Complex64>>, Error> {
    check_separation(surface, r, t, targets)?;
    let geom = crate::geometry::deformed_geometry(surface, r, t)?;
    Ok(targets
        .iter()
        .map(|x| {
            let mut acc = Vector3::new(
                Complex64::default(),
                Complex64::default(),
                Complex64::default(),
            );
            for q in 0..surface.node_count() {
                let yq = surface.nodes[q] + t * r.eval(&surface.nodes[q]);
                let z = x - yq;
                let s = z.norm();
                let f = green_grad_factor(kernel.kappa, s)
                    * density[q]
                    * (geom.jacobian[q] * surface.weights[q]);
                acc += crate::operator::cvec(&z) * f;
            }
            acc
        })
        .collect())
}

/// Derivative of the single layer potential at r = 0: translation of the
/// sources plus the area-element change.
pub fn d_potential(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
    density: &[Complex64],
    targets: &[Vector3<f64>],
) -> Result<Vec<Complex64>, Error> {
    let none = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    check_separation(surface, &none, 0.0, targets)?;
    let divxi = crate::geometry::d_jacobian(surface, xi);
    Ok(targets
        .iter()
        .map(|x| {
            (0..surface.node_count())
                .map(|q| {
                    let y = surface.nodes[q];
                    let z = x - y;
                    let s = z.norm();
                    let k = -green_grad_factor(kernel.kappa, s) * z.dot(&xi.eval(&y))
                        + green(kernel.kappa, s) * divxi[q];
                    k * density[q] * surface.weights[q]
                })
                .sum()
        })
        .collect())
}

/// Derivative of the potential gradient at r = 0 (target gradient applied
/// to the derivative kernel analytically).
pub fn d_potential_grad(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
    density: &[Complex64],
    targets: &[Vector3<f64>],
) -> Result<Vec<Vector3<Complex64>>, Error> {
    let none = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    check_separation(surface, &none, 0.0, targets)?;
    let divxi = crate::geometry::d_jacobian(surface, xi);
    Ok(targets
        .iter()
        .map(|x| {
            let mut acc = Vector3::new(
                Complex64::default(),
                Complex64::default(),
                Complex64::default(),
            );
            for q in 0..surface.node_count() {
                let y = surface.nodes[q];
                let z = x - y;
                let s = z.norm();
                let g = green_grad_factor(kernel.kappa, s);
                let gp = green_grad_factor_prime(kernel.kappa, s);
                let xiy = xi.eval(&y);
                // grad_x [ -xi . grad G + G div xi ]
                //   = -(Hess G) xi + (grad G) div xi
                // Hess G = g I + (g'/s) z z^T
                let hess_xi = crate::operator::cvec(&xiy) * g
                    + crate::operator::cvec(&z) * (gp / s * z.dot(&xiy));
                let v = crate::operator::cvec(&z) * (g * divxi[q]) - hess_xi;
                acc += v * (density[q] * surface.weights[q]);
            }
            acc
        })
        .collect())
}

/// Scalar far-field operator of the single layer on the deformed surface.
pub fn farfield_scalar(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    density: &[Complex64],
    directions: &[Vector3<f64>],
    r: &DeformationField,
    t: f64,
) -> Result<Vec<Complex64>, Error> {
    let geom = crate::geometry::deformed_geometry(surface, r, t)?;
    let ik = Complex64::new(0.0, -1.0) * kernel.kappa;
    Ok(directions
        .iter()
        .map(|xh| {
            (0..surface.node_count())
                .map(|q| {
                    let yq = surface.nodes[q] + t * r.eval(&surface.nodes[q]);
                    (ik * xh.dot(&yq)).exp()
                        * density[q]
                        * (geom.jacobian[q] * surface.weights[q])
                })
                .sum()
        })
        .collect())
}

/// Derivative of the scalar far-field operator at r = 0.
pub fn d_farfield_scalar(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
    density: &[Complex64],
    directions: &[Vector3<f64>],
) -> Vec<Complex64> {
    let divxi = crate::geometry::d_jacobian(surface, xi);
    let ik = Complex64::new(0.0, -1.0) * kernel.kappa;
    directions
        .iter()
        .map(|xh| {
            (0..surface.node_count())
                .map(|q| {
                    let y = surface.nodes[q];
                    let phase = (ik * xh.dot(&y)).exp();
                    phase
                        * (Complex64::new(divxi[q], 0.0) + ik * xh.dot(&xi.eval(&y)))
                        * density[q]
                        * surface.weights[q]
                })
                .sum()
        })
        .collect()
}


// ---------------------------------------------------------------------------
// Operator export
// ---------------------------------------------------------------------------

const OPERATOR_MAGIC: &[u8; 8] = b"EMSOPB01";

/// Write an assembled operator to the binary matrix container: a small
/// header (dims, wavenumber, scale, deformation tag) followed by row-major
/// little-endian complex entries.
pub fn write_operator_binary(
    path: &std::path::Path,
    op: &DenseOperator,
    kappa: Complex64,
    t: f64,
    tag: &str,
) -> Result<(), Error> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(OPERATOR_MAGIC)?;
    f.write_all(&(op.matrix.nrows() as u64).to_le_bytes())?;
    f.write_all(&(op.matrix.ncols() as u64).to_le_bytes())?;
    f.write_all(&kappa.re.to_le_bytes())?;
    f.write_all(&kappa.im.to_le_bytes())?;
    f.write_all(&t.to_le_bytes())?;
    let tag_bytes = tag.as_bytes();
    f.write_all(&(tag_bytes.len() as u32).to_le_bytes())?;
    f.write_all(tag_bytes)?;
    for i in 0..op.matrix.nrows() {
        for j in 0..op.matrix.ncols() {
            let z = op.matrix[(i, j)];
            f.write_all(&z.re.to_le_bytes())?;
            f.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read back a binary operator container; returns the matrix and header.
pub fn read_operator_binary(
    path: &std::path::Path,
) -> Result<(DMatrix<Complex64>, Complex64, f64, String), Error> {
    use std::io::Read;
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != OPERATOR_MAGIC {
        return Err(Error::Usage("not an operator container".into()));
    }
    let mut b8 = [0u8; 8];
    f.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    f.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    f.read_exact(&mut b8)?;
    let kre = f64::from_le_bytes(b8);
    f.read_exact(&mut b8)?;
    let kim = f64::from_le_bytes(b8);
    f.read_exact(&mut b8)?;
    let t = f64::from_le_bytes(b8);
    let mut b4 = [0u8; 4];
    f.read_exact(&mut b4)?;
    let tag_len = u32::from_le_bytes(b4) as usize;
    let mut tag = vec![0u8; tag_len];
    f.read_exact(&mut tag)?;
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            f.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            f.read_exact(&mut b8)?;
            let im = f64::from_le_bytes(b8);
            m[(i, j)] = Complex64::new(re, im);
        }
    }
    Ok((
        m,
        Complex64::new(kre, kim),
        t,
        String::from_utf8_lossy(&tag).into_owned(),
    ))
}

/// CSV export for small operators.
pub fn write_operator_csv(path: &std::path::Path, op: &DenseOperator) -> Result<(), Error> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "row,col,re,im")?;
    for i in 0..op.matrix.nrows() {
        for j in 0..op.matrix.ncols() {
            let z = op.matrix[(i, j)];
            writeln!(f, "{i},{j},{:.15e},{:.15e}", z.re, z.im)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod export_tests {
    use super::*;
    use crate::operator::Space;

    #[test]
    fn operator_container_roundtrip() {
        let mut m = DMatrix::zeros(3, 2);
        for i in 0..3 {
            for j in 0..2 {
                m[(i, j)] = Complex64::new(i as f64 + 0.5, -(j as f64));
            }
        }
        let op = DenseOperator::new("test", Space::Coeffs(2), Space::Coeffs(3), m.clone());
        let path = std::env::temp_dir().join("emshape_op_roundtrip.emsop");
        write_operator_binary(&path, &op, Complex64::new(1.5, 0.25), 0.03, "dilation").unwrap();
        let (back, kappa, t, tag) = read_operator_binary(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(kappa, Complex64::new(1.5, 0.25));
        assert_eq!(t, 0.03);
        assert_eq!(tag, "dilation");
        let _ = std::fs::remove_file(path);
    }
}

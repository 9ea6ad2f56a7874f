//! Reference sphere discretization, deformation fields and the transported
//! surface quantities (area Jacobian, pushed-forward normal) together with
//! their first and second directional derivatives.

use crate::error::Error;
use crate::sphharm::{self, coeff_count};
use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;

/// Admissibility bounds: deformations must keep the area Jacobian above
/// this floor and stay inside the C1 ball below.
pub const MIN_JACOBIAN: f64 = 0.1;
pub const MAX_C1_NORM: f64 = 0.3;

/// Quadrature grid on the unit sphere with per-node orthonormal tangent
/// frames and a spherical-harmonic band limit.
#[derive(Clone)]
pub struct ReferenceSurface {
    pub n_theta: usize,
    pub n_phi: usize,
    pub band_limit: usize,
    pub nodes: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    /// Per-node (e_theta, e_phi, n) frame.
    pub frames: Vec<(Vector3<f64>, Vector3<f64>, Vector3<f64>)>,
    /// Synthesis table: values of every harmonic at every node.
    pub y_table: DMatrix<Complex64>,
    /// Theta-derivative table.
    pub dtheta_table: DMatrix<Complex64>,
    /// Scaled phi-derivative table (im Y / sin theta).
    pub dphi_table: DMatrix<Complex64>,
    /// Analysis matrix: coefficients from node values.
    pub analysis: DMatrix<Complex64>,
}

impl ReferenceSurface {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn coeff_count(&self) -> usize {
        coeff_count(self.band_limit)
    }

    /// Quadrature of complex node samples over the sphere.
    pub fn integrate(&self, values: &[Complex64]) -> Complex64 {
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * *w)
            .sum()
    }

    /// L2 norm over the sphere of complex node samples.
    pub fn l2_norm(&self, values: &[Complex64]) -> f64 {
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v.norm_sqr() * w)
            .sum::<f64>()
            .sqrt()
    }

    /// Spherical-harmonic analysis of node values.
    pub fn analyze(&self, values: &[Complex64]) -> Vec<Complex64> {
        let v = nalgebra::DVector::from_column_slice(values);
        (&self.analysis * v).data.into()
    }

    /// Synthesis of coefficients onto the nodes.
    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let c = nalgebra::DVector::from_column_slice(coeffs);
        (&self.y_table * c).data.into()
    }
}

/// Build a Gauss-Legendre (in cos theta) x uniform-phi grid resolving
/// harmonics up to `band_limit` exactly.
pub fn build_sphere_grid(
    n_theta: usize,
    n_phi: usize,
    band_limit: usize,
) -> Result<ReferenceSurface, Error> {
    if n_theta < band_limit + 1 || n_phi < 2 * band_limit + 1 {
        return Err(Error::Grid(format!(
            "grid {n_theta}x{n_phi} cannot resolve band limit {band_limit}; \
             need n_theta >= {} and n_phi >= {}",
            band_limit + 1,
            2 * band_limit + 1
        )));
    }
    let (ct, wt) = sphharm::gauss_legendre(n_theta);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let n = n_theta * n_phi;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for i in 0..n_theta {
        let cos_t = ct[i];
        let sin_t = (1.0 - cos_t * cos_t).sqrt();
        for j in 0..n_phi {
            let phi = dphi * j as f64;
            let (sp, cp) = phi.sin_cos();
            let node = Vector3::new(sin_t * cp, sin_t * sp, cos_t);
            let e_theta = Vector3::new(cos_t * cp, cos_t * sp, -sin_t);
            let e_phi = Vector3::new(-sp, cp, 0.0);
            nodes.push(node);
            frames.push((e_theta, e_phi, node));
            weights.push(wt[i] * dphi);
        }
    }
    let k = coeff_count(band_limit);
    let mut y_table = DMatrix::zeros(n, k);
    let mut dtheta_table = DMatrix::zeros(n, k);
    let mut dphi_table = DMatrix::zeros(n, k);
    for (i, node) in nodes.iter().enumerate() {
        let h = sphharm::harmonics_at(band_limit, node);
        for j in 0..k {
            y_table[(i, j)] = h.y[j];
            dtheta_table[(i, j)] = h.dy_dtheta[j];
            dphi_table[(i, j)] = h.dy_dphi_scaled[j];
        }
    }
    // analysis = Y^H diag(w); exact inverse of synthesis on band-limited data
    let mut analysis = DMatrix::zeros(k, n);
    for j in 0..k {
        for i in 0..n {
            analysis[(j, i)] = y_table[(i, j)].conj() * weights[i];
        }
    }
    Ok(ReferenceSurface {
        n_theta,
        n_phi,
        band_limit,
        nodes,
        weights,
        frames,
        y_table,
        dtheta_table,
        dphi_table,
        analysis,
    })
}

/// Closed-form deformation presets with analytic space Jacobians.
///
/// The Jacobian convention is `[Dv]_{il} = d v_i / d x_l` (row i is the
/// transposed gradient of component i).
#[derive(Clone, Debug)]
pub enum DeformationField {
    Constant { c: Vector3<f64> },
    Dilation,
    Rotation { omega: Vector3<f64> },
    GaussianBump {
        center: Vector3<f64>,
        width: f64,
        amp: Vector3<f64>,
    },
    /// Normal-direction bump with a real solid-harmonic profile.
    HarmonicNormal { degree: usize, order: i64, amp: f64 },
}

impl DeformationField {
    pub fn eval(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Self::Constant { c } => *c,
            Self::Dilation => *x,
            Self::Rotation { omega } => omega.cross(x),
            Self::GaussianBump { center, width, amp } => {
                let d = x - center;
                amp * (-d.norm_squared() / (2.0 * width * width)).exp()
            }
            Self::HarmonicNormal { degree, order, amp } => {
                let (h, _) = solid_harmonic(*degree, *order, x);
                *amp * h * x
            }
        }
    }

    pub fn jac(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        match self {
            Self::Constant { .. } => Matrix3::zeros(),
            Self::Dilation => Matrix3::identity(),
            Self::Rotation { omega } => Matrix3::new(
                0.0, -omega.z, omega.y, //
                omega.z, 0.0, -omega.x, //
                -omega.y, omega.x, 0.0,
            ),
            Self::GaussianBump { center, width, amp } => {
                let d = x - center;
                let g = (-d.norm_squared() / (2.0 * width * width)).exp();
                // D(a g(x)) = -g a d^T / w^2
                amp * (-(g / (width * width)) * d.transpose())
            }
            Self::HarmonicNormal { degree, order, amp } => {
                let (h, grad_h) = solid_harmonic(*degree, *order, x);
                *amp * (x * grad_h.transpose() + h * Matrix3::identity())
            }
        }
    }

    /// Largest admissible |t| for this field on the given node set.
    pub fn admissible_scale(&self, surface: &ReferenceSurface) -> f64 {
        let c1 = surface
            .nodes
            .iter()
            .map(|x| self.eval(x).norm().max(self.jac(x).norm()))
            .fold(0.0f64, f64::max);
        if c1 == 0.0 {
            f64::INFINITY
        } else {
            MAX_C1_NORM / c1
        }
    }
}

/// Real solid harmonics r^n Y and their gradients, hand-coded for the
/// preset degrees. Polynomials in x, so smooth everywhere.
fn solid_harmonic(degree: usize, order: i64, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let (px, py, pz) = (x.x, x.y, x.z);
    match (degree, order) {
        (1, 0) => (pz, Vector3::new(0.0, 0.0, 1.0)),
        (1, 1) => (px, Vector3::new(1.0, 0.0, 0.0)),
        (1, -1) => (py, Vector3::new(0.0, 1.0, 0.0)),
        (2, 0) => (
            pz * pz - 0.5 * (px * px + py * py),
            Vector3::new(-px, -py, 2.0 * pz),
        ),
        (2, 1) => (px * pz, Vector3::new(pz, 0.0, px)),
        (2, -1) => (py * pz, Vector3::new(0.0, pz, py)),
        (2, 2) => (px * px - py * py, Vector3::new(2.0 * px, -2.0 * py, 0.0)),
        (2, -2) => (px * py, Vector3::new(py, px, 0.0)),
        (3, 0) => (
            pz * (pz * pz - 1.5 * (px * px + py * py)),
            Vector3::new(
                -3.0 * px * pz,
                -3.0 * py * pz,
                3.0 * pz * pz - 1.5 * (px * px + py * py),
            ),
        ),
        (3, 2) => (
            pz * (px * px - py * py),
            Vector3::new(2.0 * px * pz, -2.0 * py * pz, px * px - py * py),
        ),
        _ => panic!("harmonic_normal preset supports (n,m) in {{1,2,3}} x small orders, got ({degree},{order})"),
    }
}

/// Transported geometry of the deformed surface (Id + t r)(S^2).
#[derive(Clone)]
pub struct DeformedGeometry {
    /// Area Jacobian of the deformation, per node.
    pub jacobian: Vec<f64>,
    /// Pushed-forward unit normal per node.
    pub normal: Vec<Vector3<f64>>,
    /// Unnormalized cofactor normal per node.
    pub omega: Vec<Vector3<f64>>,
}

/// Cofactor-normal construction at one point with frame (e1, e2, n).
pub fn deformed_at_point(
    r: &DeformationField,
    t: f64,
    x: &Vector3<f64>,
    e1: &Vector3<f64>,
    e2: &Vector3<f64>,
) -> (f64, Vector3<f64>, Vector3<f64>) {
    let m = Matrix3::identity() + t * r.jac(x);
    let a1 = m * e1;
    let a2 = m * e2;
    let omega = a1.cross(&a2);
    let j = omega.norm();
    (j, omega / j, omega)
}

/// Transported Jacobian and normal on the whole grid.
pub fn deformed_geometry(
    surface: &ReferenceSurface,
    r: &DeformationField,
    t: f64,
) -> Result<DeformedGeometry, Error> {
    let n = surface.node_count();
    let mut jacobian = Vec::with_capacity(n);
    let mut normal = Vec::with_capacity(n);
    let mut omega_all = Vec::with_capacity(n);
    for i in 0..n {
        let (e1, e2, _) = surface.frames[i];
        let (j, nu, om) = deformed_at_point(r, t, &surface.nodes[i], &e1, &e2);
        if !(j > MIN_JACOBIAN) {
            return Err(Error::Inadmissible(format!(
                "deformation scale t={t} drives the area Jacobian to {j:.3e} at node {i}"
            )));
        }
        jacobian.push(j);
        normal.push(nu);
        omega_all.push(om);
    }
    Ok(DeformedGeometry {
        jacobian,
        normal,
        omega: omega_all,
    })
}

/// Tangential-gradient matrix [grad_G xi] per node, from the analytic space
/// Jacobian: columns are tangential gradients of the components.
pub fn tangential_jacobian(
    surface: &ReferenceSurface,
    xi: &DeformationField,
    i: usize,
) -> Matrix3<f64> {
    let x = &surface.nodes[i];
    let n = surface.frames[i].2;
    let d = xi.jac(x); // [D xi], rows are gradients
    let p = Matrix3::identity() - n * n.transpose();
    // [nabla_G xi] = P [nabla xi] = P (D xi)^T
    p * d.transpose()
}

/// First derivative of the area Jacobian at r = 0: the surface divergence
/// of the direction field.
pub fn d_jacobian(surface: &ReferenceSurface, xi: &DeformationField) -> Vec<f64> {
    (0..surface.node_count())
        .map(|i| tangential_jacobian(surface, xi, i).trace())
        .collect()
}

/// First derivative of the pushed-forward normal at r = 0.
pub fn d_normal(surface: &ReferenceSurface, xi: &DeformationField) -> Vec<Vector3<f64>> {
    (0..surface.node_count())
        .map(|i| {
            let g = tangential_jacobian(surface, xi, i);
            -(g * surface.frames[i].2)
        })
        .collect()
}

/// Second derivative of the area Jacobian at r = 0, symmetric in the pair.
pub fn d2_jacobian(
    surface: &ReferenceSurface,
    xi1: &DeformationField,
    xi2: &DeformationField,
) -> Vec<f64> {
    (0..surface.node_count())
        .map(|i| {
            let g1 = tangential_jacobian(surface, xi1, i);
            let g2 = tangential_jacobian(surface, xi2, i);
            let n = surface.frames[i].2;
            -(g2 * g1).trace() + g1.trace() * g2.trace() + (g1 * n).dot(&(g2 * n))
        })
        .collect()
}

/// Second derivative of the pushed-forward normal at r = 0.
pub fn d2_normal(
    surface: &ReferenceSurface,
    xi1: &DeformationField,
    xi2: &DeformationField,
) -> Vec<Vector3<f64>> {
    (0..surface.node_count())
        .map(|i| {
            let g1 = tangential_jacobian(surface, xi1, i);
            let g2 = tangential_jacobian(surface, xi2, i);
            let n = surface.frames[i].2;
            g2 * (g1 * n) + g1 * (g2 * n) - (g1 * n).dot(&(g2 * n)) * n
        })
        .collect()
}

/// Central finite differences of a parametrized map, the oracle behind
/// every derivative claim.
pub fn gateaux_fd<F>(f: F, t: f64, order: u8) -> Vec<f64>
where
    F: Fn(f64) -> Vec<f64>,
{
    assert!(order == 1 || order == 2, "only first and second differences");
    let fp = f(t);
    let fm = f(-t);
    match order {
        1 => fp
            .iter()
            .zip(&fm)
            .map(|(p, m)| (p - m) / (2.0 * t))
            .collect(),
        _ => {
            let f0 = f(0.0);
            fp.iter()
                .zip(&fm)
                .zip(&f0)
                .map(|((p, m), z)| (p - 2.0 * z + m) / (t * t))
                .collect()
        }
    }
}

/// Complex-valued variant of `gateaux_fd`.
pub fn gateaux_fd_complex<F>(f: F, t: f64, order: u8) -> Vec<Complex64>
where
    F: Fn(f64) -> Vec<Complex64>,
{
    assert!(order == 1 || order == 2);
    let fp = f(t);
    let fm = f(-t);
    match order {
        1 => fp
            .iter()
            .zip(&fm)
            .map(|(p, m)| (p - m) / (2.0 * t))
            .collect(),
        _ => {
            let f0 = f(0.0);
            fp.iter()
                .zip(&fm)
                .zip(&f0)
                .map(|((p, m), z)| (p - 2.0 * z + m) / (t * t))
                .collect()
        }
    }
}

/// Run the difference at steps t and t/2 against an analytic value and
/// report (error at t, error at t/2, observed order).
pub fn observed_order<F>(f: F, analytic: &[f64], t: f64, order: u8) -> (f64, f64, f64)
where
    F: Fn(f64) -> Vec<f64> + Copy,
{
    let err = |step: f64| -> f64 {
        gateaux_fd(f, step, order)
            .iter()
            .zip(analytic)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let e1 = err(t);
    let e2 = err(t / 2.0);
    (e1, e2, (e1 / e2).log2())
}

/// Complex variant of `observed_order`.
pub fn observed_order_complex<F>(
    f: F,
    analytic: &[Complex64],
    t: f64,
    order: u8,
) -> (f64, f64, f64)
where
    F: Fn(f64) -> Vec<Complex64> + Copy,
{
    let err = |step: f64| -> f64 {
        gateaux_fd_complex(f, step, order)
            .iter()
            .zip(analytic)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    };
    let e1 = err(t);
    let e2 = err(t / 2.0);
    (e1, e2, (e1 / e2).log2())
}

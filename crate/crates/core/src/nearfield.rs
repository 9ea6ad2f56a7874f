//! Near-surface potential evaluation by spectral upsampling: densities
//! known by their coarse-grid coefficients are synthesized on a much finer
//! quadrature grid, pushing the smooth-rule accuracy close enough to the
//! boundary for the offset-and-extrapolate trace checks.

use crate::error::Error;
use crate::geometry::DeformationField;
use crate::kernels::{green, green_grad_factor, point_geometry, HelmholtzKernel};
use crate::operator::{cross_c, cvec};
use crate::sphharm;
use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;

/// Fine smooth-quadrature rule with per-node synthesized density values.
pub struct NearFieldRule {
    pub nodes: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    pub band_limit: usize,
    /// Harmonic tables at the fine nodes for the coarse band limit.
    tables: Vec<Vec<Complex64>>,
}

impl NearFieldRule {
    /// Build a fine rule able to evaluate potentials down to offsets of a
    /// few percent of the radius. `coarse_l` is the band limit of the
    /// densities to synthesize.
    pub fn new(fine_l: usize, coarse_l: usize) -> Self {
        let n_theta = fine_l + 1;
        let n_phi = 2 * fine_l + 1;
        let (ct, wt) = sphharm::gauss_legendre(n_theta);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for i in 0..n_theta {
            let cos_t = ct[i];
            let sin_t = (1.0 - cos_t * cos_t).sqrt();
            for j in 0..n_phi {
                let phi = dphi * j as f64;
                nodes.push(Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t));
                weights.push(wt[i] * dphi);
            }
        }
        let tables: Vec<Vec<Complex64>> = nodes
            .par_iter()
            .map(|y| sphharm::harmonics_values_at(coarse_l, y))
            .collect();
        Self {
            nodes,
            weights,
            band_limit: coarse_l,
            tables,
        }
    }

    pub fn default_for(coarse_l: usize) -> Self {
        Self::new(128.max(4 * coarse_l), coarse_l)
    }

    /// Synthesize a coarse coefficient vector at every fine node.
    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        self.tables
            .par_iter()
            .map(|row| row.iter().zip(coeffs).map(|(y, c)| y * c).sum())
            .collect()
    }

    /// Single layer potential of scalar density coefficients.
    pub fn psi(
        &self,
        kernel: &HelmholtzKernel,
        coeffs: &[Complex64],
        targets: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Complex64>, Error> {
        let dens = self.synthesize(coeffs);
        let geom = self.geometry(r, t);
        Ok(targets
            .iter()
            .map(|x| {
                (0..self.nodes.len())
                    .map(|q| {
                        let s = (x - geom[q].0).norm();
                        green(kernel.kappa, s) * dens[q] * (geom[q].1 * self.weights[q])
                    })
                    .sum()
            })
            .collect())
    }

    /// Gradient of the single layer of scalar density coefficients.
    pub fn psi_grad(
        &self,
        kernel: &HelmholtzKernel,
        coeffs: &[Complex64],
        targets: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let dens = self.synthesize(coeffs);
        let geom = self.geometry(r, t);
        Ok(targets
            .iter()
            .map(|x| {
                let mut acc = Vector3::from_element(Complex64::default());
                for q in 0..self.nodes.len() {
                    let z = x - geom[q].0;
                    let s = z.norm();
                    acc += cvec(&z)
                        * (green_grad_factor(kernel.kappa, s)
                            * dens[q]
                            * (geom[q].1 * self.weights[q]));
                }
                acc
            })
            .collect())
    }

    /// Vector single layer of component coefficient triples.
    pub fn psi_vec(
        &self,
        kernel: &HelmholtzKernel,
        coeffs: &[Vec<Complex64>; 3],
        targets: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let dx = self.synthesize(&coeffs[0]);
        let dy = self.synthesize(&coeffs[1]);
        let dz = self.synthesize(&coeffs[2]);
        let geom = self.geometry(r, t);
        Ok(targets
            .iter()
            .map(|x| {
                let mut acc = Vector3::from_element(Complex64::default());
                for q in 0..self.nodes.len() {
                    let s = (x - geom[q].0).norm();
                    let g = green(kernel.kappa, s) * (geom[q].1 * self.weights[q]);
                    acc.x += g * dx[q];
                    acc.y += g * dy[q];
                    acc.z += g * dz[q];
                }
                acc
            })
            .collect())
    }

    /// curl of the vector single layer of component coefficient triples.
    pub fn psi_curl(
        &self,
        kernel: &HelmholtzKernel,
        coeffs: &[Vec<Complex64>; 3],
        targets: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let dx = self.synthesize(&coeffs[0]);
        let dy = self.synthesize(&coeffs[1]);
        let dz = self.synthesize(&coeffs[2]);
        let geom = self.geometry(r, t);
        Ok(targets
            .iter()
            .map(|x| {
                let mut acc = Vector3::from_element(Complex64::default());
                for q in 0..self.nodes.len() {
                    let z = x - geom[q].0;
                    let s = z.norm();
                    let g = green_grad_factor(kernel.kappa, s) * (geom[q].1 * self.weights[q]);
                    let j = Vector3::new(dx[q], dy[q], dz[q]);
                    acc += cross_c(&cvec(&z), &j) * g;
                }
                acc
            })
            .collect())
    }

    fn geometry(&self, r: &DeformationField, t: f64) -> Vec<(Vector3<f64>, f64)> {
        self.nodes
            .par_iter()
            .map(|y| {
                let g = point_geometry(r, t, y);
                (g.pos, g.jac)
            })
            .collect()
    }
}

/// Hessian of the fundamental solution applied to a real vector.
fn hess_apply(
    kappa: Complex64,
    z: &Vector3<f64>,
    s: f64,
    w: &Vector3<f64>,
) -> Vector3<Complex64> {
    let g = green_grad_factor(kappa, s);
    let gp = crate::kernels::green_grad_factor_prime(kappa, s);
    cvec(w) * g + cvec(z) * (gp / s * z.dot(w))
}

/// Surface divergence of a deformation field at an arbitrary point of the
/// reference sphere.
fn div_gamma_at(xi: &DeformationField, y: &Vector3<f64>) -> f64 {
    let p = nalgebra::Matrix3::identity() - y * y.transpose();
    (p * xi.jac(y).transpose()).trace()
}

impl NearFieldRule {
    /// Moving-surface derivative of the scalar single layer at r = 0,
    /// density fixed.
    pub fn d_psi_moving(
        &self,
        kernel: &HelmholtzKernel,
        xi: &DeformationField,
        coeffs: &[Complex64],
        targets: &[Vector3<f64>],
    ) -> Vec<Complex64> {
        let dens = self.synthesize(coeffs);
        targets
            .iter()
            .map(|x| {
                (0..self.nodes.len())
                    .map(|q| {
                        let y = self.nodes[q];
                        let z = x - y;
                        let s = z.norm();
                        let k = -green_grad_factor(kernel.kappa, s) * z.dot(&xi.eval(&y))
                            + green(kernel.kappa, s) * div_gamma_at(xi, &y);
                        k * dens[q] * self.weights[q]
                    })
                    .sum()
            })
            .collect()
    }

    /// Moving-surface derivative of the single layer gradient at r = 0.
    pub fn d_psi_grad_moving(
        &self,
        kernel: &HelmholtzKernel,
        xi: &DeformationField,
        coeffs: &[Complex64],
        targets: &[Vector3<f64>],
    ) -> Vec<Vector3<Complex64>> {
        let dens = self.synthesize(coeffs);
        targets
            .iter()
            .map(|x| {
                let mut acc = Vector3::from_element(Complex64::default());
                for q in 0..self.nodes.len() {
                    let y = self.nodes[q];
                    let z = x - y;
                    let s = z.norm();
                    let g = green_grad_factor(kernel.kappa, s);
                    let v = cvec(&z) * (g * div_gamma_at(xi, &y))
                        - hess_apply(kernel.kappa, &z, s, &xi.eval(&y));
                    acc += v * (dens[q] * self.weights[q]);
                }
                acc
            })
            .collect()
    }

    /// Moving-surface derivative of the vector single layer curl at r = 0.
    pub fn d_psi_curl_moving(
        &self,
        kernel: &HelmholtzKernel,
        xi: &DeformationField,
        coeffs: &[Vec<Complex64>; 3],
        targets: &[Vector3<f64>],
    ) -> Vec<Vector3<Complex64>> {
        let dx = self.synthesize(&coeffs[0]);
        let dy = self.synthesize(&coeffs[1]);
        let dz = self.synthesize(&coeffs[2]);
        targets
            .iter()
            .map(|x| {
                let mut acc = Vector3::from_element(Complex64::default());
                for q in 0..self.nodes.len() {
                    let y = self.nodes[q];
                    let z = x - y;
                    let s = z.norm();
                    let g = green_grad_factor(kernel.kappa, s);
                    let j = Vector3::new(dx[q], dy[q], dz[q]);
                    let dgrad = hess_apply(kernel.kappa, &z, s, &xi.eval(&y));
                    let v = cross_c(&(-dgrad), &j)
                        + cross_c(&cvec(&z), &j) * (g * div_gamma_at(xi, &y));
                    acc += v * Complex64::new(self.weights[q], 0.0);
                }
                acc
            })
            .collect()
    }

    /// Moving-surface derivative of the plain vector single layer at r = 0.
    pub fn d_psi_vec_moving(
        &self,
        kernel: &HelmholtzKernel,
        xi: &DeformationField,
        coeffs: &[Vec<Complex64>; 3],
        targets: &[Vector3<f64>],
    ) -> Vec<Vector3<Complex64>> {
        let mut out = vec![Vector3::from_element(Complex64::default()); targets.len()];
        for c in 0..3 {
            let comp = self.d_psi_moving(kernel, xi, &coeffs[c], targets);
            for (o, v) in out.iter_mut().zip(&comp) {
                o[c] = *v;
            }
        }
        out
    }
}

//! Electromagnetic operator layer in Helmholtz coordinates: the boundary
//! operators C, M and the regularizer variant of C at zero wavenumber,
//! electric and magnetic potentials, far-field operators, and the
//! directional derivatives of all of them at the reference configuration.
//!
//! Tangential densities are carried as mean-zero potential pairs (p, q)
//! with j = grad p + curl q; the transport between deformed surfaces is
//! the identity on the (p, q) coefficients, so every deformation
//! dependence lives inside the assembled operators.

use crate::error::Error;
use crate::geometry::{DeformationField, ReferenceSurface};
use crate::kernels::{
    self, assemble_d, assemble_m_combined, assemble_v, d_d, d_m, d_v, green_grad_factor,
    green_grad_factor_prime, HelmholtzKernel, SingularRule,
};
use crate::operator::{cross_c, cvec, dot_c, dot_rc, flatten_vec3, unflatten_vec3};
use crate::surfops::{
    self, curls_gamma, curlvec_gamma, div_gamma, d_curlvec_gamma, d_div_gamma, d_grad_gamma,
    d_weighted_curls, d_weighted_laplace, grad_gamma, HDensity, ScalarField, TangentField,
    Transport, WeightedLapSolver,
};
use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;

/// Material and wavenumber data of the transmission problem.
#[derive(Clone, Debug)]
pub struct ScatteringConfig {
    pub kappa_i: Complex64,
    pub kappa_e: Complex64,
    pub eps_i: f64,
    pub eps_e: f64,
    pub mu_i: f64,
    pub mu_e: f64,
    pub omega: f64,
    pub eta: f64,
    pub rho: Complex64,
}

impl ScatteringConfig {
    pub fn new(
        kappa_i: Complex64,
        kappa_e: Complex64,
        eps_i: f64,
        eps_e: f64,
        mu_i: f64,
        mu_e: f64,
        omega: f64,
        eta: f64,
    ) -> Result<Self, Error> {
        if kappa_i.im < 0.0 || kappa_e.im < 0.0 {
            return Err(Error::Usage("wavenumbers need Im >= 0".into()));
        }
        if eps_i <= 0.0 || eps_e <= 0.0 || mu_i <= 0.0 || mu_e <= 0.0 || eta <= 0.0 {
            return Err(Error::Usage(
                "material constants and the coupling parameter must be positive".into(),
            ));
        }
        for (k, e, m, side) in [
            (kappa_i, eps_i, mu_i, "interior"),
            (kappa_e, eps_e, mu_e, "exterior"),
        ] {
            let target = omega * omega * e * m;
            if (k * k - target).norm() > 1e-10 * target.abs().max(1.0) {
                return Err(Error::Usage(format!(
                    "{side} wavenumber inconsistent with omega^2 eps mu"
                )));
            }
        }
        let rho = (kappa_i * mu_e) / (kappa_e * mu_i);
        Ok(Self {
            kappa_i,
            kappa_e,
            eps_i,
            eps_e,
            mu_i,
            mu_e,
            omega,
            eta,
            rho,
        })
    }

    /// Desk-scale default: unit sphere, moderate contrast.
    pub fn default_desk() -> Self {
        Self::new(
            Complex64::new(1.5, 0.0),
            Complex64::new(1.0, 0.0),
            2.25,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
        )
        .unwrap()
    }

    pub fn rho_consistent(&self) -> bool {
        ((self.kappa_i * self.mu_e) / (self.kappa_e * self.mu_i) - self.rho).norm() < 1e-14
    }
}

/// Four dense blocks mapping mean-zero (p, q) coefficient pairs.
#[derive(Clone)]
pub struct EMBlockOperator {
    pub pp: DMatrix<Complex64>,
    pub pq: DMatrix<Complex64>,
    pub qp: DMatrix<Complex64>,
    pub qq: DMatrix<Complex64>,
}

impl EMBlockOperator {
    pub fn dim(&self) -> usize {
        self.pp.nrows()
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            pp: DMatrix::zeros(m, m),
            pq: DMatrix::zeros(m, m),
            qp: DMatrix::zeros(m, m),
            qq: DMatrix::zeros(m, m),
        }
    }

    pub fn identity(m: usize) -> Self {
        Self {
            pp: DMatrix::identity(m, m),
            pq: DMatrix::zeros(m, m),
            qp: DMatrix::zeros(m, m),
            qq: DMatrix::identity(m, m),
        }
    }

    pub fn apply(&self, p: &[Complex64], q: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let pv = DVector::from_column_slice(p);
        let qv = DVector::from_column_slice(q);
        let up = &self.pp * &pv + &self.pq * &qv;
        let uq = &self.qp * &pv + &self.qq * &qv;
        (up.data.into(), uq.data.into())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            pp: &self.pp * s,
            pq: &self.pq * s,
            qp: &self.qp * s,
            qq: &self.qq * s,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            pp: &self.pp + &other.pp,
            pq: &self.pq + &other.pq,
            qp: &self.qp + &other.qp,
            qq: &self.qq + &other.qq,
        }
    }

    pub fn compose(&self, inner: &Self) -> Self {
        Self {
            pp: &self.pp * &inner.pp + &self.pq * &inner.qp,
            pq: &self.pp * &inner.pq + &self.pq * &inner.qq,
            qp: &self.qp * &inner.pp + &self.qq * &inner.qp,
            qq: &self.qp * &inner.pq + &self.qq * &inner.qq,
        }
    }

    /// Stacked 2m x 2m matrix.
    pub fn stacked(&self) -> DMatrix<Complex64> {
        let m = self.dim();
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        out.view_mut((0, 0), (m, m)).copy_from(&self.pp);
        out.view_mut((0, m), (m, m)).copy_from(&self.pq);
        out.view_mut((m, 0), (m, m)).copy_from(&self.qp);
        out.view_mut((m, m), (m, m)).copy_from(&self.qq);
        out
    }

    pub fn norm_max(&self) -> f64 {
        [&self.pp, &self.pq, &self.qp, &self.qq]
            .iter()
            .flat_map(|b| b.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Mean-zero coefficient vector of a scalar field (the constant mode is
/// dropped).
pub fn hcoeffs(surface: &ReferenceSurface, f: &ScalarField) -> Vec<Complex64> {
    f.coeffs(surface)[1..].to_vec()
}

pub fn field_from_hcoeffs(surface: &ReferenceSurface, c: &[Complex64]) -> ScalarField {
    let mut full = vec![Complex64::default(); surface.coeff_count()];
    full[1..].copy_from_slice(c);
    ScalarField::from_coeffs(surface, full)
}

pub fn hdensity_from_coeffs(
    surface: &ReferenceSurface,
    p: &[Complex64],
    q: &[Complex64],
) -> HDensity {
    HDensity {
        p: field_from_hcoeffs(surface, p),
        q: field_from_hcoeffs(surface, q),
    }
}

/// Assembly context: grid plus singular rule.
pub struct EmAssembly<'a> {
    pub surface: &'a ReferenceSurface,
    pub rule: SingularRule,
}

/// Value-space intermediates shared by the block assemblies at one scale.
struct ChainPieces<'a> {
    tr: Transport<'a>,
    solver: WeightedLapSolver<'a>,
    /// pullback of grad/curl of every mean-zero basis harmonic, 3N x 2m
    basis_fields: DMatrix<Complex64>,
    /// transported Laplacian of every p-basis harmonic, N x m
    basis_lap: DMatrix<Complex64>,
    m_dim: usize,
}

impl<'a> EmAssembly<'a> {
    pub fn new(surface: &'a ReferenceSurface) -> Self {
        Self {
            surface,
            rule: SingularRule::for_surface(surface),
        }
    }

    pub fn coeff_dim(&self) -> usize {
        self.surface.coeff_count() - 1
    }

    fn pieces(&self, r: &DeformationField, t: f64) -> Result<ChainPieces<'a>, Error>
    where
        'a: 'a,
    {
        let tr = Transport::new(self.surface, r, t)?;
        let solver = WeightedLapSolver::new(self.surface, &tr);
        let n = self.surface.node_count();
        let m = self.coeff_dim();
        let mut basis_fields = DMatrix::zeros(3 * n, 2 * m);
        let mut basis_lap = DMatrix::zeros(n, m);
        for k in 0..m {
            let mut c = vec![Complex64::default(); self.surface.coeff_count()];
            c[k + 1] = Complex64::new(1.0, 0.0);
            let y = ScalarField::from_coeffs(self.surface, c);
            let g = tr.grad(&y);
            let cv = tr.curlvec(&y);
            for i in 0..n {
                for a in 0..3 {
                    basis_fields[(a * n + i, k)] = g[i][a];
                    basis_fields[(a * n + i, m + k)] = cv[i][a];
                }
            }
            let lap = tr.div(&g);
            for i in 0..n {
                basis_lap[(i, k)] = lap.values()[i];
            }
        }
        Ok(ChainPieces {
            tr,
            solver,
            basis_fields,
            basis_lap,
            m_dim: m,
        })
    }

    /// Values matrix -> mean-zero coefficient matrix.
    fn analyze_block(&self, values: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let a = &self.surface.analysis * values;
        a.rows(1, self.surface.coeff_count() - 1).into_owned()
    }

    fn solve_columns(
        solver: &WeightedLapSolver,
        values: &DMatrix<Complex64>,
    ) -> Result<DMatrix<Complex64>, Error> {
        let mut out = DMatrix::zeros(values.nrows(), values.ncols());
        for c in 0..values.ncols() {
            let col: Vec<Complex64> = values.column(c).iter().copied().collect();
            let x = solver.solve(&col)?;
            for (i, v) in x.iter().enumerate() {
                out[(i, c)] = *v;
            }
        }
        Ok(out)
    }

    /// Apply a vector-valued dense matrix (3N x 3N) blockwise to 3N x k data.
    fn apply_vec_matrix(mat: &DMatrix<Complex64>, data: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        mat * data
    }

    /// Apply a scalar kernel matrix componentwise to 3N x k stacked data.
    fn apply_scalar_matrix_componentwise(
        mat: &DMatrix<Complex64>,
        data: &DMatrix<Complex64>,
    ) -> DMatrix<Complex64> {
        let n = mat.nrows();
        let k = data.ncols();
        let mut out = DMatrix::zeros(3 * n, k);
        for c in 0..3 {
            let block = data.rows(c * n, n);
            let res = mat * block;
            out.rows_mut(c * n, n).copy_from(&res);
        }
        out
    }

    /// Electric-type block: P = a Ainv J curls(V j), Q = a Ainv J div(V j
    /// projected tangentially) + b V lap(p).
    fn electric_block(
        &self,
        pieces: &ChainPieces,
        vmat: &DMatrix<Complex64>,
        a: Complex64,
        b: Complex64,
    ) -> Result<EMBlockOperator, Error> {
        let n = self.surface.node_count();
        let m = pieces.m_dim;
        let w = Self::apply_scalar_matrix_componentwise(vmat, &pieces.basis_fields);
        // weighted transported curls of the potential columns
        let mut y1 = DMatrix::zeros(n, 2 * m);
        let mut y2 = DMatrix::zeros(n, 2 * m);
        for c in 0..2 * m {
            let col: Vec<Vector3<Complex64>> = (0..n)
                .map(|i| Vector3::new(w[(i, c)], w[(n + i, c)], w[(2 * n + i, c)]))
                .collect();
            let curls = pieces.tr.curls(&col);
            let tang = pieces.tr.project_tangential(&col);
            let divs = pieces.tr.div(&tang);
            for i in 0..n {
                let jw = Complex64::new(pieces.tr.geom.jacobian[i], 0.0);
                y1[(i, c)] = curls.values()[i] * jw;
                y2[(i, c)] = divs.values()[i] * jw;
            }
        }
        let p_vals = Self::solve_columns(&pieces.solver, &y1)? * a;
        let mut q_vals = Self::solve_columns(&pieces.solver, &y2)? * a;
        // add b V lap(p) on the p columns
        let vlap = vmat * &pieces.basis_lap;
        for c in 0..m {
            for i in 0..n {
                q_vals[(i, c)] += b * vlap[(i, c)];
            }
        }
        let p_c = self.analyze_block(&p_vals);
        let q_c = self.analyze_block(&q_vals);
        Ok(EMBlockOperator {
            pp: p_c.columns(0, m).into_owned(),
            pq: p_c.columns(m, m).into_owned(),
            qp: q_c.columns(0, m).into_owned(),
            qq: q_c.columns(m, m).into_owned(),
        })
    }

    /// Boundary operator C at wavenumber kappa on the deformed surface.
    pub fn assemble_c(
        &self,
        kernel: &HelmholtzKernel,
        r: &DeformationField,
        t: f64,
    ) -> Result<EMBlockOperator, Error> {
        if kernel.kappa.norm() == 0.0 {
            return Err(Error::Usage("assemble_c needs a nonzero wavenumber".into()));
        }
        let pieces = self.pieces(r, t)?;
        let v = assemble_v(self.surface, &self.rule, kernel, r, t)?;
        self.electric_block(&pieces, &v.matrix, kernel.kappa, 1.0 / kernel.kappa)
    }

    /// Zero-wavenumber regularizer variant with flipped signs.
    pub fn assemble_c0star(
        &self,
        r: &DeformationField,
        t: f64,
    ) -> Result<EMBlockOperator, Error> {
        let pieces = self.pieces(r, t)?;
        let v = assemble_v(self.surface, &self.rule, &HelmholtzKernel::laplace(), r, t)?;
        self.electric_block(
            &pieces,
            &v.matrix,
            Complex64::new(-1.0, 0.0),
            Complex64::new(1.0, 0.0),
        )
    }

    /// Magnetic boundary operator M on the deformed surface.
    pub fn assemble_m(
        &self,
        kernel: &HelmholtzKernel,
        r: &DeformationField,
        t: f64,
    ) -> Result<EMBlockOperator, Error> {
        let pieces = self.pieces(r, t)?;
        let n = self.surface.node_count();
        let m = pieces.m_dim;
        let kappa2 = kernel.kappa * kernel.kappa;
        let vmat = assemble_v(self.surface, &self.rule, kernel, r, t)?.matrix;
        let dkmat = assemble_d(self.surface, &self.rule, kernel, r, t)?.matrix;
        let mmat = assemble_m_combined(self.surface, &self.rule, kernel, r, t)?.matrix;

        let w = Self::apply_scalar_matrix_componentwise(&vmat, &pieces.basis_fields);
        let mj = Self::apply_vec_matrix(&mmat, &pieces.basis_fields);

        let mut p_rhs = DMatrix::zeros(n, 2 * m);
        let mut q_rhs = DMatrix::zeros(n, 2 * m);
        for c in 0..2 * m {
            let wcol: Vec<Vector3<Complex64>> = (0..n)
                .map(|i| Vector3::new(w[(i, c)], w[(n + i, c)], w[(2 * n + i, c)]))
                .collect();
            let mcol: Vec<Vector3<Complex64>> = (0..n)
                .map(|i| Vector3::new(mj[(i, c)], mj[(n + i, c)], mj[(2 * n + i, c)]))
                .collect();
            let curls_m = pieces.tr.curls(&mcol);
            for i in 0..n {
                let jw = Complex64::new(pieces.tr.geom.jacobian[i], 0.0);
                let ndot = dot_rc(&pieces.tr.geom.normal[i], &wcol[i]);
                p_rhs[(i, c)] = kappa2 * ndot * jw;
                q_rhs[(i, c)] = -curls_m.values()[i] * jw;
            }
        }
        // normal-derivative pairing on the p columns
        let dk = &dkmat * &pieces.basis_lap;
        for c in 0..m {
            for i in 0..n {
                p_rhs[(i, c)] += dk[(i, c)] * Complex64::new(pieces.tr.geom.jacobian[i], 0.0);
            }
        }
        let p_vals = Self::solve_columns(&pieces.solver, &p_rhs)?;
        let q_vals = Self::solve_columns(&pieces.solver, &q_rhs)?;
        let p_c = self.analyze_block(&p_vals);
        let q_c = self.analyze_block(&q_vals);
        Ok(EMBlockOperator {
            pp: p_c.columns(0, m).into_owned(),
            pq: p_c.columns(m, m).into_owned(),
            qp: q_c.columns(0, m).into_owned(),
            qq: q_c.columns(m, m).into_owned(),
        })
    }
}

// ---------------------------------------------------------------------------
// Derivatives of the block operators at r = 0
// ---------------------------------------------------------------------------

/// Derivative kernels shared by the block-derivative assemblies for one
/// direction field.
pub struct DerivativeKit {
    pub xi: DeformationField,
    pub dv: DMatrix<Complex64>,
    pub dk_base: DMatrix<Complex64>,
    pub ddk: DMatrix<Complex64>,
    pub dm: DMatrix<Complex64>,
    pub m_base: DMatrix<Complex64>,
    pub v_base: DMatrix<Complex64>,
    pub kappa: Complex64,
}

impl<'a> EmAssembly<'a> {
    /// Assemble every singular kernel needed for the derivative chains at
    /// one wavenumber.
    pub fn derivative_kit(
        &self,
        kernel: &HelmholtzKernel,
        xi: &DeformationField,
    ) -> Result<DerivativeKit, Error> {
        let none = DeformationField::Constant {
            c: Vector3::zeros(),
        };
        Ok(DerivativeKit {
            xi: xi.clone(),
            dv: d_v(self.surface, &self.rule, kernel, xi)?.matrix,
            dk_base: assemble_d(self.surface, &self.rule, kernel, &none, 0.0)?.matrix,
            ddk: d_d(self.surface, &self.rule, kernel, xi)?.matrix,
            dm: d_m(self.surface, &self.rule, kernel, xi)?.matrix,
            m_base: assemble_m_combined(self.surface, &self.rule, kernel, &none, 0.0)?.matrix,
            v_base: assemble_v(self.surface, &self.rule, kernel, &none, 0.0)?.matrix,
            kappa: kernel.kappa,
        })
    }

    fn basis_field(&self, k: usize, part: usize) -> (ScalarField, ScalarField) {
        let mut cp = vec![Complex64::default(); self.surface.coeff_count()];
        let mut cq = vec![Complex64::default(); self.surface.coeff_count()];
        if part == 0 {
            cp[k + 1] = Complex64::new(1.0, 0.0);
        } else {
            cq[k + 1] = Complex64::new(1.0, 0.0);
        }
        (
            ScalarField::from_coeffs(self.surface, cp),
            ScalarField::from_coeffs(self.surface, cq),
        )
    }

    /// Derivative of the electric-type block (C or the zero-wavenumber
    /// variant) at r = 0, by the product rule through every factor.
    pub fn d_block_electric(
        &self,
        kit: &DerivativeKit,
        a: Complex64,
        b: Complex64,
    ) -> Result<EMBlockOperator, Error> {
        let s = self.surface;
        let n = s.node_count();
        let m = self.coeff_dim();
        let xi = &kit.xi;
        let mut p_out = DMatrix::zeros(n, 2 * m);
        let mut q_out = DMatrix::zeros(n, 2 * m);
        let apply_scalar = |mat: &DMatrix<Complex64>, vals: &[Complex64]| -> Vec<Complex64> {
            (mat * DVector::from_column_slice(vals)).data.into()
        };
        let apply_comp = |mat: &DMatrix<Complex64>, v: &[Vector3<Complex64>]| {
            let flat = flatten_vec3(v);
            let mut out = vec![Complex64::default(); 3 * n];
            for c in 0..3 {
                let res = apply_scalar(mat, &flat[c * n..(c + 1) * n]);
                out[c * n..(c + 1) * n].copy_from_slice(&res);
            }
            unflatten_vec3(&out)
        };
        let normals: Vec<Vector3<f64>> = s.frames.iter().map(|f| f.2).collect();
        let dnormals = crate::geometry::d_normal(s, xi);
        let divxi = crate::geometry::d_jacobian(s, xi);
        let solver0 = WeightedLapSolver::reference(s);
        for col in 0..2 * m {
            let (part, k) = (col / m, col % m);
            let (p, q) = self.basis_field(k, part);
            let scalar = if part == 0 { &p } else { &q };
            let j0: Vec<Vector3<Complex64>> = if part == 0 {
                grad_gamma(s, scalar).values
            } else {
                curlvec_gamma(s, scalar).values
            };
            let dj: Vec<Vector3<Complex64>> = if part == 0 {
                d_grad_gamma(s, xi, scalar)
            } else {
                d_curlvec_gamma(s, xi, scalar)
            };
            let w0 = apply_comp(&kit.v_base, &j0);
            let mut dw = apply_comp(&kit.dv, &j0);
            let vdj = apply_comp(&kit.v_base, &dj);
            for i in 0..n {
                dw[i] += vdj[i];
            }
            // P chain: a * lapinv( J curls(w) )
            let curls_w0 = curls_gamma(s, &w0);
            let base_p = ScalarField::from_values(solver0.solve(curls_w0.values())?);
            let d_awlap = d_weighted_laplace(s, xi, &base_p);
            let dwcurls = d_weighted_curls(s, xi, &TangentField::new(w0.clone()));
            let curls_dw = curls_gamma(s, &dw);
            let mut dp_vals = vec![Complex64::default(); n];
            {
                let sum: Vec<Complex64> = (0..n)
                    .map(|i| dwcurls.values()[i] + curls_dw.values()[i] - d_awlap.values()[i])
                    .collect();
                let solved = solver0.solve(&sum)?;
                for i in 0..n {
                    dp_vals[i] = a * solved[i];
                }
            }
            // Q chain: a * lapinv( J div(tangential projection of w) ) + b V lap p
            let u0: Vec<Vector3<Complex64>> = (0..n)
                .map(|i| {
                    let nc = cvec(&normals[i]);
                    w0[i] - nc * dot_c(&nc, &w0[i])
                })
                .collect();
            let du: Vec<Vector3<Complex64>> = (0..n)
                .map(|i| {
                    let nc = cvec(&normals[i]);
                    let dn = cvec(&dnormals[i]);
                    let pd = dw[i] - nc * dot_c(&nc, &dw[i]);
                    pd - dn * dot_c(&nc, &w0[i]) - nc * dot_c(&dn, &w0[i])
                })
                .collect();
            let g0 = div_gamma(s, &u0);
            let base_q = ScalarField::from_values(solver0.solve(g0.values())?);
            let d_awlap_q = d_weighted_laplace(s, xi, &base_q);
            let ddiv = d_div_gamma(s, xi, &TangentField::new(u0.clone()));
            let div_du = div_gamma(s, &du);
            let mut pre_q = vec![Complex64::default(); n];
            for i in 0..n {
                pre_q[i] = divxi[i] * g0.values()[i] + ddiv.values()[i] + div_du.values()[i]
                    - d_awlap_q.values()[i];
            }
            let solved_q = solver0.solve(&pre_q)?;
            let mut dq_vals: Vec<Complex64> = solved_q.iter().map(|v| a * v).collect();
            if part == 0 {
                // b [ dV lap p + V dlap p ]
                let lap0 = surfops::laplace_beltrami(s, scalar);
                let dlap = {
                    let gp = grad_gamma(s, scalar);
                    let t1 = d_div_gamma(s, xi, &gp);
                    let t2 = div_gamma(s, &d_grad_gamma(s, xi, scalar));
                    ScalarField::from_values(
                        (0..n).map(|i| t1.values()[i] + t2.values()[i]).collect(),
                    )
                };
                let term = {
                    let a1 = apply_scalar(&kit.dv, lap0.values());
                    let a2 = apply_scalar(&kit.v_base, dlap.values());
                    (0..n).map(|i| b * (a1[i] + a2[i])).collect::<Vec<_>>()
                };
                for i in 0..n {
                    dq_vals[i] += term[i];
                }
            }
            for i in 0..n {
                p_out[(i, col)] = dp_vals[i];
                q_out[(i, col)] = dq_vals[i];
            }
        }
        let p_c = self.analyze_block(&p_out);
        let q_c = self.analyze_block(&q_out);
        Ok(EMBlockOperator {
            pp: p_c.columns(0, m).into_owned(),
            pq: p_c.columns(m, m).into_owned(),
            qp: q_c.columns(0, m).into_owned(),
            qq: q_c.columns(m, m).into_owned(),
        })
    }

    /// Derivative of C at r = 0.
    pub fn d_block_c(&self, kit: &DerivativeKit) -> Result<EMBlockOperator, Error> {
        self.d_block_electric(kit, kit.kappa, 1.0 / kit.kappa)
    }

    /// Derivative of the zero-wavenumber regularizer at r = 0.
    pub fn d_block_c0star(&self, kit: &DerivativeKit) -> Result<EMBlockOperator, Error> {
        self.d_block_electric(kit, Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0))
    }

    /// Derivative of M at r = 0.
    pub fn d_block_m(&self, kit: &DerivativeKit) -> Result<EMBlockOperator, Error> {
        let s = self.surface;
        let n = s.node_count();
        let m = self.coeff_dim();
        let xi = &kit.xi;
        let kappa2 = kit.kappa * kit.kappa;
        let apply_scalar = |mat: &DMatrix<Complex64>, vals: &[Complex64]| -> Vec<Complex64> {
            (mat * DVector::from_column_slice(vals)).data.into()
        };
        let apply_vec = |mat: &DMatrix<Complex64>, v: &[Vector3<Complex64>]| {
            let out: Vec<Complex64> =
                (mat * DVector::from_column_slice(&flatten_vec3(v))).data.into();
            unflatten_vec3(&out)
        };
        let apply_comp = |mat: &DMatrix<Complex64>, v: &[Vector3<Complex64>]| {
            let flat = flatten_vec3(v);
            let mut out = vec![Complex64::default(); 3 * n];
            for c in 0..3 {
                let res: Vec<Complex64> =
                    (mat * DVector::from_column_slice(&flat[c * n..(c + 1) * n])).data.into();
                out[c * n..(c + 1) * n].copy_from_slice(&res);
            }
            unflatten_vec3(&out)
        };
        let normals: Vec<Vector3<f64>> = s.frames.iter().map(|f| f.2).collect();
        let dnormals = crate::geometry::d_normal(s, xi);
        let divxi = crate::geometry::d_jacobian(s, xi);
        let solver0 = WeightedLapSolver::reference(s);
        let mut p_out = DMatrix::zeros(n, 2 * m);
        let mut q_out = DMatrix::zeros(n, 2 * m);
        for col in 0..2 * m {
            let (part, k) = (col / m, col % m);
            let (p, q) = self.basis_field(k, part);
            let scalar = if part == 0 { &p } else { &q };
            let j0: Vec<Vector3<Complex64>> = if part == 0 {
                grad_gamma(s, scalar).values
            } else {
                curlvec_gamma(s, scalar).values
            };
            let dj: Vec<Vector3<Complex64>> = if part == 0 {
                d_grad_gamma(s, xi, scalar)
            } else {
                d_curlvec_gamma(s, xi, scalar)
            };
            let w0 = apply_comp(&kit.v_base, &j0);
            let mut dw = apply_comp(&kit.dv, &j0);
            let vdj = apply_comp(&kit.v_base, &dj);
            for i in 0..n {
                dw[i] += vdj[i];
            }
            // P' chain
            let mut term0 = vec![Complex64::default(); n];
            let mut dterm = vec![Complex64::default(); n];
            for i in 0..n {
                let nc = cvec(&normals[i]);
                let dn = cvec(&dnormals[i]);
                term0[i] = kappa2 * dot_c(&nc, &w0[i]);
                dterm[i] = kappa2
                    * (dot_c(&dn, &w0[i]) + dot_c(&nc, &dw[i]))
                    + term0[i] * divxi[i];
            }
            if part == 0 {
                let lap0 = surfops::laplace_beltrami(s, scalar);
                let dlap = {
                    let gp = grad_gamma(s, scalar);
                    let t1 = d_div_gamma(s, xi, &gp);
                    let t2 = div_gamma(s, &d_grad_gamma(s, xi, scalar));
                    ScalarField::from_values(
                        (0..n).map(|i| t1.values()[i] + t2.values()[i]).collect(),
                    )
                };
                let dk0 = apply_scalar(&kit.dk_base, lap0.values());
                let ddk0 = apply_scalar(&kit.ddk, lap0.values());
                let dk_dlap = apply_scalar(&kit.dk_base, dlap.values());
                for i in 0..n {
                    term0[i] += dk0[i];
                    dterm[i] += ddk0[i] + dk_dlap[i] + dk0[i] * divxi[i];
                }
            }
            let base_p = ScalarField::from_values(solver0.solve(&term0)?);
            let d_awlap = d_weighted_laplace(s, xi, &base_p);
            let sum: Vec<Complex64> = (0..n)
                .map(|i| dterm[i] - d_awlap.values()[i])
                .collect();
            let dp_vals = solver0.solve(&sum)?;

            // Q' chain: -lapinv( J curls(M j) )
            let mj0 = apply_vec(&kit.m_base, &j0);
            let mut dmj = apply_vec(&kit.dm, &j0);
            let m_dj = apply_vec(&kit.m_base, &dj);
            for i in 0..n {
                dmj[i] += m_dj[i];
            }
            let g0 = curls_gamma(s, &mj0);
            let base_q = ScalarField::from_values(solver0.solve(g0.values())?);
            let d_awlap_q = d_weighted_laplace(s, xi, &base_q);
            let dwcurls = d_weighted_curls(s, xi, &TangentField::new(mj0.clone()));
            let curls_dm = curls_gamma(s, &dmj);
            let sum_q: Vec<Complex64> = (0..n)
                .map(|i| dwcurls.values()[i] + curls_dm.values()[i] - d_awlap_q.values()[i])
                .collect();
            let dq_vals = solver0.solve(&sum_q)?;
            for i in 0..n {
                p_out[(i, col)] = dp_vals[i];
                q_out[(i, col)] = -dq_vals[i];
            }
        }
        let p_c = self.analyze_block(&p_out);
        let q_c = self.analyze_block(&q_out);
        Ok(EMBlockOperator {
            pp: p_c.columns(0, m).into_owned(),
            pq: p_c.columns(m, m).into_owned(),
            qp: q_c.columns(0, m).into_owned(),
            qq: q_c.columns(m, m).into_owned(),
        })
    }
}

// ---------------------------------------------------------------------------
// Potentials and far fields
// ---------------------------------------------------------------------------

/// Pullback samples of the density and of its transported surface
/// divergence at scale t.
fn density_fields(
    h: &HDensity,
    tr: &Transport,
) -> (Vec<Vector3<Complex64>>, Vec<Complex64>) {
    let g = tr.grad(&h.p);
    let c = tr.curlvec(&h.q);
    let j: Vec<Vector3<Complex64>> = g.iter().zip(&c).map(|(a, b)| a + b).collect();
    let lap = tr.div(&g);
    (j, lap.values().to_vec())
}

/// Electric potential kappa psi(j) + kappa^-1 grad psi(div j) at separated
/// targets, on the deformed surface.
pub fn psi_e(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    h: &HDensity,
    targets: &[Vector3<f64>],
    r: &DeformationField,
    t: f64,
) -> Result<Vec<Vector3<Complex64>>, Error> {
    let tr = Transport::new(surface, r, t)?;
    let (j, lap) = density_fields(h, &tr);
    let jf = flatten_vec3(&j);
    let n = surface.node_count();
    let mut psi_j = vec![Vector3::from_element(Complex64::default()); targets.len()];
    for c in 0..3 {
        let comp = kernels::potential_eval(surface, kernel, &jf[c * n..(c + 1) * n], targets, r, t)?;
        for (pv, cv) in psi_j.iter_mut().zip(&comp) {
            pv[c] = *cv;
        }
    }
    let grad_lap = kernels::potential_grad_eval(surface, kernel, &lap, targets, r, t)?;
    Ok(psi_j
        .iter()
        .zip(&grad_lap)
        .map(|(a, b)| a * kernel.kappa + b / kernel.kappa)
        .collect())
}

/// Magnetic potential curl psi(j) at separated targets.
pub fn psi_m(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    h: &HDensity,
    targets: &[Vector3<f64>],
    r: &DeformationField,
    t: f64,
) -> Result<Vec<Vector3<Complex64>>, Error> {
    let tr = Transport::new(surface, r, t)?;
    let (j, _) = density_fields(h, &tr);
    curl_potential(surface, kernel, &j, targets, r, t)
}

/// curl of the single layer applied to vector density samples.
fn curl_potential(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    density: &[Vector3<Complex64>],
    targets: &[Vector3<f64>],
    r: &DeformationField,
    t: f64,
) -> Result<Vec<Vector3<Complex64>>, Error> {
    let geom = crate::geometry::deformed_geometry(surface, r, t)?;
    // separation is enforced by the scalar path; reuse its check
    kernels::potential_eval(
        surface,
        kernel,
        &vec![Complex64::default(); surface.node_count()],
        targets,
        r,
        t,
    )?;
    Ok(targets
        .iter()
        .map(|x| {
            let mut acc = Vector3::from_element(Complex64::default());
            for q in 0..surface.node_count() {
                let yq = surface.nodes[q] + t * r.eval(&surface.nodes[q]);
                let z = x - yq;
                let s = z.norm();
                let f = green_grad_factor(kernel.kappa, s)
                    * (geom.jacobian[q] * surface.weights[q]);
                acc += cross_c(&cvec(&z), &density[q]) * f;
            }
            acc
        })
        .collect())
}

/// Directional derivative of the electric potential at r = 0.
pub fn d_psi_e(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
    h: &HDensity,
    targets: &[Vector3<f64>],
) -> Result<Vec<Vector3<Complex64>>, Error> {
    let n = surface.node_count();
    let j0: Vec<Vector3<Complex64>> = {
        let g = grad_gamma(surface, &h.p);
        let c = curlvec_gamma(surface, &h.q);
        g.values.iter().zip(&c.values).map(|(a, b)| a + b).collect()
    };
    let dj: Vec<Vector3<Complex64>> = {
        let a = d_grad_gamma(surface, xi, &h.p);
        let b = d_curlvec_gamma(surface, xi, &h.q);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    };
    let lap0 = surfops::laplace_beltrami(surface, &h.p);
    let dlap = {
        let gp = grad_gamma(surface, &h.p);
        let t1 = d_div_gamma(surface, xi, &gp);
        let t2 = div_gamma(surface, &d_grad_gamma(surface, xi, &h.p));
        ScalarField::from_values(
            (0..n).map(|i| t1.values()[i] + t2.values()[i]).collect(),
        )
    };
    let none = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    let j0f = flatten_vec3(&j0);
    let djf = flatten_vec3(&dj);
    let mut out = vec![Vector3::from_element(Complex64::default()); targets.len()];
    for c in 0..3 {
        let moving =
            kernels::d_potential(surface, kernel, xi, &j0f[c * n..(c + 1) * n], targets)?;
        let data = kernels::potential_eval(
            surface,
            kernel,
            &djf[c * n..(c + 1) * n],
            targets,
            &none,
            0.0,
        )?;
        for (o, (a, b)) in out.iter_mut().zip(moving.iter().zip(&data)) {
            o[c] += kernel.kappa * (a + b);
        }
    }
    let gm = kernels::d_potential_grad(surface, kernel, xi, lap0.values(), targets)?;
    let gd = kernels::potential_grad_eval(surface, kernel, dlap.values(), targets, &none, 0.0)?;
    for (o, (a, b)) in out.iter_mut().zip(gm.iter().zip(&gd)) {
        *o += (a + b) / kernel.kappa;
    }
    Ok(out)
}

/// Directional derivative of the magnetic potential at r = 0.
pub fn d_psi_m(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
    h: &HDensity,
    targets: &[Vector3<f64>],
) -> Result<Vec<Vector3<Complex64>>, Error> {
    let n = surface.node_count();
    let j0: Vec<Vector3<Complex64>> = {
        let g = grad_gamma(surface, &h.p);
        let c = curlvec_gamma(surface, &h.q);
        g.values.iter().zip(&c.values).map(|(a, b)| a + b).collect()
    };
    let dj: Vec<Vector3<Complex64>> = {
        let a = d_grad_gamma(surface, xi, &h.p);
        let b = d_curlvec_gamma(surface, xi, &h.q);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    };
    let divxi = crate::geometry::d_jacobian(surface, xi);
    // separation check at the reference configuration
    let none = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    kernels::potential_eval(
        surface,
        kernel,
        &vec![Complex64::default(); n],
        targets,
        &none,
        0.0,
    )?;
    Ok(targets
        .iter()
        .map(|x| {
            let mut acc = Vector3::from_element(Complex64::default());
            for q in 0..n {
                let y = surface.nodes[q];
                let z = x - y;
                let s = z.norm();
                let g = green_grad_factor(kernel.kappa, s);
                let gp = green_grad_factor_prime(kernel.kappa, s);
                let xiy = xi.eval(&y);
                // d grad G = -(Hess G) xi = -(g I + (g'/s) z z^T) xi
                let dgrad = cvec(&xiy) * (-g) + cvec(&z) * (-(gp / s) * z.dot(&xiy));
                let term = cross_c(&dgrad, &j0[q])
                    + cross_c(&(cvec(&z) * g), &(dj[q] + j0[q] * Complex64::new(divxi[q], 0.0)));
                acc += term * Complex64::new(surface.weights[q], 0.0);
            }
            acc
        })
        .collect())
}

/// Electric far-field operator on the deformed surface; the output is
/// orthogonal to the observation direction by construction.
pub fn farfield_e(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    h: &HDensity,
    directions: &[Vector3<f64>],
    r: &DeformationField,
    t: f64,
) -> Result<Vec<Vector3<Complex64>>, Error> {
    let radiated = farfield_density_integral(surface, kernel, h, directions, r, t)?;
    Ok(radiated
        .iter()
        .zip(directions)
        .map(|(i, xh)| {
            let xc = cvec(xh);
            cross_c(&cross_c(&xc, i), &xc) * kernel.kappa
        })
        .collect())
}

/// Magnetic far-field operator.
pub fn farfield_m(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    h: &HDensity,
    directions: &[Vector3<f64>],
    r: &DeformationField,
    t: f64,
) -> Result<Vec<Vector3<Complex64>>, Error> {
    let radiated = farfield_density_integral(surface, kernel, h, directions, r, t)?;
    Ok(radiated
        .iter()
        .zip(directions)
        .map(|(i, xh)| cross_c(&cvec(xh), i) * (Complex64::new(0.0, 1.0) * kernel.kappa))
        .collect())
}

fn farfield_density_integral(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    h: &HDensity,
    directions: &[Vector3<f64>],
    r: &DeformationField,
    t: f64,
) -> Result<Vec<Vector3<Complex64>>, Error> {
    let tr = Transport::new(surface, r, t)?;
    let (j, _) = density_fields(h, &tr);
    let jf = flatten_vec3(&j);
    let n = surface.node_count();
    let mut out = vec![Vector3::from_element(Complex64::default()); directions.len()];
    for c in 0..3 {
        let comp =
            kernels::farfield_scalar(surface, kernel, &jf[c * n..(c + 1) * n], directions, r, t)?;
        for (o, v) in out.iter_mut().zip(&comp) {
            o[c] = *v;
        }
    }
    Ok(out)
}

/// Derivative of the radiated-density integral at r = 0.
fn d_farfield_density_integral(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
    h: &HDensity,
    directions: &[Vector3<f64>],
) -> Vec<Vector3<Complex64>> {
    let n = surface.node_count();
    let j0: Vec<Vector3<Complex64>> = {
        let g = grad_gamma(surface, &h.p);
        let c = curlvec_gamma(surface, &h.q);
        g.values.iter().zip(&c.values).map(|(a, b)| a + b).collect()
    };
    let dj: Vec<Vector3<Complex64>> = {
        let a = d_grad_gamma(surface, xi, &h.p);
        let b = d_curlvec_gamma(surface, xi, &h.q);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    };
    let divxi = crate::geometry::d_jacobian(surface, xi);
    let ik = Complex64::new(0.0, -1.0) * kernel.kappa;
    directions
        .iter()
        .map(|xh| {
            let mut acc = Vector3::from_element(Complex64::default());
            for q in 0..n {
                let y = surface.nodes[q];
                let phase = (ik * xh.dot(&y)).exp();
                let weight = phase
                    * (Complex64::new(divxi[q], 0.0) + ik * xh.dot(&xi.eval(&y)));
                acc += (j0[q] * weight + dj[q] * phase) * Complex64::new(surface.weights[q], 0.0);
            }
            acc
        })
        .collect()
}

/// Derivative of the electric far field at r = 0.
pub fn d_farfield_e(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
    h: &HDensity,
    directions: &[Vector3<f64>],
) -> Vec<Vector3<Complex64>> {
    d_farfield_density_integral(surface, kernel, xi, h, directions)
        .iter()
        .zip(directions)
        .map(|(i, xh)| {
            let xc = cvec(xh);
            cross_c(&cross_c(&xc, i), &xc) * kernel.kappa
        })
        .collect()
}

/// Derivative of the magnetic far field at r = 0.
pub fn d_farfield_m(
    surface: &ReferenceSurface,
    kernel: &HelmholtzKernel,
    xi: &DeformationField,
    h: &HDensity,
    directions: &[Vector3<f64>],
) -> Vec<Vector3<Complex64>> {
    d_farfield_density_integral(surface, kernel, xi, h, directions)
        .iter()
        .zip(directions)
        .map(|(i, xh)| cross_c(&cvec(xh), i) * (Complex64::new(0.0, 1.0) * kernel.kappa))
        .collect()
}

/// Central-difference curl of a vector field at a point, with one step of
/// Richardson refinement.
pub fn fd_curl<F>(f: &F, x: &Vector3<f64>, h: f64) -> Vector3<Complex64>
where
    F: Fn(&Vector3<f64>) -> Vector3<Complex64>,
{
    let raw = |step: f64| -> Vector3<Complex64> {
        let mut d = [[Complex64::default(); 3]; 3];
        for a in 0..3 {
            let mut xp = *x;
            let mut xm = *x;
            xp[a] += step;
            xm[a] -= step;
            let fp = f(&xp);
            let fm = f(&xm);
            for b in 0..3 {
                d[b][a] = (fp[b] - fm[b]) / (2.0 * step);
            }
        }
        Vector3::new(
            d[2][1] - d[1][2],
            d[0][2] - d[2][0],
            d[1][0] - d[0][1],
        )
    };
    let c1 = raw(h);
    let c2 = raw(h / 2.0);
    (c2 * Complex64::new(4.0, 0.0) - c1) / Complex64::new(3.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_sphere_grid;
    use crate::surfops::helmholtz_recompose;

    fn grid(l: usize) -> ReferenceSurface {
        build_sphere_grid(l + 1, 2 * l + 3, l).unwrap()
    }

    fn bump() -> DeformationField {
        DeformationField::GaussianBump {
            center: Vector3::new(0.4, -0.2, 0.8),
            width: 0.7,
            amp: Vector3::new(0.3, 0.1, 0.8),
        }
    }

    fn nodef() -> DeformationField {
        DeformationField::Constant {
            c: Vector3::zeros(),
        }
    }

    fn test_density(s: &ReferenceSurface) -> HDensity {
        let m = s.coeff_count() - 1;
        let mut p = vec![Complex64::default(); m];
        let mut q = vec![Complex64::default(); m];
        // a couple of low-degree harmonics with distinct coefficients
        p[crate::sphharm::coeff_index(2, 1) - 1] = Complex64::new(0.9, 0.2);
        p[crate::sphharm::coeff_index(1, 0) - 1] = Complex64::new(-0.3, 0.4);
        q[crate::sphharm::coeff_index(1, -1) - 1] = Complex64::new(0.5, -0.1);
        q[crate::sphharm::coeff_index(2, 0) - 1] = Complex64::new(0.2, 0.7);
        hdensity_from_coeffs(s, &p, &q)
    }

    fn h_to_vecs(s: &ReferenceSurface, h: &HDensity) -> (Vec<Complex64>, Vec<Complex64>) {
        (hcoeffs(s, &h.p), hcoeffs(s, &h.q))
    }

    /// Direct nodewise electric operator at the reference configuration.
    fn c_direct(
        s: &ReferenceSurface,
        asm: &EmAssembly,
        kernel: &HelmholtzKernel,
        j: &[Vector3<Complex64>],
    ) -> Vec<Vector3<Complex64>> {
        let v = assemble_v(s, &asm.rule, kernel, &nodef(), 0.0).unwrap();
        let n = s.node_count();
        let jf = flatten_vec3(j);
        let mut vj = vec![Vector3::from_element(Complex64::default()); n];
        for c in 0..3 {
            let out = v.apply(&jf[c * n..(c + 1) * n]);
            for i in 0..n {
                vj[i][c] = out[i];
            }
        }
        let divj = div_gamma(s, j);
        let vdiv = ScalarField::from_values(v.apply(divj.values()));
        let curl_vdiv = curlvec_gamma(s, &vdiv);
        (0..n)
            .map(|i| {
                let nc = cvec(&s.frames[i].2);
                cross_c(&nc, &vj[i]) * (-kernel.kappa)
                    + curl_vdiv.values[i] / kernel.kappa
            })
            .collect()
    }

    #[test]
    fn c_block_matches_direct_route() {
        let s = grid(8);
        let asm = EmAssembly::new(&s);
        let kernel = HelmholtzKernel::real(1.0);
        let h = test_density(&s);
        let (pc, qc) = h_to_vecs(&s, &h);
        let block = asm.assemble_c(&kernel, &nodef(), 0.0).unwrap();
        let (op, oq) = block.apply(&pc, &qc);
        let out = helmholtz_recompose(&s, &hdensity_from_coeffs(&s, &op, &oq));
        // tangential output
        assert!(out.normal_defect(&s) < 1e-9 * out.l2_norm(&s).max(1e-30));
        let j = helmholtz_recompose(&s, &h);
        let direct = c_direct(&s, &asm, &kernel, &j.values);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..s.node_count() {
            let d = out.values[i] - direct[i];
            num += (d.x.norm_sqr() + d.y.norm_sqr() + d.z.norm_sqr()) * s.weights[i];
            den += (direct[i].x.norm_sqr() + direct[i].y.norm_sqr() + direct[i].z.norm_sqr())
                * s.weights[i];
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-6, "two-route mismatch {rel}");
    }

    #[test]
    fn c0star_block_matches_direct_route() {
        let s = grid(8);
        let asm = EmAssembly::new(&s);
        let h = test_density(&s);
        let (pc, qc) = h_to_vecs(&s, &h);
        let block = asm.assemble_c0star(&nodef(), 0.0).unwrap();
        let (op, oq) = block.apply(&pc, &qc);
        let out = helmholtz_recompose(&s, &hdensity_from_coeffs(&s, &op, &oq));
        // direct route with the flipped-sign zero-wavenumber formula
        let v = assemble_v(&s, &asm.rule, &HelmholtzKernel::laplace(), &nodef(), 0.0).unwrap();
        let n = s.node_count();
        let j = helmholtz_recompose(&s, &h);
        let jf = flatten_vec3(&j.values);
        let mut vj = vec![Vector3::from_element(Complex64::default()); n];
        for c in 0..3 {
            let outc = v.apply(&jf[c * n..(c + 1) * n]);
            for i in 0..n {
                vj[i][c] = outc[i];
            }
        }
        let divj = div_gamma(&s, &j.values);
        let vdiv = ScalarField::from_values(v.apply(divj.values()));
        let curl_vdiv = curlvec_gamma(&s, &vdiv);
        let direct: Vec<Vector3<Complex64>> = (0..n)
            .map(|i| {
                let nc = cvec(&s.frames[i].2);
                cross_c(&nc, &vj[i]) + curl_vdiv.values[i]
            })
            .collect();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..n {
            let d = out.values[i] - direct[i];
            num += (d.x.norm_sqr() + d.y.norm_sqr() + d.z.norm_sqr()) * s.weights[i];
            den += (direct[i].x.norm_sqr() + direct[i].y.norm_sqr() + direct[i].z.norm_sqr())
                * s.weights[i];
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-6, "zero-wavenumber two-route mismatch {rel}");
        // q output mean-zero by construction of the coefficient space
        assert!(field_from_hcoeffs(&s, &oq).mean(&s).norm() < 1e-13);
    }

    #[test]
    fn m_block_matches_combined_kernel_route() {
        let s = grid(8);
        let asm = EmAssembly::new(&s);
        let kernel = HelmholtzKernel::real(1.0);
        let h = test_density(&s);
        let (pc, qc) = h_to_vecs(&s, &h);
        let block = asm.assemble_m(&kernel, &nodef(), 0.0).unwrap();
        let (op, oq) = block.apply(&pc, &qc);
        let out = helmholtz_recompose(&s, &hdensity_from_coeffs(&s, &op, &oq));
        let mmat = assemble_m_combined(&s, &asm.rule, &kernel, &nodef(), 0.0).unwrap();
        let j = helmholtz_recompose(&s, &h);
        let direct = unflatten_vec3(&mmat.apply(&flatten_vec3(&j.values)));
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..s.node_count() {
            let d = out.values[i] - direct[i];
            num += (d.x.norm_sqr() + d.y.norm_sqr() + d.z.norm_sqr()) * s.weights[i];
            den += (direct[i].x.norm_sqr() + direct[i].y.norm_sqr() + direct[i].z.norm_sqr())
                * s.weights[i];
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-6, "magnetic two-route mismatch {rel}");
    }

    #[test]
    fn m_block_smooths_by_one_order() {
        let s = grid(12);
        let asm = EmAssembly::new(&s);
        let kernel = HelmholtzKernel::real(1.0);
        let block = asm.assemble_m(&kernel, &nodef(), 0.0).unwrap();
        let m = asm.coeff_dim();
        let mut ratios = Vec::new();
        for deg in [2usize, 4, 8] {
            let mut p = vec![Complex64::default(); m];
            p[crate::sphharm::coeff_index(deg, 1) - 1] = Complex64::new(1.0, 0.0);
            let q = vec![Complex64::default(); m];
            let (op, oq) = block.apply(&p, &q);
            let h = hdensity_from_coeffs(&s, &op, &oq);
            let out = helmholtz_recompose(&s, &h);
            let input = helmholtz_recompose(&s, &hdensity_from_coeffs(&s, &p, &q));
            ratios.push(out.l2_norm(&s) / input.l2_norm(&s));
        }
        for w in ratios.windows(2) {
            assert!(w[1] / w[0] < 0.7, "smoothing ratios {ratios:?}");
        }
    }

    #[test]
    fn potentials_intertwine_under_curl() {
        let s = grid(10);
        let kernel = HelmholtzKernel::real(1.0);
        let h = test_density(&s);
        let probes = [
            Vector3::new(0.12, 0.1, 0.25),
            Vector3::new(-0.15, 0.2, 0.28),
            Vector3::new(1.3, -1.3, 1.1),
            Vector3::new(3.0, 2.0, 3.0),
        ];
        for x in &probes {
            let pe = |y: &Vector3<f64>| {
                psi_e(&s, &kernel, &h, &[*y], &nodef(), 0.0).unwrap()[0]
            };
            let pm = |y: &Vector3<f64>| {
                psi_m(&s, &kernel, &h, &[*y], &nodef(), 0.0).unwrap()[0]
            };
            let ce = fd_curl(&pe, x, 1e-3);
            let cm = fd_curl(&pm, x, 1e-3);
            let ve = pe(x);
            let vm = pm(x);
            let scale = ve.norm().max(vm.norm());
            assert!(
                (ce - vm * kernel.kappa).norm() < 1e-5 * scale,
                "curl E = kappa M fails at {x:?}: {:.3e}",
                (ce - vm * kernel.kappa).norm() / scale
            );
            assert!(
                (cm - ve * kernel.kappa).norm() < 1e-5 * scale,
                "curl M = kappa E fails at {x:?}: {:.3e}",
                (cm - ve * kernel.kappa).norm() / scale
            );
        }
        // zero density gives zero potentials
        let m = s.coeff_count() - 1;
        let hz = hdensity_from_coeffs(
            &s,
            &vec![Complex64::default(); m],
            &vec![Complex64::default(); m],
        );
        let z = psi_e(&s, &kernel, &hz, &[probes[3]], &nodef(), 0.0).unwrap();
        assert!(z[0].norm() < 1e-14);
    }

    #[test]
    fn potentials_satisfy_vector_helmholtz() {
        let s = grid(10);
        let kernel = HelmholtzKernel::real(1.0);
        let h = test_density(&s);
        let kappa2 = kernel.kappa * kernel.kappa;
        for x in [Vector3::new(0.1, 0.15, 0.2), Vector3::new(1.5, 1.5, 1.5)] {
            let pe = |y: &Vector3<f64>| {
                psi_e(&s, &kernel, &h, &[*y], &nodef(), 0.0).unwrap()[0]
            };
            // curl curl = kappa^2 on both potentials, via nested stencils
            let curl_pe = |y: &Vector3<f64>| fd_curl(&pe, y, 1e-3);
            let cc = fd_curl(&curl_pe, &x, 1e-3);
            let v = pe(&x);
            assert!(
                (cc - v * kappa2).norm() < 1e-4 * v.norm(),
                "curl curl residual {:.3e} at {x:?}",
                (cc - v * kappa2).norm() / v.norm()
            );
        }
    }

    #[test]
    fn farfield_properties() {
        let s = grid(10);
        let h = test_density(&s);
        let dirs = [
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.8, 0.0, 0.6),
            Vector3::new(-0.36, 0.48, 0.8),
        ];
        let kernel = HelmholtzKernel::real(1.0);
        let ffe = farfield_e(&s, &kernel, &h, &dirs, &nodef(), 0.0).unwrap();
        for (v, xh) in ffe.iter().zip(&dirs) {
            assert!(dot_rc(xh, v).norm() < 1e-14 * v.norm().max(1e-30));
        }
        // small kappa: linear scaling
        let k1 = HelmholtzKernel::real(1e-3);
        let k2 = HelmholtzKernel::real(5e-4);
        let f1 = farfield_e(&s, &k1, &h, &dirs, &nodef(), 0.0).unwrap();
        let f2 = farfield_e(&s, &k2, &h, &dirs, &nodef(), 0.0).unwrap();
        // halving kappa halves the field, up to the O(kappa) phase factor;
        // aggregated over directions to avoid polarization nulls
        let num: f64 = f1
            .iter()
            .zip(&f2)
            .map(|(a, b)| (b * Complex64::new(2.0, 0.0) - a).norm())
            .sum();
        let den: f64 = f1.iter().map(|a| a.norm()).sum();
        assert!(num < 5e-3 * den, "kappa scaling defect {num:.3e} vs {den:.3e}");
        // large-radius asymptotics of the electric potential: the radial
        // limit is taken by eliminating the 1/R correction from two radii
        let xh = dirs[1];
        let scaled = |radius: f64| -> Vector3<Complex64> {
            let x = radius * xh;
            let pe = psi_e(&s, &kernel, &h, &[x], &nodef(), 0.0).unwrap()[0];
            let phase = (Complex64::new(0.0, 1.0) * kernel.kappa * radius).exp()
                / (4.0 * std::f64::consts::PI * radius);
            pe / phase
        };
        let g1 = scaled(50.0);
        let g2 = scaled(100.0);
        let g4 = scaled(200.0);
        let limit = (g4 * Complex64::new(8.0, 0.0) - g2 * Complex64::new(6.0, 0.0) + g1)
            / Complex64::new(3.0, 0.0);
        let ff = farfield_e(&s, &kernel, &h, &[xh], &nodef(), 0.0).unwrap()[0];
        assert!(
            (limit - ff).norm() < 1e-3 * ff.norm(),
            "asymptotic mismatch {:.3e}",
            (limit - ff).norm() / ff.norm()
        );
        // translation phase law for the derivative
        let c = Vector3::new(0.23, -0.11, 0.31);
        let dff = d_farfield_e(
            &s,
            &kernel,
            &DeformationField::Constant { c },
            &h,
            &dirs,
        );
        for (k, xh) in dirs.iter().enumerate() {
            let law = ffe[k] * (Complex64::new(0.0, -1.0) * kernel.kappa * xh.dot(&c));
            assert!((dff[k] - law).norm() < 1e-10 * ffe[k].norm().max(1e-30));
        }
    }

    #[test]
    fn block_derivatives_match_finite_differences() {
        let s = grid(6);
        let asm = EmAssembly::new(&s);
        let kernel = HelmholtzKernel::real(1.0);
        let xi = bump();
        let kit = asm.derivative_kit(&kernel, &xi).unwrap();
        let h = {
            let m = s.coeff_count() - 1;
            let mut p = vec![Complex64::default(); m];
            let mut q = vec![Complex64::default(); m];
            p[crate::sphharm::coeff_index(2, 1) - 1] = Complex64::new(0.9, 0.2);
            q[crate::sphharm::coeff_index(1, 0) - 1] = Complex64::new(0.5, -0.1);
            hdensity_from_coeffs(&s, &p, &q)
        };
        let (pc, qc) = h_to_vecs(&s, &h);
        let cases: Vec<(&str, Box<dyn Fn(f64) -> Vec<Complex64>>, Vec<Complex64>)> = vec![
            (
                "c",
                Box::new(|t: f64| {
                    let b = asm.assemble_c(&kernel, &xi, t).unwrap();
                    let (p, q) = b.apply(&pc, &qc);
                    [p, q].concat()
                }),
                {
                    let d = asm.d_block_c(&kit).unwrap();
                    let (p, q) = d.apply(&pc, &qc);
                    [p, q].concat()
                },
            ),
            (
                "c0star",
                Box::new(|t: f64| {
                    let b = asm.assemble_c0star(&xi, t).unwrap();
                    let (p, q) = b.apply(&pc, &qc);
                    [p, q].concat()
                }),
                {
                    let kit0 = asm
                        .derivative_kit(&HelmholtzKernel::laplace(), &xi)
                        .unwrap();
                    let d = asm.d_block_c0star(&kit0).unwrap();
                    let (p, q) = d.apply(&pc, &qc);
                    [p, q].concat()
                },
            ),
            (
                "m",
                Box::new(|t: f64| {
                    let b = asm.assemble_m(&kernel, &xi, t).unwrap();
                    let (p, q) = b.apply(&pc, &qc);
                    [p, q].concat()
                }),
                {
                    let d = asm.d_block_m(&kit).unwrap();
                    let (p, q) = d.apply(&pc, &qc);
                    [p, q].concat()
                },
            ),
        ];
        for (name, f, analytic) in &cases {
            let (e1, _, order) =
                crate::geometry::observed_order_complex(|t| f(t), analytic, 1e-2, 1);
            assert!(
                (1.7..=2.3).contains(&order) || e1 < 1e-9,
                "{name}: order {order}, err {e1}"
            );
        }
    }

    #[test]
    fn block_derivatives_vanish_for_translations() {
        let s = grid(6);
        let asm = EmAssembly::new(&s);
        let kernel = HelmholtzKernel::real(1.0);
        let c = DeformationField::Constant {
            c: Vector3::new(0.4, -0.3, 0.6),
        };
        let kit = asm.derivative_kit(&kernel, &c).unwrap();
        let dc = asm.d_block_c(&kit).unwrap();
        assert!(dc.norm_max() < 1e-9, "dC norm {}", dc.norm_max());
        let dm = asm.d_block_m(&kit).unwrap();
        assert!(dm.norm_max() < 1e-9, "dM norm {}", dm.norm_max());
        let kit0 = asm.derivative_kit(&HelmholtzKernel::laplace(), &c).unwrap();
        let d0 = asm.d_block_c0star(&kit0).unwrap();
        assert!(d0.norm_max() < 1e-9, "dC0 norm {}", d0.norm_max());
    }

    #[test]
    fn potential_derivatives_match_finite_differences() {
        let s = grid(8);
        let kernel = HelmholtzKernel::real(1.0);
        let xi = bump();
        let h = test_density(&s);
        let targets = [Vector3::new(0.12, 0.1, 0.2), Vector3::new(1.4, -1.3, 1.0)];
        let de = d_psi_e(&s, &kernel, &xi, &h, &targets).unwrap();
        let fe = |t: f64| flatten_vec3(&psi_e(&s, &kernel, &h, &targets, &xi, t).unwrap());
        let (e1, _, order) =
            crate::geometry::observed_order_complex(fe, &flatten_vec3(&de), 1e-2, 1);
        assert!(
            (1.7..=2.3).contains(&order) || e1 < 1e-9,
            "psi_e order {order}, err {e1}"
        );
        let dm = d_psi_m(&s, &kernel, &xi, &h, &targets).unwrap();
        let fm = |t: f64| flatten_vec3(&psi_m(&s, &kernel, &h, &targets, &xi, t).unwrap());
        let (e1, _, order) =
            crate::geometry::observed_order_complex(fm, &flatten_vec3(&dm), 1e-2, 1);
        assert!(
            (1.7..=2.3).contains(&order) || e1 < 1e-9,
            "psi_m order {order}, err {e1}"
        );
        // far fields
        let dirs = [Vector3::new(0.6, -0.48, 0.64).normalize(), Vector3::new(0.0, 0.6, 0.8)];
        let dfe = d_farfield_e(&s, &kernel, &xi, &h, &dirs);
        let ffe = |t: f64| {
            flatten_vec3(&farfield_e(&s, &kernel, &h, &dirs, &xi, t).unwrap())
        };
        let (e1, _, order) =
            crate::geometry::observed_order_complex(ffe, &flatten_vec3(&dfe), 1e-2, 1);
        assert!(
            (1.7..=2.3).contains(&order) || e1 < 1e-9,
            "ff_e order {order}, err {e1}"
        );
        let dfm = d_farfield_m(&s, &kernel, &xi, &h, &dirs);
        let ffm = |t: f64| {
            flatten_vec3(&farfield_m(&s, &kernel, &h, &dirs, &xi, t).unwrap())
        };
        let (e1, _, order) =
            crate::geometry::observed_order_complex(ffm, &flatten_vec3(&dfm), 1e-2, 1);
        assert!(
            (1.7..=2.3).contains(&order) || e1 < 1e-9,
            "ff_m order {order}, err {e1}"
        );
    }

    #[test]
    fn config_validation() {
        let cfg = ScatteringConfig::default_desk();
        assert!(cfg.rho_consistent());
        assert!((cfg.rho - Complex64::new(1.5, 0.0)).norm() < 1e-14);
        assert!(ScatteringConfig::new(
            Complex64::new(1.0, -0.1),
            Complex64::new(1.0, 0.0),
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0
        )
        .is_err());
        assert!(ScatteringConfig::new(
            Complex64::new(2.0, 0.0),
            Complex64::new(1.0, 0.0),
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0
        )
        .is_err());
    }
}

/// Serialize a block operator as four matrix containers plus a manifest.
pub fn write_emblock(
    dir: &std::path::Path,
    name: &str,
    block: &EMBlockOperator,
    kappa: Complex64,
    t: f64,
    tag: &str,
) -> Result<(), Error> {
    use crate::operator::{DenseOperator, Space};
    std::fs::create_dir_all(dir)?;
    let m = block.dim();
    let blocks = [
        ("pp", &block.pp),
        ("pq", &block.pq),
        ("qp", &block.qp),
        ("qq", &block.qq),
    ];
    for (suffix, mat) in blocks {
        let op = DenseOperator::new(
            format!("{name}.{suffix}"),
            Space::Coeffs(m),
            Space::Coeffs(m),
            mat.clone(),
        );
        crate::kernels::write_operator_binary(
            &dir.join(format!("{name}_{suffix}.emsop")),
            &op,
            kappa,
            t,
            tag,
        )?;
    }
    let manifest = serde_json::json!({
        "name": name,
        "blocks": ["pp", "pq", "qp", "qq"],
        "dim": m,
        "kappa": [kappa.re, kappa.im],
        "scale": t,
        "tag": tag,
    });
    std::fs::write(
        dir.join(format!("{name}_manifest.json")),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )?;
    Ok(())
}

/// Read back a serialized block operator.
pub fn read_emblock(dir: &std::path::Path, name: &str) -> Result<EMBlockOperator, Error> {
    let read = |suffix: &str| -> Result<DMatrix<Complex64>, Error> {
        let (m, _, _, _) =
            crate::kernels::read_operator_binary(&dir.join(format!("{name}_{suffix}.emsop")))?;
        Ok(m)
    };
    Ok(EMBlockOperator {
        pp: read("pp")?,
        pq: read("pq")?,
        qp: read("qp")?,
        qq: read("qq")?,
    })
}

#[cfg(test)]
mod export_tests {
    use super::*;

    #[test]
    fn emblock_container_roundtrip() {
        let m = 3;
        let mut block = EMBlockOperator::identity(m);
        block.pq[(0, 2)] = Complex64::new(0.25, -1.5);
        block.qp[(2, 1)] = Complex64::new(-0.75, 0.1);
        let dir = std::env::temp_dir().join("emshape_emblock_roundtrip");
        write_emblock(&dir, "c", &block, Complex64::new(1.0, 0.0), 0.05, "bump").unwrap();
        let back = read_emblock(&dir, "c").unwrap();
        assert_eq!(back.pp, block.pp);
        assert_eq!(back.pq, block.pq);
        assert_eq!(back.qp, block.qp);
        assert_eq!(back.qq, block.qq);
        let manifest = std::fs::read_to_string(dir.join("c_manifest.json")).unwrap();
        assert!(manifest.contains("\"dim\": 3"));
        let _ = std::fs::remove_dir_all(dir);
    }
}

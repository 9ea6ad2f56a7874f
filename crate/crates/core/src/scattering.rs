//! Dielectric transmission solve by a single boundary integral equation,
//! field and far-field evaluation, the directional derivative of the
//! solution under obstacle deformation, and the boundary-value
//! characterization of that derivative.

use crate::emfield::{
    d_farfield_e, d_farfield_m, farfield_e, farfield_m, hcoeffs, EMBlockOperator, EmAssembly,
    ScatteringConfig,
};
use crate::error::Error;
use crate::geometry::{DeformationField, ReferenceSurface};
use crate::kernels::HelmholtzKernel;
use crate::nearfield::NearFieldRule;
use crate::operator::{cross_c, cvec, dot_rc};
use crate::sphharm;
use crate::surfops::{
    curls_gamma, curlvec_gamma, d_div_gamma, d_weighted_curls, d_weighted_laplace, div_gamma,
    grad_gamma, HDensity, ScalarField, TangentField, Transport, WeightedLapSolver,
};
use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;

/// Plane-wave incident field with analytic curl and space Jacobian.
#[derive(Clone, Debug)]
pub struct IncidentField {
    pub direction: Vector3<f64>,
    pub polarization: Vector3<f64>,
}

impl IncidentField {
    pub fn new(direction: Vector3<f64>, polarization: Vector3<f64>) -> Result<Self, Error> {
        let d = direction.normalize();
        if polarization.dot(&d).abs() > 1e-12 * polarization.norm() {
            return Err(Error::Usage(
                "polarization must be orthogonal to the propagation direction".into(),
            ));
        }
        Ok(Self {
            direction: d,
            polarization,
        })
    }

    pub fn default_desk() -> Self {
        Self::new(Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0)).unwrap()
    }

    pub fn eval(&self, kappa: Complex64, x: &Vector3<f64>) -> Vector3<Complex64> {
        let phase = (Complex64::new(0.0, 1.0) * kappa * self.direction.dot(x)).exp();
        cvec(&self.polarization) * phase
    }

    pub fn curl(&self, kappa: Complex64, x: &Vector3<f64>) -> Vector3<Complex64> {
        let phase = (Complex64::new(0.0, 1.0) * kappa * self.direction.dot(x)).exp();
        cvec(&self.direction.cross(&self.polarization)) * (Complex64::new(0.0, 1.0) * kappa * phase)
    }

    /// (w . grad) E at x.
    pub fn directional(
        &self,
        kappa: Complex64,
        x: &Vector3<f64>,
        w: &Vector3<f64>,
    ) -> Vector3<Complex64> {
        self.eval(kappa, x) * (Complex64::new(0.0, 1.0) * kappa * self.direction.dot(w))
    }

    /// (w . grad) curl E at x.
    pub fn directional_curl(
        &self,
        kappa: Complex64,
        x: &Vector3<f64>,
        w: &Vector3<f64>,
    ) -> Vector3<Complex64> {
        self.curl(kappa, x) * (Complex64::new(0.0, 1.0) * kappa * self.direction.dot(w))
    }
}

/// Scaling factor turning the curl of an electric field into the
/// corresponding magnetic field at angular frequency omega.
pub fn magnetic_scaling(omega: f64, mu: f64) -> Complex64 {
    Complex64::ONE / Complex64::new(0.0, omega * mu)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    Dirichlet,
    Neumann,
}

/// Tangential trace of the incident field on the deformed surface, pulled
/// into mean-zero Helmholtz coordinates.
pub fn trace_incident(
    surface: &ReferenceSurface,
    inc: &IncidentField,
    kappa_e: Complex64,
    r: &DeformationField,
    t: f64,
    which: TraceKind,
) -> Result<HDensity, Error> {
    if kappa_e.norm() == 0.0 {
        return Err(Error::Usage("traces need a positive exterior wavenumber".into()));
    }
    let tr = Transport::new(surface, r, t)?;
    let solver = WeightedLapSolver::new(surface, &tr);
    let n = surface.node_count();
    let v: Vec<Vector3<Complex64>> = (0..n)
        .map(|i| {
            let x = surface.nodes[i] + t * r.eval(&surface.nodes[i]);
            let nu = cvec(&tr.geom.normal[i]);
            match which {
                TraceKind::Dirichlet => cross_c(&nu, &inc.eval(kappa_e, &x)),
                TraceKind::Neumann => cross_c(&nu, &inc.curl(kappa_e, &x)) / kappa_e,
            }
        })
        .collect();
    let jw: Vec<Complex64> = tr
        .div(&v)
        .values()
        .iter()
        .zip(&tr.geom.jacobian)
        .map(|(a, j)| a * *j)
        .collect();
    let p = ScalarField::from_values(solver.solve(&jw)?);
    let cw: Vec<Complex64> = tr
        .curls(&v)
        .values()
        .iter()
        .zip(&tr.geom.jacobian)
        .map(|(a, j)| a * *j)
        .collect();
    let q = ScalarField::from_values(solver.solve(&cw)?.iter().map(|z| -z).collect());
    Ok(HDensity { p, q })
}

/// Analytic derivative of the incident-trace coordinates at r = 0.
pub fn d_trace_incident(
    surface: &ReferenceSurface,
    inc: &IncidentField,
    kappa_e: Complex64,
    xi: &DeformationField,
    which: TraceKind,
) -> Result<(Vec<Complex64>, Vec<Complex64>), Error> {
    let n = surface.node_count();
    let dn = crate::geometry::d_normal(surface, xi);
    let divxi = crate::geometry::d_jacobian(surface, xi);
    let mut v0 = Vec::with_capacity(n);
    let mut dv = Vec::with_capacity(n);
    for i in 0..n {
        let x = surface.nodes[i];
        let nu = cvec(&surface.frames[i].2);
        let w = xi.eval(&x);
        match which {
            TraceKind::Dirichlet => {
                v0.push(cross_c(&nu, &inc.eval(kappa_e, &x)));
                dv.push(
                    cross_c(&cvec(&dn[i]), &inc.eval(kappa_e, &x))
                        + cross_c(&nu, &inc.directional(kappa_e, &x, &w)),
                );
            }
            TraceKind::Neumann => {
                v0.push(cross_c(&nu, &inc.curl(kappa_e, &x)) / kappa_e);
                dv.push(
                    (cross_c(&cvec(&dn[i]), &inc.curl(kappa_e, &x))
                        + cross_c(&nu, &inc.directional_curl(kappa_e, &x, &w)))
                        / kappa_e,
                );
            }
        }
    }
    let solver = WeightedLapSolver::reference(surface);
    let v0f = TangentField::new(v0.clone());
    // p branch
    let g0 = div_gamma(surface, &v0);
    let p0 = ScalarField::from_values(solver.solve(g0.values())?);
    let daw_p = d_weighted_laplace(surface, xi, &p0);
    let ddiv = d_div_gamma(surface, xi, &v0f);
    let div_dv = div_gamma(surface, &dv);
    let rhs_p: Vec<Complex64> = (0..n)
        .map(|i| {
            divxi[i] * g0.values()[i] + ddiv.values()[i] + div_dv.values()[i]
                - daw_p.values()[i]
        })
        .collect();
    let dp = ScalarField::from_values(solver.solve(&rhs_p)?);
    // q branch (note the overall minus)
    let h0 = curls_gamma(surface, &v0);
    let q0 = ScalarField::from_values(solver.solve(h0.values())?);
    let daw_q = d_weighted_laplace(surface, xi, &q0);
    let dwc = d_weighted_curls(surface, xi, &v0f);
    let curls_dv = curls_gamma(surface, &dv);
    let rhs_q: Vec<Complex64> = (0..n)
        .map(|i| dwc.values()[i] + curls_dv.values()[i] - daw_q.values()[i])
        .collect();
    let dq_raw = solver.solve(&rhs_q)?;
    let dq = ScalarField::from_values(dq_raw.iter().map(|z| -z).collect());
    Ok((hcoeffs(surface, &dp), hcoeffs(surface, &dq)))
}

/// Every block operator entering the boundary equation at one scale.
pub struct OperatorStack {
    pub c_e: EMBlockOperator,
    pub c_i: EMBlockOperator,
    pub m_e: EMBlockOperator,
    pub m_i: EMBlockOperator,
    pub c0: EMBlockOperator,
    pub l_e: EMBlockOperator,
    pub n_e: EMBlockOperator,
    pub s: EMBlockOperator,
}

/// Assemble the combined single-equation operator and its factors.
pub fn assemble_stack(
    asm: &EmAssembly,
    cfg: &ScatteringConfig,
    r: &DeformationField,
    t: f64,
) -> Result<OperatorStack, Error> {
    let ke = HelmholtzKernel::new(cfg.kappa_e)?;
    let ki = HelmholtzKernel::new(cfg.kappa_i)?;
    let c_e = asm.assemble_c(&ke, r, t)?;
    let c_i = asm.assemble_c(&ki, r, t)?;
    let m_e = asm.assemble_m(&ke, r, t)?;
    let m_i = asm.assemble_m(&ki, r, t)?;
    let c0 = asm.assemble_c0star(r, t)?;
    let stack = compose_stack(cfg, c_e, c_i, m_e, m_i, c0);
    Ok(stack)
}

/// Combine assembled blocks into L_e, N_e and the boundary operator.
pub fn compose_stack(
    cfg: &ScatteringConfig,
    c_e: EMBlockOperator,
    c_i: EMBlockOperator,
    m_e: EMBlockOperator,
    m_i: EMBlockOperator,
    c0: EMBlockOperator,
) -> OperatorStack {
    let m = c_e.dim();
    let id = EMBlockOperator::identity(m);
    let ieta = Complex64::new(0.0, cfg.eta);
    let half = Complex64::new(0.5, 0.0);
    // L = C_e - i eta (I/2 - M_e) C0: the exterior Dirichlet trace of the
    // ansatz field
    let half_minus_me = id.scale(half).add(&m_e.scale(-Complex64::ONE));
    let l_e = c_e.add(&half_minus_me.compose(&c0).scale(-ieta));
    // N = (M_e - I/2) + i eta C_e C0: the exterior Neumann trace of the
    // ansatz field; the sign of the identity part is pinned by the
    // transmission-residual probe
    let n_e = half_minus_me
        .scale(-Complex64::ONE)
        .add(&c_e.compose(&c0).scale(ieta));
    // S = rho (M_i - I/2) L + C_i N
    let mi_half = m_i.add(&id.scale(-half));
    let s = mi_half.compose(&l_e).scale(cfg.rho).add(&c_i.compose(&n_e));
    OperatorStack {
        c_e,
        c_i,
        m_e,
        m_i,
        c0,
        l_e,
        n_e,
        s,
    }
}

/// Right-hand side of the boundary equation from the incident traces.
pub fn rhs_from_traces(
    cfg: &ScatteringConfig,
    stack: &OperatorStack,
    gd: (&[Complex64], &[Complex64]),
    gn: (&[Complex64], &[Complex64]),
) -> (Vec<Complex64>, Vec<Complex64>) {
    let m = stack.s.dim();
    let id = EMBlockOperator::identity(m);
    let mi_half = stack.m_i.add(&id.scale(-Complex64::new(0.5, 0.0)));
    let (ap, aq) = mi_half.apply(gd.0, gd.1);
    let (bp, bq) = stack.c_i.apply(gn.0, gn.1);
    let p = (0..m).map(|k| -cfg.rho * ap[k] - bp[k]).collect();
    let q = (0..m).map(|k| -cfg.rho * aq[k] - bq[k]).collect();
    (p, q)
}

/// Condition estimate of the stacked system by forward and inverse power
/// iterations (deterministic start vector).
pub fn condition_estimate(s: &DMatrix<Complex64>) -> Result<f64, Error> {
    let n = s.nrows();
    let lu = s.clone().lu();
    let adj = s.adjoint();
    let lu_adj = adj.clone().lu();
    let normalize = |v: &mut DVector<Complex64>| {
        let n2 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        *v /= Complex64::new(n2, 0.0);
        n2
    };
    let mut v = DVector::from_element(n, Complex64::new(1.0, 0.0));
    normalize(&mut v);
    let mut sigma_max = 0.0;
    for _ in 0..25 {
        let mut w = &adj * (s * &v);
        sigma_max = normalize(&mut w).sqrt();
        v = w;
    }
    let mut u = DVector::from_element(n, Complex64::new(1.0, 0.0));
    normalize(&mut u);
    let mut inv_growth = 0.0;
    for _ in 0..25 {
        let w1 = lu
            .solve(&u)
            .ok_or_else(|| Error::Solver("singular boundary operator".into()))?;
        let mut w2 = lu_adj
            .solve(&w1)
            .ok_or_else(|| Error::Solver("singular adjoint solve".into()))?;
        inv_growth = normalize(&mut w2).sqrt();
        u = w2;
    }
    Ok(sigma_max * inv_growth)
}

/// Solved density and every derived density needed for field evaluation.
pub struct SolutionBundle {
    pub j: HDensity,
    /// regularized density C0* j driving the magnetic part of the ansatz
    pub c0j: HDensity,
    /// interior electric density: Neumann trace total
    pub dens_e: HDensity,
    /// interior magnetic density: Dirichlet trace total
    pub dens_m: HDensity,
    pub gd: (Vec<Complex64>, Vec<Complex64>),
    pub gn: (Vec<Complex64>, Vec<Complex64>),
    pub condition: f64,
}

pub const CONDITION_LIMIT: f64 = 1e8;

/// Solve the transmission problem on the deformed surface.
pub fn solve(
    asm: &EmAssembly,
    cfg: &ScatteringConfig,
    inc: &IncidentField,
    r: &DeformationField,
    t: f64,
) -> Result<SolutionBundle, Error> {
    let stack = assemble_stack(asm, cfg, r, t)?;
    solve_with_stack(asm, cfg, inc, r, t, &stack)
}

pub fn solve_with_stack(
    asm: &EmAssembly,
    cfg: &ScatteringConfig,
    inc: &IncidentField,
    r: &DeformationField,
    t: f64,
    stack: &OperatorStack,
) -> Result<SolutionBundle, Error> {
    let s = asm.surface;
    let gd_h = trace_incident(s, inc, cfg.kappa_e, r, t, TraceKind::Dirichlet)?;
    let gn_h = trace_incident(s, inc, cfg.kappa_e, r, t, TraceKind::Neumann)?;
    let gd = (hcoeffs(s, &gd_h.p), hcoeffs(s, &gd_h.q));
    let gn = (hcoeffs(s, &gn_h.p), hcoeffs(s, &gn_h.q));
    let (bp, bq) = rhs_from_traces(cfg, stack, (&gd.0, &gd.1), (&gn.0, &gn.1));
    let sm = stack.s.stacked();
    let condition = condition_estimate(&sm)?;
    if condition > CONDITION_LIMIT {
        return Err(Error::Solver(format!(
            "boundary operator condition estimate {condition:.3e} exceeds {CONDITION_LIMIT:.0e}"
        )));
    }
    let m = stack.s.dim();
    let rhs = DVector::from_iterator(2 * m, bp.iter().chain(bq.iter()).copied());
    let sol = sm
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("dense solve failed".into()))?;
    let jp: Vec<Complex64> = sol.as_slice()[..m].to_vec();
    let jq: Vec<Complex64> = sol.as_slice()[m..].to_vec();
    let (cp, cq) = stack.c0.apply(&jp, &jq);
    let (lp, lq) = stack.l_e.apply(&jp, &jq);
    let (np, nq) = stack.n_e.apply(&jp, &jq);
    let dens_e = crate::emfield::hdensity_from_coeffs(
        s,
        &gn.0.iter().zip(&np).map(|(a, b)| a + b).collect::<Vec<_>>(),
        &gn.1.iter().zip(&nq).map(|(a, b)| a + b).collect::<Vec<_>>(),
    );
    let dens_m = crate::emfield::hdensity_from_coeffs(
        s,
        &gd.0.iter().zip(&lp).map(|(a, b)| a + b).collect::<Vec<_>>(),
        &gd.1.iter().zip(&lq).map(|(a, b)| a + b).collect::<Vec<_>>(),
    );
    Ok(SolutionBundle {
        j: crate::emfield::hdensity_from_coeffs(s, &jp, &jq),
        c0j: crate::emfield::hdensity_from_coeffs(s, &cp, &cq),
        dens_e,
        dens_m,
        gd,
        gn,
        condition,
    })
}

// ---------------------------------------------------------------------------
// Field evaluation
// ---------------------------------------------------------------------------

/// Near-field-capable evaluator of the solution fields.
pub struct FieldEvaluator<'a> {
    pub surface: &'a ReferenceSurface,
    pub cfg: ScatteringConfig,
    pub nf: NearFieldRule,
}

/// Component coefficient triples plus the transported Laplacian
/// coefficients of a density, ready for near-field synthesis.
struct DensityCoeffs {
    comps: [Vec<Complex64>; 3],
    lap_p: Vec<Complex64>,
}

impl<'a> FieldEvaluator<'a> {
    pub fn new(surface: &'a ReferenceSurface, cfg: &ScatteringConfig) -> Self {
        Self {
            surface,
            cfg: cfg.clone(),
            nf: NearFieldRule::default_for(surface.band_limit),
        }
    }

    fn density_coeffs(
        &self,
        h: &HDensity,
        r: &DeformationField,
        t: f64,
    ) -> Result<DensityCoeffs, Error> {
        let s = self.surface;
        let tr = Transport::new(s, r, t)?;
        let g = tr.grad(&h.p);
        let c = tr.curlvec(&h.q);
        let j: Vec<Vector3<Complex64>> = g.iter().zip(&c).map(|(a, b)| a + b).collect();
        let lap = tr.div(&g);
        let comp = |sel: fn(&Vector3<Complex64>) -> Complex64| {
            s.analyze(&j.iter().map(sel).collect::<Vec<_>>())
        };
        Ok(DensityCoeffs {
            comps: [comp(|v| v.x), comp(|v| v.y), comp(|v| v.z)],
            lap_p: s.analyze(lap.values()),
        })
    }

    /// Electric potential of a density on the deformed surface.
    fn psi_e_nf(
        &self,
        kappa: Complex64,
        dc: &DensityCoeffs,
        targets: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let kernel = HelmholtzKernel::new(kappa)?;
        let a = self.nf.psi_vec(&kernel, &dc.comps, targets, r, t)?;
        let b = self.nf.psi_grad(&kernel, &dc.lap_p, targets, r, t)?;
        Ok(a.iter()
            .zip(&b)
            .map(|(x, y)| x * kappa + y / kappa)
            .collect())
    }

    fn psi_m_nf(
        &self,
        kappa: Complex64,
        dc: &DensityCoeffs,
        targets: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let kernel = HelmholtzKernel::new(kappa)?;
        self.nf.psi_curl(&kernel, &dc.comps, targets, r, t)
    }

    /// Scattered electric field of the ansatz at arbitrary exterior points.
    pub fn e_scattered(
        &self,
        sol: &SolutionBundle,
        targets: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let dj = self.density_coeffs(&sol.j, r, t)?;
        let dc = self.density_coeffs(&sol.c0j, r, t)?;
        let a = self.psi_e_nf(self.cfg.kappa_e, &dj, targets, r, t)?;
        let b = self.psi_m_nf(self.cfg.kappa_e, &dc, targets, r, t)?;
        let ieta = Complex64::new(0.0, self.cfg.eta);
        Ok(a.iter().zip(&b).map(|(x, y)| -x - y * ieta).collect())
    }

    /// curl of the scattered field (analytic through the potentials).
    pub fn curl_e_scattered(
        &self,
        sol: &SolutionBundle,
        targets: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let dj = self.density_coeffs(&sol.j, r, t)?;
        let dc = self.density_coeffs(&sol.c0j, r, t)?;
        let a = self.psi_m_nf(self.cfg.kappa_e, &dj, targets, r, t)?;
        let b = self.psi_e_nf(self.cfg.kappa_e, &dc, targets, r, t)?;
        let ieta = Complex64::new(0.0, self.cfg.eta);
        let k = self.cfg.kappa_e;
        Ok(a.iter()
            .zip(&b)
            .map(|(x, y)| (-x - y * ieta) * k)
            .collect())
    }

    /// Interior electric field from the transmitted representation.
    pub fn e_interior(
        &self,
        sol: &SolutionBundle,
        targets: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let de = self.density_coeffs(&sol.dens_e, r, t)?;
        let dm = self.density_coeffs(&sol.dens_m, r, t)?;
        let a = self.psi_e_nf(self.cfg.kappa_i, &de, targets, r, t)?;
        let b = self.psi_m_nf(self.cfg.kappa_i, &dm, targets, r, t)?;
        let inv_rho = Complex64::ONE / self.cfg.rho;
        Ok(a.iter().zip(&b).map(|(x, y)| -x * inv_rho - y).collect())
    }

    pub fn curl_e_interior(
        &self,
        sol: &SolutionBundle,
        targets: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let de = self.density_coeffs(&sol.dens_e, r, t)?;
        let dm = self.density_coeffs(&sol.dens_m, r, t)?;
        let a = self.psi_m_nf(self.cfg.kappa_i, &de, targets, r, t)?;
        let b = self.psi_e_nf(self.cfg.kappa_i, &dm, targets, r, t)?;
        let inv_rho = Complex64::ONE / self.cfg.rho;
        let k = self.cfg.kappa_i;
        Ok(a.iter()
            .zip(&b)
            .map(|(x, y)| (-x * inv_rho - y) * k)
            .collect())
    }

    /// Far-field pattern of the scattered field.
    pub fn farfield(
        &self,
        sol: &SolutionBundle,
        directions: &[Vector3<f64>],
        r: &DeformationField,
        t: f64,
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let kernel = HelmholtzKernel::new(self.cfg.kappa_e)?;
        let a = farfield_e(self.surface, &kernel, &sol.j, directions, r, t)?;
        let b = farfield_m(self.surface, &kernel, &sol.c0j, directions, r, t)?;
        let ieta = Complex64::new(0.0, self.cfg.eta);
        Ok(a.iter().zip(&b).map(|(x, y)| -x - y * ieta).collect())
    }
}

// ---------------------------------------------------------------------------
// Derivative of the solution
// ---------------------------------------------------------------------------

/// Derivative data of the solve at r = 0 in one direction: density
/// derivatives plus the direction field itself for kernel-level terms.
pub struct SolutionDerivative {
    pub xi: DeformationField,
    pub dj: HDensity,
    pub dc0j: HDensity,
    pub d_dens_e: HDensity,
    pub d_dens_m: HDensity,
}

/// Assemble the derivative of the solve at the reference configuration by
/// the product rule across the boundary equation, its right-hand side and
/// the representation densities.
pub fn d_solution(
    asm: &EmAssembly,
    cfg: &ScatteringConfig,
    inc: &IncidentField,
    xi: &DeformationField,
    stack: &OperatorStack,
    sol: &SolutionBundle,
) -> Result<SolutionDerivative, Error> {
    let s = asm.surface;
    let m = stack.s.dim();
    let ke = HelmholtzKernel::new(cfg.kappa_e)?;
    let ki = HelmholtzKernel::new(cfg.kappa_i)?;
    let kit_e = asm.derivative_kit(&ke, xi)?;
    let kit_i = asm.derivative_kit(&ki, xi)?;
    let kit_0 = asm.derivative_kit(&HelmholtzKernel::laplace(), xi)?;
    let dc_e = asm.d_block_c(&kit_e)?;
    let dc_i = asm.d_block_c(&kit_i)?;
    let dm_e = asm.d_block_m(&kit_e)?;
    let dm_i = asm.d_block_m(&kit_i)?;
    let dc0 = asm.d_block_c0star(&kit_0)?;
    let id = EMBlockOperator::identity(m);
    let ieta = Complex64::new(0.0, cfg.eta);
    let half = Complex64::new(0.5, 0.0);
    let half_minus_me = id.scale(half).add(&stack.m_e.scale(-Complex64::ONE));
    // dL = dC_e + i eta dM_e C0 - i eta (I/2 - M_e) dC0
    let dl_e = dc_e
        .add(&dm_e.compose(&stack.c0).scale(ieta))
        .add(&half_minus_me.compose(&dc0).scale(-ieta));
    // dN = dM_e + i eta (dC_e C0 + C_e dC0)
    let dn_e = dm_e.add(
        &dc_e
            .compose(&stack.c0)
            .add(&stack.c_e.compose(&dc0))
            .scale(ieta),
    );
    // dS = rho [ dM_i L + (M_i - I/2) dL ] + dC_i N + C_i dN
    let mi_half = stack.m_i.add(&id.scale(-half));
    let ds = dm_i
        .compose(&stack.l_e)
        .add(&mi_half.compose(&dl_e))
        .scale(cfg.rho)
        .add(&dc_i.compose(&stack.n_e))
        .add(&stack.c_i.compose(&dn_e));
    // derivative of the right-hand side
    let (dgd_p, dgd_q) = d_trace_incident(s, inc, cfg.kappa_e, xi, TraceKind::Dirichlet)?;
    let (dgn_p, dgn_q) = d_trace_incident(s, inc, cfg.kappa_e, xi, TraceKind::Neumann)?;
    let (a1p, a1q) = dm_i.apply(&sol.gd.0, &sol.gd.1);
    let (a2p, a2q) = mi_half.apply(&dgd_p, &dgd_q);
    let (b1p, b1q) = dc_i.apply(&sol.gn.0, &sol.gn.1);
    let (b2p, b2q) = stack.c_i.apply(&dgn_p, &dgn_q);
    let db_p: Vec<Complex64> = (0..m)
        .map(|k| -cfg.rho * (a1p[k] + a2p[k]) - (b1p[k] + b2p[k]))
        .collect();
    let db_q: Vec<Complex64> = (0..m)
        .map(|k| -cfg.rho * (a1q[k] + a2q[k]) - (b1q[k] + b2q[k]))
        .collect();
    // dj = S^{-1} (db - dS j)
    let jp = hcoeffs(s, &sol.j.p);
    let jq = hcoeffs(s, &sol.j.q);
    let (dsp, dsq) = ds.apply(&jp, &jq);
    let rhs = DVector::from_iterator(
        2 * m,
        (0..m)
            .map(|k| db_p[k] - dsp[k])
            .chain((0..m).map(|k| db_q[k] - dsq[k])),
    );
    let dj_vec = stack
        .s
        .stacked()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("derivative solve failed".into()))?;
    let djp: Vec<Complex64> = dj_vec.as_slice()[..m].to_vec();
    let djq: Vec<Complex64> = dj_vec.as_slice()[m..].to_vec();
    // dc0j = dC0 j + C0 dj
    let (x1p, x1q) = dc0.apply(&jp, &jq);
    let (x2p, x2q) = stack.c0.apply(&djp, &djq);
    let dc0p: Vec<Complex64> = (0..m).map(|k| x1p[k] + x2p[k]).collect();
    let dc0q: Vec<Complex64> = (0..m).map(|k| x1q[k] + x2q[k]).collect();
    // d(dens_e) = dgn + dN j + N dj
    let (y1p, y1q) = dn_e.apply(&jp, &jq);
    let (y2p, y2q) = stack.n_e.apply(&djp, &djq);
    let dde_p: Vec<Complex64> = (0..m).map(|k| dgn_p[k] + y1p[k] + y2p[k]).collect();
    let dde_q: Vec<Complex64> = (0..m).map(|k| dgn_q[k] + y1q[k] + y2q[k]).collect();
    // d(dens_m) = dgd + dL j + L dj
    let (z1p, z1q) = dl_e.apply(&jp, &jq);
    let (z2p, z2q) = stack.l_e.apply(&djp, &djq);
    let ddm_p: Vec<Complex64> = (0..m).map(|k| dgd_p[k] + z1p[k] + z2p[k]).collect();
    let ddm_q: Vec<Complex64> = (0..m).map(|k| dgd_q[k] + z1q[k] + z2q[k]).collect();
    Ok(SolutionDerivative {
        xi: xi.clone(),
        dj: crate::emfield::hdensity_from_coeffs(s, &djp, &djq),
        dc0j: crate::emfield::hdensity_from_coeffs(s, &dc0p, &dc0q),
        d_dens_e: crate::emfield::hdensity_from_coeffs(s, &dde_p, &dde_q),
        d_dens_m: crate::emfield::hdensity_from_coeffs(s, &ddm_p, &ddm_q),
    })
}

impl<'a> FieldEvaluator<'a> {
    /// Data and moving-kernel pieces of one potential derivative term:
    /// d[Psi(r) h(r)] = dPsi[xi](h0) + Psi(dh).
    fn d_density_coeffs(
        &self,
        h: &HDensity,
        dh: &HDensity,
        xi: &DeformationField,
    ) -> Result<(DensityCoeffs, DensityCoeffs), Error> {
        let s = self.surface;
        let none = DeformationField::Constant {
            c: Vector3::zeros(),
        };
        let base = self.density_coeffs(h, &none, 0.0)?;
        // data derivative: d(grad p + curl q) plus the derivative of the
        // transported Laplacian applied to p
        let dg = crate::surfops::d_grad_gamma(s, xi, &h.p);
        let dcv = crate::surfops::d_curlvec_gamma(s, xi, &h.q);
        let gdp = grad_gamma(s, &dh.p);
        let cdq = curlvec_gamma(s, &dh.q);
        let n = s.node_count();
        let dj: Vec<Vector3<Complex64>> = (0..n)
            .map(|i| dg[i] + dcv[i] + gdp.values[i] + cdq.values[i])
            .collect();
        let dlap = {
            let gp = grad_gamma(s, &h.p);
            let t1 = d_div_gamma(s, xi, &gp);
            let t2 = div_gamma(s, &crate::surfops::d_grad_gamma(s, xi, &h.p));
            let t3 = crate::surfops::laplace_beltrami(s, &dh.p);
            ScalarField::from_values(
                (0..n)
                    .map(|i| t1.values()[i] + t2.values()[i] + t3.values()[i])
                    .collect(),
            )
        };
        let comp = |sel: fn(&Vector3<Complex64>) -> Complex64| {
            s.analyze(&dj.iter().map(sel).collect::<Vec<_>>())
        };
        let ddata = DensityCoeffs {
            comps: [comp(|v| v.x), comp(|v| v.y), comp(|v| v.z)],
            lap_p: s.analyze(dlap.values()),
        };
        Ok((base, ddata))
    }

    /// d[Psi_E(r) applied to a density family] at r = 0.
    fn d_psi_e_nf(
        &self,
        kappa: Complex64,
        base: &DensityCoeffs,
        ddata: &DensityCoeffs,
        xi: &DeformationField,
        targets: &[Vector3<f64>],
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let kernel = HelmholtzKernel::new(kappa)?;
        let none = DeformationField::Constant {
            c: Vector3::zeros(),
        };
        let moving_j = self.nf.d_psi_vec_moving(&kernel, xi, &base.comps, targets);
        let data_j = self.nf.psi_vec(&kernel, &ddata.comps, targets, &none, 0.0)?;
        let moving_g = self.nf.d_psi_grad_moving(&kernel, xi, &base.lap_p, targets);
        let data_g = self.nf.psi_grad(&kernel, &ddata.lap_p, targets, &none, 0.0)?;
        Ok((0..targets.len())
            .map(|k| {
                (moving_j[k] + data_j[k]) * kappa + (moving_g[k] + data_g[k]) / kappa
            })
            .collect())
    }

    fn d_psi_m_nf(
        &self,
        kappa: Complex64,
        base: &DensityCoeffs,
        ddata: &DensityCoeffs,
        xi: &DeformationField,
        targets: &[Vector3<f64>],
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let kernel = HelmholtzKernel::new(kappa)?;
        let none = DeformationField::Constant {
            c: Vector3::zeros(),
        };
        let moving = self.nf.d_psi_curl_moving(&kernel, xi, &base.comps, targets);
        let data = self.nf.psi_curl(&kernel, &ddata.comps, targets, &none, 0.0)?;
        Ok((0..targets.len()).map(|k| moving[k] + data[k]).collect())
    }

    /// Derivative of the scattered field at separated-or-near targets.
    pub fn d_e_scattered(
        &self,
        sol: &SolutionBundle,
        dsol: &SolutionDerivative,
        targets: &[Vector3<f64>],
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let (bj, dj) = self.d_density_coeffs(&sol.j, &dsol.dj, &dsol.xi)?;
        let (bc, dc) = self.d_density_coeffs(&sol.c0j, &dsol.dc0j, &dsol.xi)?;
        let a = self.d_psi_e_nf(self.cfg.kappa_e, &bj, &dj, &dsol.xi, targets)?;
        let b = self.d_psi_m_nf(self.cfg.kappa_e, &bc, &dc, &dsol.xi, targets)?;
        let ieta = Complex64::new(0.0, self.cfg.eta);
        Ok(a.iter().zip(&b).map(|(x, y)| -x - y * ieta).collect())
    }

    pub fn d_curl_e_scattered(
        &self,
        sol: &SolutionBundle,
        dsol: &SolutionDerivative,
        targets: &[Vector3<f64>],
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let (bj, dj) = self.d_density_coeffs(&sol.j, &dsol.dj, &dsol.xi)?;
        let (bc, dc) = self.d_density_coeffs(&sol.c0j, &dsol.dc0j, &dsol.xi)?;
        let a = self.d_psi_m_nf(self.cfg.kappa_e, &bj, &dj, &dsol.xi, targets)?;
        let b = self.d_psi_e_nf(self.cfg.kappa_e, &bc, &dc, &dsol.xi, targets)?;
        let ieta = Complex64::new(0.0, self.cfg.eta);
        let k = self.cfg.kappa_e;
        Ok(a.iter()
            .zip(&b)
            .map(|(x, y)| (-x - y * ieta) * k)
            .collect())
    }

    pub fn d_e_interior(
        &self,
        sol: &SolutionBundle,
        dsol: &SolutionDerivative,
        targets: &[Vector3<f64>],
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let (be, de) = self.d_density_coeffs(&sol.dens_e, &dsol.d_dens_e, &dsol.xi)?;
        let (bm, dm) = self.d_density_coeffs(&sol.dens_m, &dsol.d_dens_m, &dsol.xi)?;
        let a = self.d_psi_e_nf(self.cfg.kappa_i, &be, &de, &dsol.xi, targets)?;
        let b = self.d_psi_m_nf(self.cfg.kappa_i, &bm, &dm, &dsol.xi, targets)?;
        let inv_rho = Complex64::ONE / self.cfg.rho;
        Ok(a.iter().zip(&b).map(|(x, y)| -x * inv_rho - y).collect())
    }

    pub fn d_curl_e_interior(
        &self,
        sol: &SolutionBundle,
        dsol: &SolutionDerivative,
        targets: &[Vector3<f64>],
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let (be, de) = self.d_density_coeffs(&sol.dens_e, &dsol.d_dens_e, &dsol.xi)?;
        let (bm, dm) = self.d_density_coeffs(&sol.dens_m, &dsol.d_dens_m, &dsol.xi)?;
        let a = self.d_psi_m_nf(self.cfg.kappa_i, &be, &de, &dsol.xi, targets)?;
        let b = self.d_psi_e_nf(self.cfg.kappa_i, &bm, &dm, &dsol.xi, targets)?;
        let inv_rho = Complex64::ONE / self.cfg.rho;
        let k = self.cfg.kappa_i;
        Ok(a.iter()
            .zip(&b)
            .map(|(x, y)| (-x * inv_rho - y) * k)
            .collect())
    }

    /// Derivative of the far-field pattern.
    pub fn d_farfield(
        &self,
        sol: &SolutionBundle,
        dsol: &SolutionDerivative,
        directions: &[Vector3<f64>],
    ) -> Result<Vec<Vector3<Complex64>>, Error> {
        let s = self.surface;
        let kernel = HelmholtzKernel::new(self.cfg.kappa_e)?;
        let none = DeformationField::Constant {
            c: Vector3::zeros(),
        };
        let a_m = d_farfield_e(s, &kernel, &dsol.xi, &sol.j, directions);
        let a_d = farfield_e(s, &kernel, &dsol.dj, directions, &none, 0.0)?;
        let b_m = d_farfield_m(s, &kernel, &dsol.xi, &sol.c0j, directions);
        let b_d = farfield_m(s, &kernel, &dsol.dc0j, directions, &none, 0.0)?;
        let ieta = Complex64::new(0.0, self.cfg.eta);
        Ok((0..directions.len())
            .map(|k| -(a_m[k] + a_d[k]) - (b_m[k] + b_d[k]) * ieta)
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Trace extrapolation and the characterization of the first derivative
// ---------------------------------------------------------------------------

/// One-sided cubic extrapolation to the surface from offsets h..4h:
/// returns (value at 0, derivative at 0).
fn extrapolate4(
    f: [&Vector3<Complex64>; 4],
    h: f64,
) -> (Vector3<Complex64>, Vector3<Complex64>) {
    let c = |x: f64| Complex64::new(x, 0.0);
    let value = f[0] * c(4.0) - f[1] * c(6.0) + f[2] * c(4.0) - f[3];
    let deriv = (f[0] * c(-13.0 / 3.0) + f[1] * c(9.5) - f[2] * c(7.0)
        + f[3] * c(11.0 / 6.0))
        / c(h);
    (value, deriv)
}

/// Extrapolated one-sided boundary data of a field evaluator.
pub struct BoundaryData {
    pub value: Vec<Vector3<Complex64>>,
    pub normal_deriv: Vec<Vector3<Complex64>>,
}

/// Evaluate a field at offsets along the outward normal direction of a set
/// of surface checkpoints and extrapolate value and normal derivative to
/// the surface. `side` is +1 for exterior evaluation, -1 for interior.
pub fn boundary_data<F>(
    checkpoints: &[Vector3<f64>],
    side: f64,
    h: f64,
    eval: F,
) -> Result<BoundaryData, Error>
where
    F: Fn(&[Vector3<f64>]) -> Result<Vec<Vector3<Complex64>>, Error>,
{
    let mut offsets = Vec::with_capacity(4 * checkpoints.len());
    for x in checkpoints {
        for k in 1..=4 {
            offsets.push(x * (1.0 + side * h * k as f64));
        }
    }
    let vals = eval(&offsets)?;
    let mut value = Vec::with_capacity(checkpoints.len());
    let mut normal_deriv = Vec::with_capacity(checkpoints.len());
    for (i, _) in checkpoints.iter().enumerate() {
        let (v, d) = extrapolate4(
            [&vals[4 * i], &vals[4 * i + 1], &vals[4 * i + 2], &vals[4 * i + 3]],
            side * h,
        );
        value.push(v);
        normal_deriv.push(d);
    }
    Ok(BoundaryData {
        value,
        normal_deriv,
    })
}

/// Residual report of the boundary-value characterization of the first
/// derivative: electric and magnetic mismatch norms plus the sizes of the
/// boundary data themselves.
pub struct CharacterizationReport {
    pub lhs_d: Vec<Vector3<Complex64>>,
    pub g_d: Vec<Vector3<Complex64>>,
    pub lhs_n: Vec<Vector3<Complex64>>,
    pub g_n: Vec<Vector3<Complex64>>,
    pub rel_d: f64,
    pub rel_n: f64,
    pub abs_d: f64,
    pub abs_n: f64,
}

/// Compare the traces of the solution derivative with the boundary data
/// predicted from the base solution.
pub fn characterization_check(
    ev: &FieldEvaluator,
    inc: &IncidentField,
    xi: &DeformationField,
    sol: &SolutionBundle,
    dsol: &SolutionDerivative,
    checkpoints: &[Vector3<f64>],
    h: f64,
) -> Result<CharacterizationReport, Error> {
    let cfg = &ev.cfg;
    let none = DeformationField::Constant {
        c: Vector3::zeros(),
    };
    // base fields extrapolated from their own sides
    let ext = boundary_data(checkpoints, 1.0, h, |xs| {
        let es = ev.e_scattered(sol, xs, &none, 0.0)?;
        Ok(xs
            .iter()
            .zip(&es)
            .map(|(x, v)| v + inc.eval(cfg.kappa_e, x))
            .collect())
    })?;
    let int = boundary_data(checkpoints, -1.0, h, |xs| ev.e_interior(sol, xs, &none, 0.0))?;
    let mu_i = Complex64::new(1.0 / cfg.mu_i, 0.0);
    let mu_e = Complex64::new(1.0 / cfg.mu_e, 0.0);
    let ext_c = boundary_data(checkpoints, 1.0, h, |xs| {
        let cs = ev.curl_e_scattered(sol, xs, &none, 0.0)?;
        Ok(xs
            .iter()
            .zip(&cs)
            .map(|(x, v)| (v + inc.curl(cfg.kappa_e, x)) * mu_e)
            .collect())
    })?;
    let int_c = boundary_data(checkpoints, -1.0, h, |xs| {
        Ok(ev
            .curl_e_interior(sol, xs, &none, 0.0)?
            .iter()
            .map(|v| v * mu_i)
            .collect())
    })?;
    // derivative fields lose near-boundary accuracy one order faster, so
    // their extrapolation starts from doubled offsets
    let hd = 2.0 * h;
    let d_ext = boundary_data(checkpoints, 1.0, hd, |xs| ev.d_e_scattered(sol, dsol, xs))?;
    let d_int = boundary_data(checkpoints, -1.0, hd, |xs| ev.d_e_interior(sol, dsol, xs))?;
    let d_ext_c = boundary_data(checkpoints, 1.0, hd, |xs| {
        Ok(ev
            .d_curl_e_scattered(sol, dsol, xs)?
            .iter()
            .map(|v| v * mu_e)
            .collect())
    })?;
    let d_int_c = boundary_data(checkpoints, -1.0, hd, |xs| {
        Ok(ev
            .d_curl_e_interior(sol, dsol, xs)?
            .iter()
            .map(|v| v * mu_i)
            .collect())
    })?;
    // tangential curl of (xi . n) on the checkpoints, spectral through the
    // coarse grid
    let s = ev.surface;
    let xin_vals: Vec<Complex64> = s
        .nodes
        .iter()
        .map(|x| Complex64::new(xi.eval(x).dot(x), 0.0))
        .collect();
    let xin_coeffs = s.analyze(&xin_vals);
    let curl_xin: Vec<Vector3<Complex64>> = checkpoints
        .iter()
        .map(|x| {
            let hpt = sphharm::harmonics_at(s.band_limit, x);
            let mut gt = Complex64::default();
            let mut gp = Complex64::default();
            for (k, c) in xin_coeffs.iter().enumerate() {
                gt += c * hpt.dy_dtheta[k];
                gp += c * hpt.dy_dphi_scaled[k];
            }
            let sin_t = (x.x * x.x + x.y * x.y).sqrt().max(1e-300);
            let e_theta = Vector3::new(x.z * x.x / sin_t, x.z * x.y / sin_t, -sin_t);
            let e_phi = Vector3::new(-x.y / sin_t, x.x / sin_t, 0.0);
            let grad = cvec(&e_theta) * gt + cvec(&e_phi) * gp;
            cross_c(&grad, &cvec(x))
        })
        .collect();
    let mut lhs_d = Vec::new();
    let mut g_d = Vec::new();
    let mut lhs_n = Vec::new();
    let mut g_n = Vec::new();
    for (k, x) in checkpoints.iter().enumerate() {
        let nc = cvec(x);
        let xin = Complex64::new(xi.eval(x).dot(x), 0.0);
        // electric side
        let jump_v = int.value[k] - ext.value[k];
        let jump_d = int.normal_deriv[k] - ext.normal_deriv[k];
        g_d.push(cross_c(&nc, &jump_d) * (-xin) + curl_xin[k] * dot_rc(x, &jump_v));
        lhs_d.push(cross_c(&nc, &(d_int.value[k] - d_ext.value[k])));
        // magnetic side
        let jump_vc = int_c.value[k] - ext_c.value[k];
        let jump_dc = int_c.normal_deriv[k] - ext_c.normal_deriv[k];
        g_n.push(cross_c(&nc, &jump_dc) * (-xin) + curl_xin[k] * dot_rc(x, &jump_vc));
        lhs_n.push(cross_c(&nc, &(d_int_c.value[k] - d_ext_c.value[k])));
    }
    let norm = |v: &[Vector3<Complex64>]| -> f64 {
        v.iter()
            .map(|w| w.x.norm_sqr() + w.y.norm_sqr() + w.z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    };
    let diff_d: Vec<Vector3<Complex64>> = lhs_d
        .iter()
        .zip(&g_d)
        .map(|(a, b)| a - b)
        .collect();
    let diff_n: Vec<Vector3<Complex64>> = lhs_n
        .iter()
        .zip(&g_n)
        .map(|(a, b)| a - b)
        .collect();
    let abs_d = norm(&diff_d);
    let abs_n = norm(&diff_n);
    let rel_d = abs_d / norm(&g_d).max(1e-300);
    let rel_n = abs_n / norm(&g_n).max(1e-300);
    Ok(CharacterizationReport {
        lhs_d,
        g_d,
        lhs_n,
        g_n,
        rel_d,
        rel_n,
        abs_d,
        abs_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emfield::{psi_e, psi_m};
    use crate::geometry::build_sphere_grid;
    use crate::operator::flatten_vec3;

    fn nodef() -> DeformationField {
        DeformationField::Constant {
            c: Vector3::zeros(),
        }
    }

    fn bump() -> DeformationField {
        DeformationField::GaussianBump {
            center: Vector3::new(0.4, -0.2, 0.8),
            width: 0.7,
            amp: Vector3::new(0.3, 0.1, 0.8),
        }
    }

    fn checkpoints() -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for i in 0..3 {
            for j in 0..4 {
                let th = 0.5 + 0.6 * i as f64;
                let ph = 0.37 + 1.5 * j as f64;
                out.push(Vector3::new(
                    th.sin() * ph.cos(),
                    th.sin() * ph.sin(),
                    th.cos(),
                ));
            }
        }
        out
    }

    #[test]
    fn incident_field_invariants() {
        let inc = IncidentField::default_desk();
        assert!(inc.polarization.dot(&inc.direction).abs() < 1e-14);
        assert!(IncidentField::new(
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.1, 0.0, 0.4)
        )
        .is_err());
        // curl curl E = kappa^2 E analytically, checked through the stencil
        let kappa = Complex64::new(1.3, 0.0);
        let x = Vector3::new(0.2, -0.4, 0.7);
        let f = |y: &Vector3<f64>| inc.eval(kappa, y);
        let c = crate::emfield::fd_curl(&f, &x, 1e-4);
        assert!((c - inc.curl(kappa, &x)).norm() < 1e-8);
    }

    #[test]
    fn interior_representation_identity() {
        // an entire Maxwell field equals its own interior representation
        let s = build_sphere_grid(11, 23, 10).unwrap();
        let inc = IncidentField::default_desk();
        let kappa = Complex64::new(1.0, 0.0);
        let kernel = HelmholtzKernel::new(kappa).unwrap();
        let gd = trace_incident(&s, &inc, kappa, &nodef(), 0.0, TraceKind::Dirichlet).unwrap();
        let gn = trace_incident(&s, &inc, kappa, &nodef(), 0.0, TraceKind::Neumann).unwrap();
        let probes = [Vector3::new(0.1, 0.15, 0.2), Vector3::new(-0.2, 0.1, 0.25)];
        let pe = psi_e(&s, &kernel, &gn, &probes, &nodef(), 0.0).unwrap();
        let pm = psi_m(&s, &kernel, &gd, &probes, &nodef(), 0.0).unwrap();
        for (k, x) in probes.iter().enumerate() {
            let rep = -pe[k] - pm[k];
            let truth = inc.eval(kappa, x);
            assert!(
                (rep - truth).norm() < 1e-8 * truth.norm(),
                "representation defect {:.3e}",
                (rep - truth).norm()
            );
        }
    }

    #[test]
    fn trace_roundtrip_and_derivative() {
        let s = build_sphere_grid(11, 23, 10).unwrap();
        let inc = IncidentField::default_desk();
        let kappa = Complex64::new(1.0, 0.0);
        // decomposition reproduces the tangential trace
        let gd = trace_incident(&s, &inc, kappa, &nodef(), 0.0, TraceKind::Dirichlet).unwrap();
        let back = crate::surfops::helmholtz_recompose(&s, &gd);
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..s.node_count() {
            let x = s.nodes[i];
            let truth = crate::operator::cross_c(&cvec(&x), &inc.eval(kappa, &x));
            err = err.max((back.values[i] - truth).norm());
            scale = scale.max(truth.norm());
        }
        assert!(err / scale < 1e-7, "trace roundtrip {err}");
        assert!(back.normal_defect(&s) < 1e-10 * scale);
        // wavenumber precondition
        assert!(trace_incident(
            &s,
            &inc,
            Complex64::default(),
            &nodef(),
            0.0,
            TraceKind::Dirichlet
        )
        .is_err());
        // analytic derivative against the finite difference of the traces
        let xi = bump();
        for which in [TraceKind::Dirichlet, TraceKind::Neumann] {
            let (dp, dq) = d_trace_incident(&s, &inc, kappa, &xi, which).unwrap();
            let analytic = [dp, dq].concat();
            let f = |t: f64| -> Vec<Complex64> {
                let h = trace_incident(&s, &inc, kappa, &xi, t, which).unwrap();
                [hcoeffs(&s, &h.p), hcoeffs(&s, &h.q)].concat()
            };
            let (e1, _, order) =
                crate::geometry::observed_order_complex(f, &analytic, 1e-2, 1);
            assert!(
                (1.7..=2.3).contains(&order) || e1 < 1e-9,
                "{which:?}: order {order}, err {e1}"
            );
        }
    }

    #[test]
    fn identical_media_null_test() {
        let s = build_sphere_grid(11, 23, 10).unwrap();
        let asm = EmAssembly::new(&s);
        let kappa = Complex64::new(1.0, 0.0);
        let cfg = ScatteringConfig::new(kappa, kappa, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let inc = IncidentField::default_desk();
        let sol = solve(&asm, &cfg, &inc, &nodef(), 0.0).unwrap();
        let ev = FieldEvaluator::new(&s, &cfg);
        let dirs = [
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.6, 0.8, 0.0),
            Vector3::new(-0.8, 0.0, 0.6),
        ];
        let ff = ev.farfield(&sol, &dirs, &nodef(), 0.0).unwrap();
        let worst = ff.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        assert!(worst < 1e-5, "identical media radiate {worst:.3e}");
        // scattered field near the obstacle is null too
        let es = ev
            .e_scattered(&sol, &[Vector3::new(0.0, 1.5, 1.0)], &nodef(), 0.0)
            .unwrap();
        assert!(es[0].norm() < 1e-5);
    }

    #[test]
    fn transmission_and_radiation_probes() {
        let s = build_sphere_grid(11, 23, 10).unwrap();
        let asm = EmAssembly::new(&s);
        let cfg = ScatteringConfig::default_desk();
        let inc = IncidentField::default_desk();
        let sol = solve(&asm, &cfg, &inc, &nodef(), 0.0).unwrap();
        assert!(sol.condition < 1e6, "condition {:.3e}", sol.condition);
        let ev = FieldEvaluator::new(&s, &cfg);
        let pts = checkpoints();
        let h = 0.05;
        let ext = boundary_data(&pts, 1.0, h, |xs| {
            let es = ev.e_scattered(&sol, xs, &nodef(), 0.0)?;
            Ok(xs
                .iter()
                .zip(&es)
                .map(|(x, v)| v + inc.eval(cfg.kappa_e, x))
                .collect())
        })
        .unwrap();
        let int =
            boundary_data(&pts, -1.0, h, |xs| ev.e_interior(&sol, xs, &nodef(), 0.0)).unwrap();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for (k, x) in pts.iter().enumerate() {
            let nc = cvec(x);
            worst = worst.max(cross_c(&nc, &(int.value[k] - ext.value[k])).norm());
            scale = scale.max(ext.value[k].norm());
        }
        assert!(worst / scale < 1e-3, "electric transmission {worst:.3e}");
        let mu_e = Complex64::new(1.0 / cfg.mu_e, 0.0);
        let mu_i = Complex64::new(1.0 / cfg.mu_i, 0.0);
        let ext_c = boundary_data(&pts, 1.0, h, |xs| {
            let cs = ev.curl_e_scattered(&sol, xs, &nodef(), 0.0)?;
            Ok(xs
                .iter()
                .zip(&cs)
                .map(|(x, v)| (v + inc.curl(cfg.kappa_e, x)) * mu_e)
                .collect())
        })
        .unwrap();
        let int_c = boundary_data(&pts, -1.0, h, |xs| {
            Ok(ev
                .curl_e_interior(&sol, xs, &nodef(), 0.0)?
                .iter()
                .map(|v| v * mu_i)
                .collect())
        })
        .unwrap();
        let mut worst_n = 0.0f64;
        let mut scale_n = 0.0f64;
        for (k, x) in pts.iter().enumerate() {
            let nc = cvec(x);
            worst_n = worst_n.max(cross_c(&nc, &(int_c.value[k] - ext_c.value[k])).norm());
            scale_n = scale_n.max(ext_c.value[k].norm());
        }
        assert!(
            worst_n / scale_n < 1e-3,
            "magnetic transmission {worst_n:.3e}"
        );
        // Maxwell residual at a probe through nested stencils
        let probe = Vector3::new(1.4, 1.3, 1.2);
        let fe = |x: &Vector3<f64>| ev.e_scattered(&sol, &[*x], &nodef(), 0.0).unwrap()[0];
        let cc = crate::emfield::fd_curl(
            &|x: &Vector3<f64>| ev.curl_e_scattered(&sol, &[*x], &nodef(), 0.0).unwrap()[0],
            &probe,
            1e-3,
        );
        let e0 = fe(&probe);
        let k2 = cfg.kappa_e * cfg.kappa_e;
        assert!(
            (cc - e0 * k2).norm() < 1e-4 * e0.norm(),
            "maxwell residual {:.3e}",
            (cc - e0 * k2).norm() / e0.norm()
        );
        // interior field solves its own equation
        let probe_i = Vector3::new(0.2, 0.1, 0.25);
        let cc_i = crate::emfield::fd_curl(
            &|x: &Vector3<f64>| ev.curl_e_interior(&sol, &[*x], &nodef(), 0.0).unwrap()[0],
            &probe_i,
            1e-3,
        );
        let e0_i = ev.e_interior(&sol, &[probe_i], &nodef(), 0.0).unwrap()[0];
        let k2_i = cfg.kappa_i * cfg.kappa_i;
        assert!(
            (cc_i - e0_i * k2_i).norm() < 1e-4 * e0_i.norm(),
            "interior maxwell residual {:.3e}",
            (cc_i - e0_i * k2_i).norm() / e0_i.norm()
        );
        // outgoing-wave decay: the radiation defect falls faster than 1/R
        let xh = Vector3::new(0.48, 0.6, 0.64).normalize();
        let sm = |rr: f64| {
            let x = rr * xh;
            let es = fe(&x);
            let cs = ev.curl_e_scattered(&sol, &[x], &nodef(), 0.0).unwrap()[0];
            (cross_c(&cs, &cvec(&xh)) - es * (Complex64::new(0.0, 1.0) * cfg.kappa_e)).norm()
        };
        let r20 = sm(20.0);
        let r40 = sm(40.0);
        assert!(r40 / r20 < 0.35, "radiation decay ratio {}", r40 / r20);
    }

    #[test]
    fn farfield_rotational_equivariance() {
        let s = build_sphere_grid(11, 23, 10).unwrap();
        let asm = EmAssembly::new(&s);
        let cfg = ScatteringConfig::default_desk();
        let ev = FieldEvaluator::new(&s, &cfg);
        let inc_a = IncidentField::default_desk();
        let inc_b = IncidentField::new(
            Vector3::new(0.0, 0.0, 1.0),
            inc_a.direction.cross(&inc_a.polarization),
        )
        .unwrap();
        let sol_a = solve(&asm, &cfg, &inc_a, &nodef(), 0.0).unwrap();
        let sol_b = solve(&asm, &cfg, &inc_b, &nodef(), 0.0).unwrap();
        // the second polarization is the first rotated a quarter turn
        // about the propagation axis
        let rotz = |v: &Vector3<f64>| Vector3::new(-v.y, v.x, v.z);
        let rotz_c = |v: &Vector3<Complex64>| Vector3::new(-v.y, v.x, v.z);
        let dirs = [
            Vector3::new(0.3, -0.5, 0.8).normalize(),
            Vector3::new(-0.7, 0.1, 0.7).normalize(),
        ];
        let rotated: Vec<Vector3<f64>> = dirs.iter().map(|d| rotz(d)).collect();
        let fa = ev.farfield(&sol_a, &dirs, &nodef(), 0.0).unwrap();
        let fb = ev.farfield(&sol_b, &rotated, &nodef(), 0.0).unwrap();
        for k in 0..dirs.len() {
            let expect = rotz_c(&fa[k]);
            assert!(
                (fb[k] - expect).norm() < 1e-6 * fa[k].norm(),
                "equivariance defect {:.3e}",
                (fb[k] - expect).norm() / fa[k].norm()
            );
        }
    }

    #[test]
    fn solution_derivative_matches_pipeline_fd() {
        let s = build_sphere_grid(9, 19, 8).unwrap();
        let asm = EmAssembly::new(&s);
        let cfg = ScatteringConfig::default_desk();
        let inc = IncidentField::default_desk();
        let stack = assemble_stack(&asm, &cfg, &nodef(), 0.0).unwrap();
        let sol = solve_with_stack(&asm, &cfg, &inc, &nodef(), 0.0, &stack).unwrap();
        let ev = FieldEvaluator::new(&s, &cfg);
        let xi = bump();
        let dsol = d_solution(&asm, &cfg, &inc, &xi, &stack, &sol).unwrap();
        let dirs = [
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.6, 0.8, 0.0),
            Vector3::new(-0.48, 0.6, 0.64).normalize(),
        ];
        let analytic = flatten_vec3(&ev.d_farfield(&sol, &dsol, &dirs).unwrap());
        let f = |t: f64| -> Vec<Complex64> {
            let so = solve(&asm, &cfg, &inc, &xi, t).unwrap();
            flatten_vec3(&ev.farfield(&so, &dirs, &xi, t).unwrap())
        };
        let (e1, _, order) = crate::geometry::observed_order_complex(f, &analytic, 1e-2, 1);
        let scale: f64 = analytic.iter().map(|z| z.norm()).sum();
        assert!(order >= 1.7 || e1 < 1e-9, "order {order}");
        let fd = crate::geometry::gateaux_fd_complex(f, 5e-3, 1);
        let err: f64 = fd
            .iter()
            .zip(&analytic)
            .map(|(a, b)| (a - b).norm())
            .sum();
        assert!(err / scale < 1e-3, "far-field derivative rel err {}", err / scale);
        // translation law of the full pipeline
        let c = Vector3::new(0.2, -0.1, 0.3);
        let dsol_c = d_solution(
            &asm,
            &cfg,
            &inc,
            &DeformationField::Constant { c },
            &stack,
            &sol,
        )
        .unwrap();
        let dff_c = ev.d_farfield(&sol, &dsol_c, &dirs).unwrap();
        let ff0 = ev.farfield(&sol, &dirs, &nodef(), 0.0).unwrap();
        for (k, xh) in dirs.iter().enumerate() {
            let ik = Complex64::new(0.0, 1.0) * cfg.kappa_e;
            let law = ff0[k] * (ik * (inc.direction.dot(&c) - xh.dot(&c)));
            assert!(
                (dff_c[k] - law).norm() < 1e-10 * ff0[k].norm(),
                "translation law defect at {k}"
            );
        }
        // zero direction field gives a vanishing derivative everywhere
        let dsol_z = d_solution(
            &asm,
            &cfg,
            &inc,
            &DeformationField::Constant {
                c: Vector3::zeros(),
            },
            &stack,
            &sol,
        )
        .unwrap();
        let dff_z = ev.d_farfield(&sol, &dsol_z, &dirs).unwrap();
        assert!(dff_z.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn characterization_of_first_derivative() {
        let s = build_sphere_grid(11, 23, 10).unwrap();
        let asm = EmAssembly::new(&s);
        let cfg = ScatteringConfig::default_desk();
        let inc = IncidentField::default_desk();
        let stack = assemble_stack(&asm, &cfg, &nodef(), 0.0).unwrap();
        let sol = solve_with_stack(&asm, &cfg, &inc, &nodef(), 0.0, &stack).unwrap();
        let ev = FieldEvaluator::new(&s, &cfg);
        let pts = checkpoints();
        // tangential direction field: both boundary data vanish
        let rot = DeformationField::Rotation {
            omega: Vector3::new(0.0, 0.0, 1.0),
        };
        let dsol_r = d_solution(&asm, &cfg, &inc, &rot, &stack, &sol).unwrap();
        let rep = characterization_check(&ev, &inc, &rot, &sol, &dsol_r, &pts, 0.05).unwrap();
        assert!(rep.abs_d < 1e-6, "tangential null electric {:.3e}", rep.abs_d);
        assert!(rep.abs_n < 1e-6, "tangential null magnetic {:.3e}", rep.abs_n);
        // generic bump: the derivative traces match the predicted data
        let xi = bump();
        let dsol_b = d_solution(&asm, &cfg, &inc, &xi, &stack, &sol).unwrap();
        let rep_b = characterization_check(&ev, &inc, &xi, &sol, &dsol_b, &pts, 0.05).unwrap();
        assert!(rep_b.rel_d < 5e-2, "electric characterization {:.3e}", rep_b.rel_d);
        assert!(rep_b.rel_n < 5e-2, "magnetic characterization {:.3e}", rep_b.rel_n);
    }
}

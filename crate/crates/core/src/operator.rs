//! Dense operator container shared by the surface-operator and kernel
//! layers, plus flat-layout helpers for vector-valued node data.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;

/// Space a dense operator maps from or onto.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Space {
    /// Scalar node values.
    Values(usize),
    /// Vector node values in component-block layout (x-block, y-block, z-block).
    VectorValues(usize),
    /// Spherical-harmonic coefficients.
    Coeffs(usize),
}

impl Space {
    pub fn dim(&self) -> usize {
        match self {
            Space::Values(n) | Space::Coeffs(n) => *n,
            Space::VectorValues(n) => 3 * n,
        }
    }
}

/// Assembled matrix of a boundary integral or surface differential operator.
#[derive(Clone)]
pub struct DenseOperator {
    pub label: String,
    pub domain: Space,
    pub codomain: Space,
    pub matrix: DMatrix<Complex64>,
}

impl DenseOperator {
    pub fn new(label: impl Into<String>, domain: Space, codomain: Space, matrix: DMatrix<Complex64>) -> Self {
        assert_eq!(matrix.ncols(), domain.dim(), "domain dimension mismatch");
        assert_eq!(matrix.nrows(), codomain.dim(), "codomain dimension mismatch");
        Self {
            label: label.into(),
            domain,
            codomain,
            matrix,
        }
    }

    pub fn apply(&self, input: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(input.len(), self.domain.dim());
        let v = DVector::from_column_slice(input);
        (&self.matrix * v).data.into()
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Operator max-row-sum norm, used by translation-invariance checks.
    pub fn norm_inf(&self) -> f64 {
        (0..self.matrix.nrows())
            .map(|i| self.matrix.row(i).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Flatten vector samples into component-block layout.
pub fn flatten_vec3(values: &[Vector3<Complex64>]) -> Vec<Complex64> {
    let n = values.len();
    let mut out = vec![Complex64::default(); 3 * n];
    for (i, v) in values.iter().enumerate() {
        out[i] = v.x;
        out[n + i] = v.y;
        out[2 * n + i] = v.z;
    }
    out
}

/// Rebuild vector samples from component-block layout.
pub fn unflatten_vec3(flat: &[Complex64]) -> Vec<Vector3<Complex64>> {
    assert_eq!(flat.len() % 3, 0);
    let n = flat.len() / 3;
    (0..n)
        .map(|i| Vector3::new(flat[i], flat[n + i], flat[2 * n + i]))
        .collect()
}

/// Real 3x3 matrix times a complex 3-vector.
pub fn mat_real_mul(m: &nalgebra::Matrix3<f64>, v: &Vector3<Complex64>) -> Vector3<Complex64> {
    Vector3::new(
        m[(0, 0)] * v.x + m[(0, 1)] * v.y + m[(0, 2)] * v.z,
        m[(1, 0)] * v.x + m[(1, 1)] * v.y + m[(1, 2)] * v.z,
        m[(2, 0)] * v.x + m[(2, 1)] * v.y + m[(2, 2)] * v.z,
    )
}

/// Real 3-vector promoted to complex.
pub fn cvec(v: &Vector3<f64>) -> Vector3<Complex64> {
    Vector3::new(
        Complex64::new(v.x, 0.0),
        Complex64::new(v.y, 0.0),
        Complex64::new(v.z, 0.0),
    )
}

/// Complex dot product without conjugation (bilinear pairing).
pub fn dot_c(a: &Vector3<Complex64>, b: &Vector3<Complex64>) -> Complex64 {
    a.x * b.x + a.y * b.y + a.z * b.z
}

/// Dot of a real vector with a complex vector.
pub fn dot_rc(a: &Vector3<f64>, b: &Vector3<Complex64>) -> Complex64 {
    a.x * b.x + a.y * b.y + a.z * b.z
}

/// Cross product of complex 3-vectors (bilinear).
pub fn cross_c(a: &Vector3<Complex64>, b: &Vector3<Complex64>) -> Vector3<Complex64> {
    Vector3::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    )
}

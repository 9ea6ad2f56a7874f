//! Spherical-harmonic machinery: Gauss-Legendre rules, normalized associated
//! Legendre functions and pointwise evaluation tables used by the surface
//! discretization.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;

/// Gauss-Legendre nodes and weights on (-1, 1).
///
/// Newton iteration on the degree-`n` Legendre polynomial; accurate to
/// machine precision for the moderate orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pn(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        let (_, d) = legendre_pn(n, 0.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

/// Legendre P_n(x) and derivative by the three-term recurrence.
fn legendre_pn(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule for integrals over [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|&t| mid + c * t).collect(),
        w.iter().map(|&wi| c * wi).collect(),
    )
}

/// Number of coefficients for degrees 0..=l.
pub fn coeff_count(l: usize) -> usize {
    (l + 1) * (l + 1)
}

/// Linear index of the (n, m) harmonic, m in -n..=n.
pub fn coeff_index(n: usize, m: i64) -> usize {
    (n * n) as usize + (m + n as i64) as usize
}

/// Degree and order of a linear coefficient index.
pub fn index_degree_order(idx: usize) -> (usize, i64) {
    let n = (idx as f64).sqrt().floor() as usize;
    let n = if (n + 1) * (n + 1) <= idx { n + 1 } else { n };
    let m = idx as i64 - (n * n) as i64 - n as i64;
    (n, m)
}

/// Orthonormal spherical harmonics with the Condon-Shortley phase,
/// evaluated at one point together with the theta-derivative.
///
/// Output layout matches `coeff_index`; `sin_theta` must be positive
/// (all evaluation points stay away from the poles).
pub struct HarmonicPoint {
    pub y: Vec<Complex64>,
    /// d/dtheta of each harmonic.
    pub dy_dtheta: Vec<Complex64>,
    /// (im) Y / sin(theta): the phi-derivative over the azimuthal metric.
    pub dy_dphi_scaled: Vec<Complex64>,
}

/// Normalized associated Legendre values and theta-derivatives for all
/// 0 <= m <= n <= l at a single colatitude.
fn legendre_table(l: usize, cos_t: f64, sin_t: f64) -> (Vec<f64>, Vec<f64>) {
    let idx = |n: usize, m: usize| n * (n + 1) / 2 + m;
    let mut p = vec![0.0; (l + 1) * (l + 2) / 2];
    let mut dp = vec![0.0; (l + 1) * (l + 2) / 2];
    p[0] = (1.0 / (4.0 * std::f64::consts::PI)).sqrt();
    for m in 1..=l {
        let mf = m as f64;
        p[idx(m, m)] = -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * sin_t * p[idx(m - 1, m - 1)];
    }
    for m in 0..l {
        let mf = m as f64;
        p[idx(m + 1, m)] = (2.0 * mf + 3.0).sqrt() * cos_t * p[idx(m, m)];
    }
    for m in 0..=l {
        for n in (m + 2)..=l {
            let nf = n as f64;
            let mf = m as f64;
            let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
            let b = (((nf - 1.0) * (nf - 1.0) - mf * mf) / (4.0 * (nf - 1.0) * (nf - 1.0) - 1.0))
                .sqrt();
            p[idx(n, m)] = a * (cos_t * p[idx(n - 1, m)] - b * p[idx(n - 2, m)]);
        }
    }
    // sin(t) dP/dt = n cos(t) P_n - sqrt((n^2-m^2)(2n+1)/(2n-1)) P_{n-1}
    for m in 0..=l {
        for n in m..=l {
            let nf = n as f64;
            let mf = m as f64;
            let lower = if n > m && n >= 1 {
                ((nf * nf - mf * mf) * (2.0 * nf + 1.0) / (2.0 * nf - 1.0)).sqrt()
                    * p[idx(n - 1, m)]
            } else {
                0.0
            };
            dp[idx(n, m)] = (nf * cos_t * p[idx(n, m)] - lower) / sin_t;
        }
    }
    (p, dp)
}

/// Evaluate the harmonic values only (no derivatives) at a unit vector.
pub fn harmonics_values_at(l: usize, point: &Vector3<f64>) -> Vec<Complex64> {
    let cos_t = point.z.clamp(-1.0, 1.0);
    let sin_t = (point.x * point.x + point.y * point.y).sqrt().max(1e-300);
    let phi = point.y.atan2(point.x);
    let (p, _) = legendre_table(l, cos_t, sin_t);
    let pidx = |n: usize, m: usize| n * (n + 1) / 2 + m;
    let mut y = vec![Complex64::default(); coeff_count(l)];
    for n in 0..=l {
        for m in 0..=(n as i64) {
            let e = Complex64::from_polar(1.0, m as f64 * phi);
            let v = e * p[pidx(n, m as usize)];
            y[coeff_index(n, m)] = v;
            if m > 0 {
                let s = if m % 2 == 0 { 1.0 } else { -1.0 };
                y[coeff_index(n, -m)] = s * v.conj();
            }
        }
    }
    y
}

/// Evaluate all harmonics (and angular derivatives) at a unit vector.
pub fn harmonics_at(l: usize, point: &Vector3<f64>) -> HarmonicPoint {
    let cos_t = point.z.clamp(-1.0, 1.0);
    let sin_t = (point.x * point.x + point.y * point.y).sqrt().max(1e-300);
    let phi = point.y.atan2(point.x);
    harmonics_at_angles(l, cos_t, sin_t, phi)
}

pub fn harmonics_at_angles(l: usize, cos_t: f64, sin_t: f64, phi: f64) -> HarmonicPoint {
    let k = coeff_count(l);
    let (p, dp) = legendre_table(l, cos_t, sin_t);
    let pidx = |n: usize, m: usize| n * (n + 1) / 2 + m;
    let mut y = vec![Complex64::default(); k];
    let mut dy = vec![Complex64::default(); k];
    let mut dyp = vec![Complex64::default(); k];
    for n in 0..=l {
        for m in 0..=(n as i64) {
            let e = Complex64::from_polar(1.0, m as f64 * phi);
            let pm = p[pidx(n, m as usize)];
            let dpm = dp[pidx(n, m as usize)];
            let v = e * pm;
            let dv = e * dpm;
            y[coeff_index(n, m)] = v;
            dy[coeff_index(n, m)] = dv;
            dyp[coeff_index(n, m)] = Complex64::new(0.0, m as f64) * v / sin_t;
            if m > 0 {
                // Y_n^{-m} = (-1)^m conj(Y_n^m)
                let s = if m % 2 == 0 { 1.0 } else { -1.0 };
                y[coeff_index(n, -m)] = s * v.conj();
                dy[coeff_index(n, -m)] = s * dv.conj();
                dyp[coeff_index(n, -m)] =
                    Complex64::new(0.0, -(m as f64)) * s * v.conj() / sin_t;
            }
        }
    }
    HarmonicPoint {
        y,
        dy_dtheta: dy,
        dy_dphi_scaled: dyp,
    }
}

/// Dense synthesis matrix: node values from coefficients.
pub fn synthesis_matrix(l: usize, points: &[Vector3<f64>]) -> DMatrix<Complex64> {
    let k = coeff_count(l);
    let mut s = DMatrix::zeros(points.len(), k);
    for (i, pt) in points.iter().enumerate() {
        let h = harmonics_at(l, pt);
        for j in 0..k {
            s[(i, j)] = h.y[j];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // degree 15 monomial is integrated exactly by an 8-point rule
        let val: f64 = x
            .iter()
            .zip(&w)
            .map(|(xi, wi)| wi * xi.powi(14))
            .sum();
        assert!((val - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn index_roundtrip() {
        for n in 0..6usize {
            for m in -(n as i64)..=(n as i64) {
                let (nn, mm) = index_degree_order(coeff_index(n, m));
                assert_eq!((nn, mm), (n, m));
            }
        }
    }

    #[test]
    fn low_order_harmonics_match_closed_forms() {
        let pt = Vector3::new(0.3, -0.5, 0.8122).normalize();
        let h = harmonics_at(2, &pt);
        let c = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
        assert!((h.y[coeff_index(0, 0)] - Complex64::new(c, 0.0)).norm() < 1e-14);
        // Y_1^0 = sqrt(3/4pi) z
        let y10 = (3.0 / (4.0 * std::f64::consts::PI)).sqrt() * pt.z;
        assert!((h.y[coeff_index(1, 0)] - Complex64::new(y10, 0.0)).norm() < 1e-14);
        // Y_1^1 = -sqrt(3/8pi)(x+iy)
        let k = (3.0 / (8.0 * std::f64::consts::PI)).sqrt();
        let y11 = Complex64::new(-k * pt.x, -k * pt.y);
        assert!((h.y[coeff_index(1, 1)] - y11).norm() < 1e-14);
    }

    #[test]
    fn theta_derivative_matches_finite_difference() {
        let l = 6;
        let theta = 1.1f64;
        let phi = 0.7f64;
        let h = 1e-6;
        let at = |t: f64| harmonics_at_angles(l, t.cos(), t.sin(), phi);
        let hp = at(theta + h);
        let hm = at(theta - h);
        let h0 = at(theta);
        for idx in 0..coeff_count(l) {
            let fd = (hp.y[idx] - hm.y[idx]) / (2.0 * h);
            assert!(
                (fd - h0.dy_dtheta[idx]).norm() < 1e-8,
                "idx {idx}: fd {fd} vs {}",
                h0.dy_dtheta[idx]
            );
        }
    }
}

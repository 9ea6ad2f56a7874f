//! Independent reference values used by the verification suites: spherical
//! Bessel functions and the closed-form sphere eigenvalues of the single
//! layer operator.

use num_complex::Complex64;

/// Spherical Bessel j_n(x) for real positive x, by downward recurrence
/// normalized against j_0.
pub fn spherical_jn(n_max: usize, x: f64) -> Vec<f64> {
    assert!(x > 0.0);
    let start = n_max + 16 + (x as usize);
    let mut jp = 0.0f64;
    let mut j = 1e-30f64;
    let mut out = vec![0.0; n_max + 1];
    for k in (0..=start).rev() {
        let jm = (2.0 * k as f64 + 3.0) / x * j - jp;
        jp = j;
        j = jm;
        if k <= n_max {
            out[k] = j;
        }
        // rescale to avoid overflow of the unnormalized recurrence
        if j.abs() > 1e250 {
            jp /= 1e250;
            j /= 1e250;
            for v in out.iter_mut() {
                *v /= 1e250;
            }
        }
    }
    let scale = (x.sin() / x) / out[0];
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

/// Spherical Bessel y_n(x), upward recurrence (stable).
pub fn spherical_yn(n_max: usize, x: f64) -> Vec<f64> {
    assert!(x > 0.0);
    let mut out = vec![0.0; n_max + 1];
    out[0] = -x.cos() / x;
    if n_max == 0 {
        return out;
    }
    out[1] = -x.cos() / (x * x) - x.sin() / x;
    for n in 1..n_max {
        out[n + 1] = (2.0 * n as f64 + 1.0) / x * out[n] - out[n - 1];
    }
    out
}

/// Spherical Hankel functions of the first kind h_n(x) = j_n + i y_n.
pub fn spherical_h1(n_max: usize, x: f64) -> Vec<Complex64> {
    let j = spherical_jn(n_max, x);
    let y = spherical_yn(n_max, x);
    j.iter()
        .zip(&y)
        .map(|(a, b)| Complex64::new(*a, *b))
        .collect()
}

/// Eigenvalue of the single layer operator on the unit sphere for the
/// Laplace kernel: degree n harmonics map to 1/(2n+1).
pub fn coulomb_single_layer_eigenvalue(n: usize) -> f64 {
    1.0 / (2.0 * n as f64 + 1.0)
}

/// Eigenvalue of the Helmholtz single layer operator on the unit sphere:
/// i kappa j_n(kappa) h_n(kappa), for real kappa.
pub fn helmholtz_single_layer_eigenvalue(n: usize, kappa: f64) -> Complex64 {
    let j = spherical_jn(n, kappa);
    let h = spherical_h1(n, kappa);
    Complex64::new(0.0, kappa) * j[n] * h[n]
}

/// Eigenvalue of the adjoint double layer for the Laplace kernel on the
/// unit sphere: -1 / (2 (2n+1)).
pub fn coulomb_adjoint_double_layer_eigenvalue(n: usize) -> f64 {
    -1.0 / (2.0 * (2.0 * n as f64 + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_low_orders_match_closed_forms() {
        let x = 1.3f64;
        let j = spherical_jn(2, x);
        assert!((j[0] - x.sin() / x).abs() < 1e-14);
        assert!((j[1] - (x.sin() / (x * x) - x.cos() / x)).abs() < 1e-13);
        let j1_exact = x.sin() / (x * x) - x.cos() / x;
        assert!((j[1] - j1_exact).abs() < 1e-13);
        let y = spherical_yn(1, x);
        assert!((y[0] + x.cos() / x).abs() < 1e-14);
    }

    #[test]
    fn wronskian_identity() {
        // j_n(x) y_{n-1}(x) - j_{n-1}(x) y_n(x) = 1/x^2
        let x = 1.0f64;
        let j = spherical_jn(10, x);
        let y = spherical_yn(10, x);
        for n in 1..=10 {
            let w = j[n] * y[n - 1] - j[n - 1] * y[n];
            assert!((w - 1.0 / (x * x)).abs() < 1e-12, "order {n}");
        }
    }
}

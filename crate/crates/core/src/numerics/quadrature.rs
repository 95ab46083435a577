//! Gaussian quadrature rules (Golub-Welsch) and a small adaptive Simpson
//! integrator.

/// Eigenvalues and first-row eigenvector components of a symmetric
/// tridiagonal matrix, by the implicit QL algorithm with Wilkinson shifts.
/// `diag` holds the diagonal, `off[k]` the (k, k+1) entry. Returns
/// `(eigenvalues, first_components)` sorted ascending.
fn tridiag_eigen_first_row(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    assert_eq!(off.len(), n.saturating_sub(1));
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    // first row of the accumulated rotation product; starts at e₁ᵀ
    let mut z = vec![0.0; n];
    z[0] = 1.0;

    for l in 0..n {
        let mut iter = 0;
        loop {
            // find a small off-diagonal element
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter <= 50, "tridiagonal eigensolver failed to converge");
            // Wilkinson shift
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                // rotate the tracked first-row components
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if r == 0.0 && m > l + 1 {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let eigs: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let firsts: Vec<f64> = order.iter().map(|&i| z[i]).collect();
    (eigs, firsts)
}

/// Gauss-Legendre nodes and weights on `[a, b]`. Exact for polynomials of
/// degree <= 2n-1.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "need at least 2 nodes");
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let (t, z) = tridiag_eigen_first_row(&diag, &off);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let nodes: Vec<f64> = t.iter().map(|&x| mid + half * x).collect();
    let weights: Vec<f64> = z.iter().map(|&c| 2.0 * c * c * half).collect();
    (nodes, weights)
}

/// Gauss-Hermite nodes and weights for the physicists' weight exp(-x²):
/// `∫ f(x) e^{-x²} dx ≈ Σ wᵢ f(xᵢ)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "need at least 2 nodes");
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    let (t, z) = tridiag_eigen_first_row(&diag, &off);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let weights: Vec<f64> = z.iter().map(|&c| sqrt_pi * c * c).collect();
    (t, weights)
}

/// Expectation of `f(X)` for `X ~ N(mean, sd²)` via Gauss-Hermite.
pub fn normal_expectation<F: Fn(f64) -> f64>(n: usize, mean: f64, sd: f64, f: F) -> f64 {
    let (nodes, weights) = gauss_hermite(n);
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| w * f(mean + std::f64::consts::SQRT_2 * sd * t))
        .sum::<f64>()
        * inv_sqrt_pi
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson integration of `f` on `[a, b]` to absolute tolerance
/// `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    adaptive_step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_polynomial_exactness() {
        // ∫₀¹ x⁴ dx = 0.2
        let (x, w) = gauss_legendre(5, 0.0, 1.0);
        let s: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(4)).sum();
        assert!((s - 0.2).abs() < 1e-13, "got {s}");
        // degree 2n-1 = 9 still exact
        let s9: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(9)).sum();
        assert!((s9 - 0.1).abs() < 1e-13);
    }

    #[test]
    fn hermite_gaussian_variance() {
        // E[X²] for X ~ N(0,1) via 2 nodes
        let v = normal_expectation(2, 0.0, 1.0, |x| x * x);
        assert!((v - 1.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn hermite_lognormal_moment() {
        // E[exp(X/10)] for X ~ N(1,1) = exp(0.1 + 0.005)
        let v = normal_expectation(64, 1.0, 1.0, |x| (x / 10.0).exp());
        assert!((v - 0.105f64.exp()).abs() < 1e-10, "got {v}");
    }

    #[test]
    fn legendre_weights_sum_to_length() {
        let (_, w) = gauss_legendre(64, -2.0, 3.0);
        assert!((w.iter().sum::<f64>() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_smooth_and_kinked() {
        let v = adaptive_simpson(|t| (-0.5 * t).exp(), 0.0, 4.0, 1e-10);
        assert!((v - 2.0 * (1.0 - (-2.0f64).exp())).abs() < 1e-9);
        // integrand with a mild singular derivative at 0
        let v2 = adaptive_simpson(|t: f64| t.powf(0.3), 0.0, 1.0, 1e-9);
        assert!((v2 - 1.0 / 1.3).abs() < 1e-7, "got {v2}");
    }
}

//! Gaussian quadrature rules.

use std::f64::consts::PI;

/// Nodes and weights of a one-dimensional rule.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss–Hermite rule for the standard normal: `E f(g) ≈ Σ w_i f(x_i)`.
/// Weights sum to one. Exact for polynomials of degree `2n - 1`.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    // Newton iteration on orthonormal physicists' Hermite polynomials,
    // seeded with the usual asymptotic guesses.
    let mut x_phys = vec![0.0; n];
    let mut w_phys = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x_phys[0],
            3 => 1.91 * z - 0.91 * x_phys[1],
            _ => 2.0 * z - x_phys[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x_phys[i] = z;
        x_phys[n - 1 - i] = -z;
        w_phys[i] = 2.0 / (pp * pp);
        w_phys[n - 1 - i] = w_phys[i];
    }
    if n % 2 == 1 {
        x_phys[n / 2] = 0.0;
    }
    let norm = PI.sqrt();
    let mut nodes: Vec<f64> = x_phys.iter().map(|x| x * 2f64.sqrt()).collect();
    let mut weights: Vec<f64> = w_phys.iter().map(|w| w / norm).collect();
    // Ascending order.
    nodes.reverse();
    weights.reverse();
    Rule { nodes, weights }
}

/// Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let xm = 0.5 * (b + a);
    let xl = 0.5 * (b - a);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        nodes[i] = xm - xl * z;
        nodes[n - 1 - i] = xm + xl * z;
        weights[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    Rule { nodes, weights }
}

/// Integrates `f` over `[a, b]` with an `n`-point Gauss–Legendre rule.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let r = gauss_legendre(n, a, b);
    r.nodes.iter().zip(&r.weights).map(|(x, w)| w * f(*x)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn double_factorial_odd(k: usize) -> f64 {
        // (k-1)!! for even k: E g^k
        (1..k).step_by(2).map(|v| v as f64).product()
    }

    #[test]
    fn hermite_moments() {
        for n in [1usize, 2, 5, 10, 21, 40] {
            let r = gauss_hermite(n);
            assert_eq!(r.len(), n);
            for k in 0..(2 * n) {
                let m: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 1 { 0.0 } else { double_factorial_odd(k) };
                let scale = double_factorial_odd(k + k % 2).max(1.0);
                assert_abs_diff_eq!(m, exact, epsilon = 1e-10 * scale);
            }
            for w in r.nodes.windows(2) {
                assert!(w[0] < w[1]);
            }
        }
    }

    #[test]
    fn hermite_matches_gaussian_mgf() {
        // E e^{c g} = e^{c²/2}
        let r = gauss_hermite(21);
        for c in [0.3, 1.0, 2.0] {
            let m: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * (c * x).exp()).sum();
            assert_abs_diff_eq!(m, (c * c / 2.0).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn legendre_polynomials_exact() {
        for n in [1usize, 3, 8, 16] {
            for k in 0..(2 * n) {
                let v = integrate(|x| x.powi(k as i32), 0.0, 2.0, n);
                let exact = 2f64.powi(k as i32 + 1) / (k as f64 + 1.0);
                assert_abs_diff_eq!(v, exact, epsilon = 1e-12 * exact);
            }
        }
    }
}

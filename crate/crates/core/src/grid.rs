//! Tensor grids over `[−L, L]^D`, interpolation, and the Gaussian
//! smoothing step `x ↦ (1/m) log E exp(m f(x + √c g))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::quadrature::Rule;
use crate::symmat::{SymMat, PSD_TOL, RANK_TOL};

/// Largest spatial dimension the grid solver accepts.
pub const MAX_GRID_DIM: usize = 4;

/// Below this `m` the log-mean-exp is replaced by a plain mean.
const M_ZERO: f64 = 1e-14;

/// Uniform tensor grid `lo + i h`, `i = 0..n`, in every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dim: usize,
    pub n: usize,
    pub h: f64,
    pub lo: f64,
}

impl Geometry {
    /// Symmetric grid with spacing `h` covering at least `[−half_width, half_width]`.
    pub fn new(dim: usize, half_width: f64, h: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_GRID_DIM {
            return Err(Error::InvalidGrid(format!(
                "grid dimension {dim} outside 1..={MAX_GRID_DIM}"
            )));
        }
        if !(h > 0.0) || !(half_width > 0.0) || !h.is_finite() || !half_width.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "need positive finite L and h (got L = {half_width}, h = {h})"
            )));
        }
        let half = (half_width / h - 1e-9).ceil().max(2.0) as usize;
        let n = 2 * half + 1;
        let total = (n as f64).powi(dim as i32);
        if total > 5e7 {
            return Err(Error::InvalidGrid(format!(
                "grid with {n}^{dim} points is too large; increase h or decrease L"
            )));
        }
        Ok(Self {
            dim,
            n,
            h,
            lo: -(half as f64) * h,
        })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn half_width(&self) -> f64 {
        -self.lo
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.h
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        self.point_into(idx, &mut x);
        x
    }

    fn point_into(&self, mut idx: usize, x: &mut [f64]) {
        for k in (0..self.dim).rev() {
            x[k] = self.coord(idx % self.n);
            idx /= self.n;
        }
    }

    /// True when every coordinate lies in `[lo + margin, −lo − margin]`.
    pub fn contains(&self, x: &[f64], margin: f64) -> bool {
        x.iter().all(|&t| t >= self.lo + margin && t <= -self.lo - margin)
    }
}

/// A scalar function of `x ∈ ℝ^D`.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
}

/// Values on a [`Geometry`], row-major with the last coordinate fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFn {
    pub geometry: Geometry,
    pub values: Vec<f64>,
}

/// Per-coordinate interpolation stencil: start index and up to four weights.
#[derive(Clone, Copy)]
struct Stencil {
    start: usize,
    len: usize,
    w: [f64; 4],
}

fn stencil(g: &Geometry, t: f64) -> Stencil {
    let n = g.n;
    let u = (t - g.lo) / g.h;
    let last = (n - 1) as f64;
    if u < 0.0 {
        return Stencil { start: 0, len: 2, w: [1.0 - u, u, 0.0, 0.0] };
    }
    if u > last {
        let e = u - last;
        return Stencil { start: n - 2, len: 2, w: [-e, 1.0 + e, 0.0, 0.0] };
    }
    let r = u.round();
    if (u - r).abs() < 1e-9 {
        return Stencil { start: r as usize, len: 1, w: [1.0, 0.0, 0.0, 0.0] };
    }
    // Cubic Lagrange on i−1..i+2, shifted inward at the edges.
    let i = (u.floor() as usize).clamp(1, n - 3);
    let f = u - i as f64;
    let (a, b, c, d) = (f + 1.0, f, f - 1.0, f - 2.0);
    Stencil {
        start: i - 1,
        len: 4,
        w: [
            -b * c * d / 6.0,
            a * c * d / 2.0,
            -a * b * d / 2.0,
            a * b * c / 6.0,
        ],
    }
}

impl GridFn {
    pub fn sample(geometry: &Geometry, field: &dyn ScalarField) -> Self {
        let mut values = vec![0.0; geometry.len()];
        let g = geometry.clone();
        par::fill_range(&mut values, |idx| {
            let mut x = [0.0; MAX_GRID_DIM];
            g.point_into(idx, &mut x[..g.dim]);
            field.eval(&x[..g.dim])
        });
        Self {
            geometry: geometry.clone(),
            values,
        }
    }

    pub fn at_index(&self, idx: usize) -> f64 {
        self.values[idx]
    }
}

impl ScalarField for GridFn {
    fn dim(&self) -> usize {
        self.geometry.dim
    }

    /// Tensor cubic interpolation inside the box, linear extrapolation outside.
    fn eval(&self, x: &[f64]) -> f64 {
        let g = &self.geometry;
        let d = g.dim;
        let mut st = [Stencil { start: 0, len: 1, w: [0.0; 4] }; MAX_GRID_DIM];
        for k in 0..d {
            st[k] = stencil(g, x[k]);
        }
        let mut strides = [1usize; MAX_GRID_DIM];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * g.n;
        }
        let mut counter = [0usize; MAX_GRID_DIM];
        let mut acc = 0.0;
        loop {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..d {
                w *= st[k].w[counter[k]];
                idx += (st[k].start + counter[k]) * strides[k];
            }
            acc += w * self.values[idx];
            let mut k = d;
            loop {
                if k == 0 {
                    return acc;
                }
                k -= 1;
                counter[k] += 1;
                if counter[k] < st[k].len {
                    break;
                }
                counter[k] = 0;
            }
        }
    }
}

/// `(1/m) log Σ w_i exp(m v_i)` for weights summing to one, or `Σ w_i v_i` at `m = 0`.
pub fn log_mean_exp(values: &[f64], weights: &[f64], m: f64) -> f64 {
    if m <= M_ZERO {
        return values.iter().zip(weights).map(|(v, w)| v * w).sum();
    }
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Σ w e^{m(v − top)} = 1 + Σ w expm1(m(v − top)); keeps precision for small m.
    let s: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (m * (v - top)).exp_m1())
        .sum();
    top + s.ln_1p() / m
}

/// Same as [`log_mean_exp`] with unnormalised weights.
pub fn log_mean_exp_unnormalised(values: &[f64], weights: &[f64], m: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|w| w / total).collect();
    log_mean_exp(values, &w, m)
}

/// Principal directions `√λ v` of a PSD covariance with `λ > RANK_TOL`.
pub fn covariance_factors(cov: &SymMat) -> Result<Vec<(f64, Vec<f64>)>> {
    let e = cov.eigen();
    let scale = 1.0 + cov.max_abs();
    if let Some(&min) = e.values.first() {
        if min < -PSD_TOL * scale {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
    }
    Ok(e.values
        .iter()
        .zip(e.vectors.iter())
        .filter(|(l, _)| **l > RANK_TOL * scale)
        .map(|(l, v)| (l.sqrt(), v.clone()))
        .collect())
}

/// One Gaussian smoothing step over the whole grid.
///
/// The covariance is split along its eigenvectors and each direction is
/// handled by a separate 1-D quadrature pass. Between passes the function is
/// kept on the grid in the original (log) scale, so
/// `exp(m f_{k+1}) = E exp(m f_k(· + √λ_k g v_k))` holds exactly for the
/// nested expectation.
pub fn propagate(
    source: &dyn ScalarField,
    geometry: &Geometry,
    cov: &SymMat,
    m: f64,
    rule: &Rule,
) -> Result<GridFn> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidArgument(format!("m = {m} outside [0, 1]")));
    }
    if cov.dim() != geometry.dim {
        return Err(Error::DimensionMismatch {
            expected: geometry.dim,
            found: cov.dim(),
        });
    }
    let dirs = covariance_factors(cov)?;
    if dirs.is_empty() {
        return Ok(GridFn::sample(geometry, source));
    }
    let mut current: Option<GridFn> = None;
    for (root, v) in dirs.iter().rev() {
        let src: &dyn ScalarField = match &current {
            Some(f) => f,
            None => source,
        };
        let next = pass(src, geometry, *root, v, m, rule);
        current = Some(next);
    }
    Ok(current.expect("at least one direction"))
}

fn pass(
    src: &dyn ScalarField,
    geometry: &Geometry,
    root: f64,
    v: &[f64],
    m: f64,
    rule: &Rule,
) -> GridFn {
    let d = geometry.dim;
    let g = geometry.clone();
    let offsets: Vec<[f64; MAX_GRID_DIM]> = rule
        .nodes
        .iter()
        .map(|&z| {
            let mut o = [0.0; MAX_GRID_DIM];
            for k in 0..d {
                o[k] = root * z * v[k];
            }
            o
        })
        .collect();
    let mut values = vec![0.0; g.len()];
    par::fill_range(&mut values, |idx| {
        let mut x = [0.0; MAX_GRID_DIM];
        g.point_into(idx, &mut x[..d]);
        let mut vals = [0.0; 64];
        let nq = offsets.len();
        let mut y = [0.0; MAX_GRID_DIM];
        let mut heap;
        let buf: &mut [f64] = if nq <= 64 {
            &mut vals[..nq]
        } else {
            heap = vec![0.0; nq];
            &mut heap
        };
        for (j, o) in offsets.iter().enumerate() {
            for k in 0..d {
                y[k] = x[k] + o[k];
            }
            buf[j] = src.eval(&y[..d]);
        }
        log_mean_exp(buf, &rule.weights, m)
    });
    GridFn {
        geometry: geometry.clone(),
        values,
    }
}

/// `(1/m) log E exp(m f(x + √cov g))` at a single point, by tensor
/// quadrature over the rank directions of `cov`.
pub fn propagate_point(
    source: &dyn ScalarField,
    x: &[f64],
    cov: &SymMat,
    m: f64,
    rule: &Rule,
) -> Result<f64> {
    let dirs = covariance_factors(cov)?;
    if dirs.is_empty() {
        return Ok(source.eval(x));
    }
    let d = x.len();
    let r = dirs.len();
    let nq = rule.len();
    let total = nq.pow(r as u32);
    let mut vals = Vec::with_capacity(total);
    let mut wts = Vec::with_capacity(total);
    let mut counter = vec![0usize; r];
    let mut y = vec![0.0; d];
    for _ in 0..total {
        y.copy_from_slice(x);
        let mut w = 1.0;
        for (c, (root, v)) in counter.iter().zip(&dirs) {
            let z = rule.nodes[*c] * root;
            for k in 0..d {
                y[k] += z * v[k];
            }
            w *= rule.weights[*c];
        }
        vals.push(source.eval(&y));
        wts.push(w);
        for c in counter.iter_mut().rev() {
            *c += 1;
            if *c < nq {
                break;
            }
            *c = 0;
        }
    }
    Ok(log_mean_exp(&vals, &wts, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_hermite;
    use approx::assert_abs_diff_eq;

    struct Fn1<F: Fn(&[f64]) -> f64 + Sync>(usize, F);

    impl<F: Fn(&[f64]) -> f64 + Sync> ScalarField for Fn1<F> {
        fn dim(&self) -> usize {
            self.0
        }
        fn eval(&self, x: &[f64]) -> f64 {
            (self.1)(x)
        }
    }

    #[test]
    fn geometry_is_symmetric() {
        let g = Geometry::new(1, 3.0, 0.25).unwrap();
        assert_eq!(g.n, 25);
        assert_eq!(g.coord(12), 0.0);
        assert_eq!(g.coord(24), 3.0);
        assert!(Geometry::new(5, 3.0, 0.25).is_err());
    }

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        let g = Geometry::new(2, 2.0, 0.1).unwrap();
        let f = Fn1(2, |x: &[f64]| x[0].powi(3) - 2.0 * x[0] * x[1] + x[1].powi(2) * x[0] + 1.0);
        let grid = GridFn::sample(&g, &f);
        for x in [[0.013, -0.77], [1.93, 1.97], [-1.99, 0.5], [0.0, 0.0]] {
            assert_abs_diff_eq!(grid.eval(&x), f.eval(&x), epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_extrapolation_outside() {
        let g = Geometry::new(1, 1.0, 0.1).unwrap();
        let f = Fn1(1, |x: &[f64]| 2.0 * x[0] + 0.5);
        let grid = GridFn::sample(&g, &f);
        assert_abs_diff_eq!(grid.eval(&[3.0]), 6.5, epsilon = 1e-12);
        assert_abs_diff_eq!(grid.eval(&[-2.5]), -4.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_covariance_is_identity() {
        let g = Geometry::new(1, 4.0, 0.05).unwrap();
        let f = Fn1(1, |x: &[f64]| x[0].cosh().ln());
        let out = propagate(&f, &g, &SymMat::zeros(1), 0.5, &gauss_hermite(21)).unwrap();
        for i in 0..g.n {
            assert_eq!(out.values[i], f.eval(&[g.coord(i)]));
        }
    }

    #[test]
    fn log_cosh_moment_identity() {
        // log E cosh(x + c g) = log cosh x + c²/2
        let g = Geometry::new(1, 10.0, 0.05).unwrap();
        let f = Fn1(1, |x: &[f64]| x[0].cosh().ln());
        let c: f64 = 0.8;
        let out = propagate(&f, &g, &SymMat::scalar(c * c), 1.0, &gauss_hermite(21)).unwrap();
        for x in [-2.0, -0.3, 0.0, 1.1, 3.0] {
            let i = ((x - g.lo) / g.h).round() as usize;
            assert_abs_diff_eq!(out.values[i], x.cosh().ln() + c * c / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_of_quadratic() {
        // E (x + √v g)² = x² + v
        let g = Geometry::new(1, 5.0, 0.05).unwrap();
        let f = Fn1(1, |x: &[f64]| x[0] * x[0]);
        let out = propagate(&f, &g, &SymMat::scalar(0.7), 0.0, &gauss_hermite(21)).unwrap();
        for i in [0, 40, 100, 150, 200] {
            let x = g.coord(i);
            assert_abs_diff_eq!(out.values[i], x * x + 0.7, epsilon = 1e-11);
        }
    }

    #[test]
    fn two_dim_rotated_covariance() {
        // For f(x) = a·x, (1/m) log E exp(m a·(x + √C g)) = a·x + (m/2) aᵀCa.
        let g = Geometry::new(2, 4.0, 0.1).unwrap();
        let a = [0.3, -0.6];
        let f = Fn1(2, move |x: &[f64]| a[0] * x[0] + a[1] * x[1]);
        let cov = SymMat::from_rows(&[vec![0.5, -0.5], vec![-0.5, 0.5]]).unwrap();
        let m = 0.6;
        let out = propagate(&f, &g, &cov, m, &gauss_hermite(21)).unwrap();
        let shift = 0.5 * m * cov.quad_form(&a);
        for idx in [0usize, 500, 3000, g.len() - 1] {
            let x = g.point(idx);
            assert_abs_diff_eq!(out.values[idx], f.eval(&x) + shift, epsilon = 1e-11);
        }
        let p = propagate_point(&f, &[0.2, 0.1], &cov, m, &gauss_hermite(21)).unwrap();
        assert_abs_diff_eq!(p, f.eval(&[0.2, 0.1]) + shift, epsilon = 1e-12);
    }

    #[test]
    fn small_m_matches_mean_limit() {
        let vals = [0.3, -1.2, 2.5];
        let w = [0.2, 0.5, 0.3];
        let mean: f64 = vals.iter().zip(&w).map(|(v, w)| v * w).sum();
        assert_abs_diff_eq!(log_mean_exp(&vals, &w, 1e-9), mean, epsilon = 1e-8);
        assert_eq!(log_mean_exp(&vals, &w, 0.0), mean);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = Geometry::new(1, 2.0, 0.1).unwrap();
        let f = Fn1(1, |x: &[f64]| x[0]);
        let r = gauss_hermite(5);
        assert!(propagate(&f, &g, &SymMat::scalar(-1.0), 0.5, &r).is_err());
        assert!(propagate(&f, &g, &SymMat::scalar(1.0), 1.5, &r).is_err());
    }
}

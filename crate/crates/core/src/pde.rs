//! Levelwise Cole–Hopf solver for the Parisi PDE on a tensor grid.
//!
//! For a step CDF with jumps `q_0 ≤ … ≤ q_K` and levels `m_l`, the solution
//! on `[q_{l−1}, q_l)` is
//! `Φ(s, x) = (1/m_{l−1}) log E exp(m_{l−1} Φ(q_l, x + √(μ(q_l) − μ(s)) g))`,
//! read as a plain expectation when `m_{l−1} = 0`, with `Φ(1, ·) = φ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Geometry, GridFn, ScalarField};
use crate::par;
use crate::paths::{Cdf, DerivedPath, DiscreteCdf};
use crate::quadrature::{self, gauss_hermite, Rule};
use crate::symmat::{SymMat, PSD_TOL};

/// One support point of the base measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Finitely supported measure `P₁` on the closed unit ball of `ℝ^D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseMeasure {
    dim: usize,
    atoms: Vec<Atom>,
    normalized: bool,
}

impl BaseMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::InvalidMeasure("measure has no atoms".into()))?;
        let dim = first.point.len();
        if dim == 0 {
            return Err(Error::InvalidMeasure("atoms must have at least one coordinate".into()));
        }
        for a in &atoms {
            if a.point.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: a.point.len(),
                });
            }
            if !(a.weight > 0.0) || !a.weight.is_finite() {
                return Err(Error::InvalidMeasure(format!("atom weight {} must be positive", a.weight)));
            }
            let norm = a.point.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 + 1e-12 || !norm.is_finite() {
                return Err(Error::InvalidMeasure(format!(
                    "atom {:?} lies outside the unit ball",
                    a.point
                )));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        Ok(Self {
            dim,
            normalized: (total - 1.0).abs() <= 1e-12,
            atoms,
        })
    }

    /// Uniform on `{−1, +1}`.
    pub fn ising() -> Self {
        Self::new(vec![
            Atom { point: vec![-1.0], weight: 0.5 },
            Atom { point: vec![1.0], weight: 0.5 },
        ])
        .expect("valid preset")
    }

    /// Uniform on the standard basis `{e_1, …, e_D}`.
    pub fn potts_uniform(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        Self::new(
            (0..dim)
                .map(|k| {
                    let mut p = vec![0.0; dim];
                    p[k] = 1.0;
                    Atom { point: p, weight: 1.0 / dim as f64 }
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// True when the weights sum to one.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn max_norm(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.point.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// True unless all atoms coincide.
    pub fn is_non_dirac(&self) -> bool {
        self.atoms.iter().any(|a| a.point != self.atoms[0].point)
    }

    /// Multiplies every weight by `f(σ)`; the result is not renormalised.
    pub fn reweighted(&self, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::new(
            self.atoms
                .iter()
                .map(|a| Atom {
                    point: a.point.clone(),
                    weight: a.weight * f(&a.point),
                })
                .collect(),
        )
    }

    fn exponents(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let e: Vec<f64> = self
            .atoms
            .iter()
            .map(|a| a.weight.ln() + a.point.iter().zip(x).map(|(s, y)| s * y).sum::<f64>())
            .collect();
        let top = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (e, top)
    }

    /// `φ(x) = log Σ w exp(x·σ)`.
    pub fn phi(&self, x: &[f64]) -> f64 {
        let (e, top) = self.exponents(x);
        top + e.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
    }

    /// Gibbs probabilities `∝ w exp(x·σ)`.
    pub fn gibbs(&self, x: &[f64]) -> Vec<f64> {
        let (e, top) = self.exponents(x);
        let p: Vec<f64> = e.iter().map(|v| (v - top).exp()).collect();
        let z: f64 = p.iter().sum();
        p.into_iter().map(|v| v / z).collect()
    }

    /// `∇φ(x) = ⟨σ⟩_x`.
    pub fn grad_phi(&self, x: &[f64]) -> Vec<f64> {
        let p = self.gibbs(x);
        let mut g = vec![0.0; self.dim];
        for (a, pa) in self.atoms.iter().zip(&p) {
            for k in 0..self.dim {
                g[k] += pa * a.point[k];
            }
        }
        g
    }

    /// `∇²φ(x) = ⟨σσᵀ⟩_x − ⟨σ⟩_x⟨σ⟩_xᵀ`.
    pub fn hess_phi(&self, x: &[f64]) -> SymMat {
        let p = self.gibbs(x);
        let mean = self.grad_phi(x);
        SymMat::from_fn(self.dim, |i, j| {
            let second: f64 = self
                .atoms
                .iter()
                .zip(&p)
                .map(|(a, pa)| pa * a.point[i] * a.point[j])
                .sum();
            second - mean[i] * mean[j]
        })
    }
}

impl ScalarField for BaseMeasure {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.phi(x)
    }
}

/// Grid parameters. `half_width = None` picks the default box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_nodes")]
    pub quad_nodes: usize,
}

fn default_h() -> f64 {
    0.05
}

fn default_nodes() -> usize {
    21
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_width: None,
            h: default_h(),
            quad_nodes: default_nodes(),
        }
    }
}

impl GridSpec {
    pub fn new(half_width: Option<f64>, h: f64, quad_nodes: usize) -> Self {
        Self { half_width, h, quad_nodes }
    }

    /// `6 max|σ| (1 + √λ_max(μ(1)))`.
    pub fn default_half_width(base: &BaseMeasure, derived: &DerivedPath) -> f64 {
        let lam = derived.mu(1.0).max_eigenvalue().max(0.0);
        6.0 * base.max_norm().max(1e-3) * (1.0 + lam.sqrt())
    }

    pub fn geometry(&self, base: &BaseMeasure, derived: &DerivedPath) -> Result<Geometry> {
        if self.quad_nodes == 0 || self.quad_nodes > 200 {
            return Err(Error::InvalidGrid(format!(
                "quadrature order {} outside 1..=200",
                self.quad_nodes
            )));
        }
        let l = self
            .half_width
            .unwrap_or_else(|| Self::default_half_width(base, derived));
        Geometry::new(base.dim(), l, self.h)
    }
}

/// Either the exact terminal condition or a stored grid level.
enum Level<'a> {
    Terminal(&'a BaseMeasure),
    Grid(&'a GridFn),
}

impl Level<'_> {
    fn field(&self) -> &dyn ScalarField {
        match self {
            Level::Terminal(b) => *b,
            Level::Grid(g) => *g,
        }
    }
}

/// `Φ(q_l, ·)` on the grid for `l = 0..=K`.
#[derive(Clone, Debug)]
pub struct PdeSolution {
    base: BaseMeasure,
    derived: DerivedPath,
    alpha: DiscreteCdf,
    geometry: Geometry,
    rule: Rule,
    levels: Vec<GridFn>,
}

fn check_increment(derived: &DerivedPath, s: f64, t: f64, level: usize) -> Result<SymMat> {
    let cov = derived.increment(s, t);
    let min = cov.min_eigenvalue();
    if min < -PSD_TOL * (1.0 + cov.max_abs()) {
        return Err(Error::NonPsdIncrement {
            level,
            min_eigenvalue: min,
        });
    }
    Ok(cov)
}

/// Solves the discrete PDE for a step CDF.
pub fn solve(
    base: &BaseMeasure,
    derived: &DerivedPath,
    alpha: &DiscreteCdf,
    grid: &GridSpec,
) -> Result<PdeSolution> {
    if base.dim() != derived.dim() {
        return Err(Error::DimensionMismatch {
            expected: derived.dim(),
            found: base.dim(),
        });
    }
    let geometry = grid.geometry(base, derived)?;
    let rule = gauss_hermite(grid.quad_nodes);
    let qs = alpha.qs();
    let ms = alpha.ms();
    let k = alpha.k();
    for &m in ms {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidCdf(format!("level {m} outside [0, 1]")));
        }
    }
    let mut levels: Vec<Option<GridFn>> = vec![None; k + 1];
    levels[k] = Some(GridFn::sample(&geometry, base));
    for l in (1..=k).rev() {
        let cov = check_increment(derived, qs[l - 1], qs[l], l)?;
        let src = if l == k {
            Level::Terminal(base)
        } else {
            Level::Grid(levels[l].as_ref().expect("filled"))
        };
        let next = grid::propagate(src.field(), &geometry, &cov, ms[l - 1], &rule)?;
        levels[l - 1] = Some(next);
    }
    Ok(PdeSolution {
        base: base.clone(),
        derived: derived.clone(),
        alpha: alpha.clone(),
        geometry,
        rule,
        levels: levels.into_iter().map(|l| l.expect("filled")).collect(),
    })
}

impl PdeSolution {
    pub fn base(&self) -> &BaseMeasure {
        &self.base
    }

    pub fn derived(&self) -> &DerivedPath {
        &self.derived
    }

    pub fn alpha(&self) -> &DiscreteCdf {
        &self.alpha
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn rule(&self) -> &Rule {
        &self.rule
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    /// `Φ(q_l, ·)` on the grid.
    pub fn level(&self, l: usize) -> &GridFn {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[GridFn] {
        &self.levels
    }

    fn source(&self, l: usize) -> Level<'_> {
        if l == self.alpha.k() {
            Level::Terminal(&self.base)
        } else {
            Level::Grid(&self.levels[l])
        }
    }

    /// Where `s` sits: either exactly on a stored level, or inside
    /// `[q_{l−1}, q_l)` with `l` returned.
    fn locate(&self, s: f64) -> Located {
        let qs = self.alpha.qs();
        let k = self.alpha.k();
        if s >= 1.0 {
            return Located::Terminal;
        }
        let l = self.alpha.piece(s);
        if s == qs[l - 1] {
            Located::Stored(l - 1)
        } else {
            Located::Inside(l)
        }
        .normalise(k)
    }

    /// `Φ(s, x)`. Points outside the box use the linear extrapolation of
    /// the stored levels.
    pub fn eval(&self, s: f64, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(format!("time {s} outside [0, 1]")));
        }
        match self.locate(s) {
            Located::Terminal => Ok(self.base.phi(x)),
            Located::Stored(l) => Ok(self.levels[l].eval(x)),
            Located::Inside(l) => {
                let cov = check_increment(&self.derived, s, self.alpha.qs()[l], l)?;
                grid::propagate_point(
                    self.source(l).field(),
                    x,
                    &cov,
                    self.alpha.ms()[l - 1],
                    &self.rule,
                )
            }
        }
    }

    /// `Φ(s, ·)` on the full grid.
    pub fn slice(&self, s: f64) -> Result<GridFn> {
        match self.locate(s.clamp(0.0, 1.0)) {
            Located::Terminal => Ok(GridFn::sample(&self.geometry, &self.base)),
            Located::Stored(l) => Ok(self.levels[l].clone()),
            Located::Inside(l) => {
                let cov = check_increment(&self.derived, s, self.alpha.qs()[l], l)?;
                grid::propagate(
                    self.source(l).field(),
                    &self.geometry,
                    &cov,
                    self.alpha.ms()[l - 1],
                    &self.rule,
                )
            }
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        self.check_dim(x)?;
        if !self.geometry.contains(x, 2.0 * self.geometry.h) {
            return Err(Error::OutOfDomain { point: x.to_vec() });
        }
        Ok(())
    }

    /// Central-difference gradient with spacing `h`.
    pub fn grad(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        let f = |y: &[f64]| self.eval(s, y);
        fd_grad(&f, x, self.geometry.h)
    }

    /// Central-difference Hessian with spacing `h`.
    pub fn hess(&self, s: f64, x: &[f64]) -> Result<SymMat> {
        self.check_domain(x)?;
        let f = |y: &[f64]| self.eval(s, y);
        fd_hess(&f, x, self.geometry.h)
    }

    /// Serialisable dump of every stored level.
    pub fn export(&self) -> LevelDump {
        LevelDump {
            dim: self.geometry.dim,
            n: self.geometry.n,
            h: self.geometry.h,
            lo: self.geometry.lo,
            qs: self.alpha.qs().to_vec(),
            ms: self.alpha.ms().to_vec(),
            levels: self.levels.iter().map(|g| g.values.clone()).collect(),
        }
    }

    /// CSV with columns `level,q,x_0,…,x_{D−1},value`.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::from("level,q");
        for k in 0..d {
            out.push_str(&format!(",x_{k}"));
        }
        out.push_str(",value\n");
        for (l, g) in self.levels.iter().enumerate() {
            for idx in 0..self.geometry.len() {
                out.push_str(&format!("{l},{}", self.alpha.qs()[l]));
                for v in self.geometry.point(idx) {
                    out.push_str(&format!(",{v}"));
                }
                out.push_str(&format!(",{}\n", g.values[idx]));
            }
        }
        out
    }

    /// Largest `|∇Φ(q_l, x)|` over interior grid points and levels,
    /// by central differences of the stored values.
    pub fn max_grid_gradient(&self) -> f64 {
        let g = &self.geometry;
        let d = g.dim;
        let mut best = 0.0_f64;
        let stride = |k: usize| g.n.pow((d - 1 - k) as u32);
        for level in &self.levels {
            for idx in 0..g.len() {
                let mut sq = 0.0;
                let mut interior = true;
                let mut rem = idx;
                let mut coords = [0usize; grid::MAX_GRID_DIM];
                for k in (0..d).rev() {
                    coords[k] = rem % g.n;
                    rem /= g.n;
                }
                for k in 0..d {
                    if coords[k] == 0 || coords[k] == g.n - 1 {
                        interior = false;
                        break;
                    }
                    let st = stride(k);
                    let dv = (level.values[idx + st] - level.values[idx - st]) / (2.0 * g.h);
                    sq += dv * dv;
                }
                if interior {
                    best = best.max(sq.sqrt());
                }
            }
        }
        best
    }
}

enum Located {
    Terminal,
    Stored(usize),
    Inside(usize),
}

impl Located {
    fn normalise(self, k: usize) -> Self {
        match self {
            Located::Stored(l) if l == k => Located::Terminal,
            other => other,
        }
    }
}

pub(crate) fn fd_grad(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut y = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for k in 0..x.len() {
        y[k] = x[k] + h;
        let p = f(&y)?;
        y[k] = x[k] - h;
        let m = f(&y)?;
        y[k] = x[k];
        g[k] = (p - m) / (2.0 * h);
    }
    Ok(g)
}

pub(crate) fn fd_hess(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<SymMat> {
    let d = x.len();
    let f0 = f(x)?;
    let mut out = SymMat::zeros(d);
    let mut y = x.to_vec();
    for i in 0..d {
        y[i] = x[i] + h;
        let p = f(&y)?;
        y[i] = x[i] - h;
        let m = f(&y)?;
        y[i] = x[i];
        out.set(i, i, (p - 2.0 * f0 + m) / (h * h));
        for j in (i + 1)..d {
            let mut v = [0.0; 4];
            for (c, (si, sj)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].iter().enumerate() {
                y[i] = x[i] + si * h;
                y[j] = x[j] + sj * h;
                v[c] = f(&y)?;
            }
            y[i] = x[i];
            y[j] = x[j];
            out.set(i, j, (v[0] - v[1] - v[2] + v[3]) / (4.0 * h * h));
        }
    }
    Ok(out)
}

/// Grid dump for external tools.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelDump {
    pub dim: usize,
    pub n: usize,
    pub h: f64,
    pub lo: f64,
    pub qs: Vec<f64>,
    pub ms: Vec<f64>,
    pub levels: Vec<Vec<f64>>,
}

/// Solution for a general CDF through a staircase approximation.
#[derive(Clone, Debug)]
pub struct GeneralSolution {
    pub solution: PdeSolution,
    pub approx: DiscreteCdf,
    /// `d_𝓜` between the input CDF and its staircase.
    pub distance: f64,
    /// Lipschitz constant of `μ`.
    pub lipschitz: f64,
    /// `lipschitz · distance`, an upper bound on the sup error.
    pub budget: f64,
}

/// `d_𝓜` between a callable CDF and a step CDF, by piecewise quadrature.
pub fn distance_to(alpha: &dyn Cdf, step: &DiscreteCdf) -> f64 {
    let qs = step.qs();
    let mut total = 0.0;
    for w in qs.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let level = step.evaluate(w[0]);
        let mid = 0.5 * (w[0] + w[1]);
        for (a, b) in [(w[0], mid), (mid, w[1])] {
            total += quadrature::integrate(|s| (alpha.value(s) - level).abs(), a, b, 16);
        }
    }
    total
}

/// Solves with an `n_approx`-piece staircase approximation of `alpha`.
pub fn solve_general(
    base: &BaseMeasure,
    derived: &DerivedPath,
    alpha: &dyn Cdf,
    grid: &GridSpec,
    n_approx: usize,
) -> Result<GeneralSolution> {
    let approx = DiscreteCdf::staircase(|s| alpha.value(s), n_approx)?;
    let solution = solve(base, derived, &approx, grid)?;
    let distance = distance_to(alpha, &approx);
    let lipschitz = derived.lipschitz_mu();
    Ok(GeneralSolution {
        solution,
        approx,
        distance,
        lipschitz,
        budget: lipschitz * distance,
    })
}

/// Summary of the finite-difference residual of
/// `∂_s Φ + ½⟨γ, ∇²Φ + α ∇Φ∇Φᵀ⟩`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualReport {
    pub points: usize,
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// PDE residual at the given `(s, x)` against the CDF `alpha`.
/// The time step stays inside the constancy piece containing `s`.
pub fn residual_check(
    sol: &PdeSolution,
    alpha: &dyn Cdf,
    points: &[(f64, Vec<f64>)],
) -> Result<ResidualReport> {
    let h = sol.geometry.h;
    let qs = sol.alpha.qs().to_vec();
    let values = par::map_range(points.len(), |i| -> Result<Option<f64>> {
        let (s, x) = &points[i];
        let s = *s;
        let l = sol.alpha.piece(s);
        let ds = 0.5 * (s - qs[l - 1]).min(qs[l] - s).min(h);
        if ds < 1e-6 {
            return Ok(None);
        }
        let dt = (sol.eval(s + ds, x)? - sol.eval(s - ds, x)?) / (2.0 * ds);
        let f = |y: &[f64]| sol.eval(s, y);
        let g = fd_grad(&f, x, h)?;
        let hs = fd_hess(&f, x, h)?;
        let gamma = sol.derived.gamma(s);
        let a = alpha.value(s);
        let inner = hs.axpy(a, &SymMat::outer(&g))?;
        Ok(Some(dt + 0.5 * gamma.dot(&inner)?))
    });
    let mut max_abs = 0.0_f64;
    let mut sum = 0.0;
    let mut count = 0;
    for v in values {
        if let Some(r) = v? {
            max_abs = max_abs.max(r.abs());
            sum += r.abs();
            count += 1;
        }
    }
    Ok(ResidualReport {
        points: count,
        max_abs,
        mean_abs: if count > 0 { sum / count as f64 } else { 0.0 },
    })
}

/// Monte Carlo estimate of `E e^{V(s, x)}` with
/// `V = Φ(1, x + M(1) − M(s)) − Σ_l (m_l − m_{l−1}) Φ(s ∨ q_l, x + M(s ∨ q_l) − M(s))`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpMartingale {
    pub s: f64,
    pub x: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

pub fn exp_martingale_check(
    sol: &PdeSolution,
    s: f64,
    x: &[f64],
    paths: usize,
    seed: u64,
) -> Result<ExpMartingale> {
    sol.check_dim(x)?;
    let qs = sol.alpha.qs();
    let jumps = sol.alpha.jumps();
    let k = sol.alpha.k();
    let d = sol.dim();
    let phi_s = sol.eval(s, x)?;
    // Times after s at which the path is observed, with their increment roots.
    let l0 = if s >= 1.0 { k + 1 } else { sol.alpha.piece(s) };
    let mut times = Vec::new();
    let mut roots = Vec::new();
    let mut prev = s;
    for &q in qs.iter().take(k + 1).skip(l0) {
        let cov = sol.derived.increment(prev, q);
        roots.push(cov.sqrt_psd_tol(PSD_TOL * (1.0 + cov.max_abs()))?);
        times.push(q);
        prev = q;
    }
    // Weight on Φ(s, x): all jumps at q_l ≤ s.
    let w_s: f64 = (0..l0.min(k + 1)).map(|l| jumps[l]).sum();
    let chunk = 256;
    let chunks = paths.div_ceil(chunk);
    let sums = par::map_range(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let count = chunk.min(paths - c * chunk);
        let mut acc = (0.0, 0.0);
        let mut y = vec![0.0; d];
        let mut g = vec![0.0; d];
        for _ in 0..count {
            y.copy_from_slice(x);
            let mut v = -w_s * phi_s;
            for (j, (&t, root)) in times.iter().zip(&roots).enumerate() {
                for gi in g.iter_mut() {
                    *gi = StandardNormal.sample(&mut rng);
                }
                let inc = root.mul_vec(&g);
                for i in 0..d {
                    y[i] += inc[i];
                }
                let l = l0 + j;
                let val = if t >= 1.0 {
                    sol.base.phi(&y)
                } else {
                    sol.levels[l].eval(&y)
                };
                v -= jumps[l] * val;
                if l == k {
                    v += val;
                }
            }
            if times.is_empty() {
                v += phi_s;
            }
            let e = v.exp();
            acc.0 += e;
            acc.1 += e * e;
        }
        acc
    });
    let (sum, sq) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = paths as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Ok(ExpMartingale {
        s,
        x: x.to_vec(),
        mean,
        stderr: (var / n).sqrt(),
    })
}

/// Sup-distance between two solutions at `s = 0` over grid points in the
/// inner half of the box, against `d_𝓜` of their CDFs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzSample {
    pub sup_diff: f64,
    pub distance: f64,
    pub ratio: f64,
}

pub fn lipschitz_sample(
    base: &BaseMeasure,
    derived: &DerivedPath,
    a0: &DiscreteCdf,
    a1: &DiscreteCdf,
    grid: &GridSpec,
) -> Result<LipschitzSample> {
    let s0 = solve(base, derived, a0, grid)?;
    let s1 = solve(base, derived, a1, grid)?;
    let g = s0.geometry();
    let inner = 0.5 * g.half_width();
    let mut sup_diff = 0.0_f64;
    for idx in 0..g.len() {
        let x = g.point(idx);
        if x.iter().all(|v| v.abs() <= inner) {
            sup_diff = sup_diff.max((s0.level(0).values[idx] - s1.level(0).values[idx]).abs());
        }
    }
    let distance = a0.distance(a1);
    Ok(LipschitzSample {
        sup_diff,
        distance,
        ratio: if distance > 0.0 { sup_diff / distance } else { 0.0 },
    })
}

/// `½Φ_{α₀}(s, x₀) + ½Φ_{α₁}(s, x₁) − Φ_{α_½}(s, x_½)` with `α_½` and
/// `x_½` the midpoints.
#[allow(clippy::too_many_arguments)]
pub fn joint_midpoint_slack(
    base: &BaseMeasure,
    derived: &DerivedPath,
    a0: &DiscreteCdf,
    a1: &DiscreteCdf,
    s: f64,
    x0: &[f64],
    x1: &[f64],
    grid: &GridSpec,
) -> Result<f64> {
    let mid = a0.mix(a1, 0.5)?;
    let xm: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| 0.5 * (a + b)).collect();
    let p0 = solve(base, derived, a0, grid)?.eval(s, x0)?;
    let p1 = solve(base, derived, a1, grid)?.eval(s, x1)?;
    let pm = solve(base, derived, &mid, grid)?.eval(s, &xm)?;
    Ok(0.5 * p0 + 0.5 * p1 - pm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MixtureModel;
    use crate::paths::MatrixPath;
    use approx::assert_abs_diff_eq;

    fn sk(beta: f64) -> DerivedPath {
        let m = MixtureModel::sk(beta).unwrap();
        DerivedPath::new(&m, &MatrixPath::linear(SymMat::scalar(1.0)).unwrap()).unwrap()
    }

    /// `E f(c g)` by a fine trapezoid rule on `[−12, 12]`, independent of
    /// the Gauss–Hermite code under test.
    fn gauss_expect(f: impl Fn(f64) -> f64, c: f64) -> f64 {
        let n = 24_000;
        let a = 12.0;
        let dx = 2.0 * a / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let g = -a + i as f64 * dx;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * f(c * g) * (-0.5 * g * g).exp();
        }
        s * dx / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn terminal_examples() {
        let p = BaseMeasure::potts_uniform(2).unwrap();
        assert_abs_diff_eq!(p.phi(&[0.0, 0.0]), 0.0, epsilon = 1e-15);
        let t: f64 = 0.7;
        assert_abs_diff_eq!(p.phi(&[t, 0.0]), ((t.exp() + 1.0) / 2.0).ln(), epsilon = 1e-15);
        let i = BaseMeasure::ising();
        for x in [-3.0f64, 0.2, 5.0] {
            assert_abs_diff_eq!(i.phi(&[x]), x.cosh().ln(), epsilon = 1e-14);
        }
    }

    #[test]
    fn base_validation() {
        assert!(BaseMeasure::new(vec![]).is_err());
        assert!(BaseMeasure::new(vec![Atom { point: vec![1.5], weight: 1.0 }]).is_err());
        assert!(BaseMeasure::new(vec![Atom { point: vec![0.5], weight: 0.0 }]).is_err());
        assert!(!BaseMeasure::new(vec![Atom { point: vec![0.5], weight: 1.0 }]).unwrap().is_non_dirac());
    }

    #[test]
    fn one_step_ising_closed_form() {
        // Tilted base: φ̃ = log cosh − β². One-step α at q gives
        // Φ(q, y) = log cosh y − β² q and Φ(0, x) = E log cosh(x + β√(2q) g) − β² q.
        for (beta, q) in [(0.3, 0.25), (0.8, 0.5), (0.8, 1.0)] {
            let d = sk(beta);
            let base = BaseMeasure::ising().reweighted(|_| (-beta * beta).exp()).unwrap();
            let alpha = DiscreteCdf::one_step(q).unwrap();
            let sol = solve(&base, &d, &alpha, &GridSpec::default()).unwrap();
            for y in [-1.0f64, 0.0, 0.4] {
                let at_q = sol.eval(q, &[y]).unwrap();
                assert_abs_diff_eq!(at_q, y.cosh().ln() - beta * beta * q, epsilon = 1e-8);
                let c = beta * (2.0 * q).sqrt();
                let expect = gauss_expect(|g| (y + g).cosh().ln(), c) - beta * beta * q;
                assert_abs_diff_eq!(sol.eval(0.0, &[y]).unwrap(), expect, epsilon = 2e-5);
            }
        }
    }

    #[test]
    fn static_path_returns_phi() {
        let m = MixtureModel::sk(1.0).unwrap();
        let d = DerivedPath::new(&m, &MatrixPath::constant(SymMat::scalar(0.5)).unwrap()).unwrap();
        let alpha = DiscreteCdf::new(vec![0.0, 0.4, 1.0], vec![0.2, 0.7, 1.0]).unwrap();
        let sol = solve(&BaseMeasure::ising(), &d, &alpha, &GridSpec::default()).unwrap();
        for s in [0.0, 0.3, 0.4, 0.9] {
            for x in [-0.5f64, 1.2] {
                assert_abs_diff_eq!(sol.eval(s, &[x]).unwrap(), x.cosh().ln(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn ising_terminal_gradient_is_tanh() {
        let sol = solve(&BaseMeasure::ising(), &sk(0.5), &DiscreteCdf::one_step(0.5).unwrap(), &GridSpec::default()).unwrap();
        for x in [-1.0f64, 0.3, 2.0] {
            let g = sol.grad(1.0, &[x]).unwrap()[0];
            assert_abs_diff_eq!(g, x.tanh(), epsilon = 1e-3);
        }
    }

    #[test]
    fn out_of_domain_gradient() {
        let sol = solve(&BaseMeasure::ising(), &sk(0.5), &DiscreteCdf::one_step(0.5).unwrap(), &GridSpec::default()).unwrap();
        let far = sol.geometry().half_width() + 1.0;
        assert!(matches!(sol.grad(0.0, &[far]), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn potts_symmetry_and_convexity() {
        let m = MixtureModel::new(2, &[(2, 1.0)]).unwrap();
        let d = DerivedPath::new(&m, &MatrixPath::psi_star(2).unwrap()).unwrap();
        let alpha = DiscreteCdf::new(vec![0.0, 0.5, 1.0], vec![0.3, 0.6, 1.0]).unwrap();
        let grid = GridSpec::new(Some(6.0), 0.1, 21);
        let sol = solve(&BaseMeasure::potts_uniform(2).unwrap(), &d, &alpha, &grid).unwrap();
        for t in [-0.5, 0.0, 0.8] {
            let g = sol.grad(0.2, &[t, t]).unwrap();
            assert_abs_diff_eq!(g[0], g[1], epsilon = 1e-10);
        }
        for (a, b) in [(0.3, -0.4), (1.0, 0.2)] {
            let v1 = sol.eval(0.3, &[a, b]).unwrap();
            let v2 = sol.eval(0.3, &[b, a]).unwrap();
            assert_abs_diff_eq!(v1, v2, epsilon = 1e-9);
            assert!(sol.hess(0.3, &[a, b]).unwrap().min_eigenvalue() > -1e-6);
        }
        assert!(sol.max_grid_gradient() <= 1.0 + 1e-6);
    }

    #[test]
    fn csv_and_json_export() {
        let sol = solve(
            &BaseMeasure::ising(),
            &sk(0.5),
            &DiscreteCdf::one_step(0.5).unwrap(),
            &GridSpec::new(Some(1.0), 0.25, 11),
        )
        .unwrap();
        let csv = sol.to_csv();
        assert!(csv.starts_with("level,q,x_0,value\n"));
        assert_eq!(csv.lines().count(), 1 + 3 * 9);
        let dump = serde_json::to_string(&sol.export()).unwrap();
        let back: LevelDump = serde_json::from_str(&dump).unwrap();
        assert_eq!(back.levels.len(), 3);
    }

    #[test]
    fn discrete_input_to_general_solver_is_identical() {
        let d = sk(0.8);
        let alpha = DiscreteCdf::new(vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![0.1, 0.2, 0.5, 0.6, 1.0]).unwrap();
        let grid = GridSpec::default();
        let direct = solve(&BaseMeasure::ising(), &d, &alpha, &grid).unwrap();
        let general = solve_general(&BaseMeasure::ising(), &d, &alpha, &grid, 4).unwrap();
        assert_eq!(general.distance, 0.0);
        assert_eq!(direct.eval(0.0, &[0.0]).unwrap(), general.solution.eval(0.0, &[0.0]).unwrap());
    }
}

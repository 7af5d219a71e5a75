//! Monte Carlo check of the stochastic control representation of `Φ`.
//!
//! The optimally controlled diffusion is
//! `dX = α γ ∇Φ(r, X) dr + √γ dB` on `[s, t]`, and for an adapted control
//! `u` the payoff is
//! `Φ(t, x + ∫ αγu dr + ∫ √γ dB) − ½∫ α ⟨γ, uuᵀ⟩ dr`.
//! All controls are driven by the same Brownian increments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFn, ScalarField};
use crate::par;
use crate::pde::{fd_grad, fd_hess, PdeSolution};
use crate::quadrature::gauss_legendre;
use crate::symmat::SymMat;

pub const DEFAULT_STEPS: usize = 256;
pub const DEFAULT_PATHS: usize = 4096;
const CHUNK: usize = 64;

#[derive(Clone, Debug)]
pub struct ControlProblem<'a> {
    pub sol: &'a PdeSolution,
    pub s: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl<'a> ControlProblem<'a> {
    pub fn new(sol: &'a PdeSolution, s: f64, t: f64, x: Vec<f64>, seed: u64) -> Self {
        Self {
            sol,
            s,
            t,
            x,
            n_paths: DEFAULT_PATHS,
            n_steps: DEFAULT_STEPS,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 <= self.s && self.s < self.t && self.t <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "window [{}, {}] is not inside [0, 1]",
                self.s, self.t
            )));
        }
        if self.n_steps < 8 {
            return Err(Error::InvalidArgument(format!("n_steps {} < 8", self.n_steps)));
        }
        if self.n_paths < 2 {
            return Err(Error::InvalidArgument("need at least two paths".into()));
        }
        if self.x.len() != self.sol.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.sol.dim(),
                found: self.x.len(),
            });
        }
        if !self.sol.geometry().contains(&self.x, 2.0 * self.sol.geometry().h) {
            return Err(Error::OutOfDomain { point: self.x.clone() });
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.t - self.s) / self.n_steps as f64
    }
}

/// `Φ(r, ·)` at one step time.
enum Slice<'a> {
    Grid(GridFn),
    Exact(&'a PdeSolution),
}

impl Slice<'_> {
    fn grad(&self, x: &[f64], h: f64) -> Vec<f64> {
        match self {
            Slice::Grid(g) => fd_grad(&|y: &[f64]| Ok(g.eval(y)), x, h).expect("infallible"),
            Slice::Exact(sol) => sol.base().grad_phi(x),
        }
    }

    fn hess(&self, x: &[f64], h: f64) -> SymMat {
        match self {
            Slice::Grid(g) => fd_hess(&|y: &[f64]| Ok(g.eval(y)), x, h).expect("infallible"),
            Slice::Exact(sol) => sol.base().hess_phi(x),
        }
    }
}

fn slice_at(sol: &PdeSolution, r: f64) -> Result<Slice<'_>> {
    if r >= 1.0 {
        Ok(Slice::Exact(sol))
    } else {
        Ok(Slice::Grid(sol.slice(r)?))
    }
}

/// Simulated optimal paths with everything needed to price other controls.
#[derive(Clone, Debug)]
pub struct Trajectories {
    pub dim: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub x0: Vec<f64>,
    /// `α(r_j)` at each step.
    pub alpha: Vec<f64>,
    /// `γ(r_j)` at each step.
    pub gamma: Vec<SymMat>,
    /// `u*(r_j)` per path, flattened as `[path][step][coord]`.
    pub u: Vec<f64>,
    /// `√γ(r_j) ΔB_j`, same layout as `u`.
    pub noise: Vec<f64>,
    /// `X(t)` per path, `[path][coord]`.
    pub x_final: Vec<f64>,
    /// `∇Φ(t, X(t))` per path.
    pub grad_final: Vec<f64>,
    /// `∇²Φ(t, X(t))` per path.
    pub hess_final: Vec<SymMat>,
    /// `∫ α ∇²Φ γ ∇²Φ dr` per path.
    pub hess_integral: Vec<SymMat>,
    /// Largest drift of `Σ_k X_k` away from its start, over paths and steps.
    pub max_sum_drift: f64,
    /// Paths that left the grid box with margin `2h`.
    pub exits: usize,
    /// `Φ(t, ·)` for pricing.
    slice_t: SliceT,
}

#[derive(Clone, Debug)]
enum SliceT {
    Grid(GridFn),
    Exact,
}

struct PathOut {
    u: Vec<f64>,
    noise: Vec<f64>,
    x: Vec<f64>,
    grad: Vec<f64>,
    hess: SymMat,
    hint: SymMat,
    sum_drift: f64,
    exited: bool,
}

/// Euler–Maruyama for the optimally controlled diffusion.
pub fn simulate_optimal(cp: &ControlProblem) -> Result<Trajectories> {
    cp.validate()?;
    let sol = cp.sol;
    let d = sol.dim();
    let n = cp.n_steps;
    let dt = cp.dt();
    let h = sol.geometry().h;
    let times: Vec<f64> = (0..=n).map(|j| cp.s + j as f64 * dt).collect();
    let alpha: Vec<f64> = times[..n].iter().map(|&r| sol.alpha().evaluate(r)).collect();
    let gamma: Vec<SymMat> = times[..n].iter().map(|&r| sol.derived().gamma(r)).collect();
    let mut roots = Vec::with_capacity(n);
    for g in &gamma {
        let mut root = SymMat::zeros(d);
        for (sq, v) in g.principal_factors()? {
            root = root.axpy(sq, &SymMat::outer(&v))?;
        }
        roots.push(root);
    }
    let slices: Vec<Slice> = times[..n]
        .iter()
        .map(|&r| slice_at(sol, r))
        .collect::<Result<_>>()?;
    let last = slice_at(sol, cp.t)?;
    let x0_sum: f64 = cp.x.iter().sum();
    let chunks = cp.n_paths.div_ceil(CHUNK);
    let sqdt = dt.sqrt();
    let outs = par::map_range(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(cp.seed);
        rng.set_stream(c as u64);
        let count = CHUNK.min(cp.n_paths - c * CHUNK);
        let mut res = Vec::with_capacity(count);
        let mut g = vec![0.0; d];
        for _ in 0..count {
            let mut x = cp.x.clone();
            let mut u = Vec::with_capacity(n * d);
            let mut noise = Vec::with_capacity(n * d);
            let mut hint = SymMat::zeros(d);
            let mut sum_drift = 0.0_f64;
            let mut exited = false;
            for j in 0..n {
                let grad = slices[j].grad(&x, h);
                if alpha[j] > 0.0 {
                    let hs = slices[j].hess(&x, h);
                    let hgh = hs.sandwich(&gamma[j]).expect("same dim");
                    hint = hint.axpy(alpha[j] * dt, &hgh).expect("same dim");
                }
                for gi in g.iter_mut() {
                    *gi = sqdt * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                }
                let dw = roots[j].mul_vec(&g);
                let drift = gamma[j].mul_vec(&grad);
                for k in 0..d {
                    x[k] += alpha[j] * drift[k] * dt + dw[k];
                }
                u.extend_from_slice(&grad);
                noise.extend_from_slice(&dw);
                sum_drift = sum_drift.max((x.iter().sum::<f64>() - x0_sum).abs());
                if !sol.geometry().contains(&x, 2.0 * h) {
                    exited = true;
                }
            }
            res.push(PathOut {
                u,
                noise,
                grad: last.grad(&x, h),
                hess: last.hess(&x, h),
                x,
                hint,
                sum_drift,
                exited,
            });
        }
        res
    });
    let mut tr = Trajectories {
        dim: d,
        n_paths: cp.n_paths,
        n_steps: n,
        dt,
        times,
        x0: cp.x.clone(),
        alpha,
        gamma,
        u: Vec::with_capacity(cp.n_paths * n * d),
        noise: Vec::with_capacity(cp.n_paths * n * d),
        x_final: Vec::with_capacity(cp.n_paths * d),
        grad_final: Vec::with_capacity(cp.n_paths * d),
        hess_final: Vec::with_capacity(cp.n_paths),
        hess_integral: Vec::with_capacity(cp.n_paths),
        max_sum_drift: 0.0,
        exits: 0,
        slice_t: match last {
            Slice::Grid(g) => SliceT::Grid(g),
            Slice::Exact(_) => SliceT::Exact,
        },
    };
    for p in outs.into_iter().flatten() {
        tr.u.extend(p.u);
        tr.noise.extend(p.noise);
        tr.x_final.extend(p.x);
        tr.grad_final.extend(p.grad);
        tr.hess_final.push(p.hess);
        tr.hess_integral.push(p.hint);
        tr.max_sum_drift = tr.max_sum_drift.max(p.sum_drift);
        tr.exits += p.exited as usize;
    }
    Ok(tr)
}

/// Adapted controls priced against the recorded optimal paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Control {
    Optimal,
    /// `u* + c` for a constant vector `c`.
    Shift(Vec<f64>),
    /// `f · u*`.
    Scale(f64),
    Zero,
}

impl Control {
    fn apply(&self, ustar: &[f64], out: &mut [f64]) {
        match self {
            Control::Optimal => out.copy_from_slice(ustar),
            Control::Shift(c) => {
                for k in 0..out.len() {
                    out[k] = ustar[k] + c[k];
                }
            }
            Control::Scale(f) => {
                for k in 0..out.len() {
                    out[k] = f * ustar[k];
                }
            }
            Control::Zero => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlValue {
    pub control: Control,
    pub mean: f64,
    pub stderr: f64,
    /// Mean and standard error of the paired difference `value(u*) − value(u)`.
    pub gap_mean: f64,
    pub gap_stderr: f64,
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl Trajectories {
    fn phi_t(&self, sol: &PdeSolution, x: &[f64]) -> f64 {
        match &self.slice_t {
            SliceT::Grid(g) => g.eval(x),
            SliceT::Exact => sol.base().phi(x),
        }
    }

    /// Per-path payoff of `control`.
    pub fn payoffs(&self, sol: &PdeSolution, control: &Control) -> Result<Vec<f64>> {
        let d = self.dim;
        if let Control::Shift(c) = control {
            if c.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: c.len() });
            }
        }
        let n = self.n_steps;
        let out = par::map_range(self.n_paths, |p| {
            let mut x = self.x0.clone();
            let mut cost = 0.0;
            let mut u = vec![0.0; d];
            for j in 0..n {
                let off = (p * n + j) * d;
                control.apply(&self.u[off..off + d], &mut u);
                let gu = self.gamma[j].mul_vec(&u);
                let a = self.alpha[j];
                for k in 0..d {
                    x[k] += a * gu[k] * self.dt + self.noise[off + k];
                }
                cost += 0.5 * a * self.dt * u.iter().zip(&gu).map(|(p, q)| p * q).sum::<f64>();
            }
            self.phi_t(sol, &x) - cost
        });
        Ok(out)
    }

    /// Prices each control, pairing against `u*` on the same paths.
    pub fn control_values(&self, sol: &PdeSolution, controls: &[Control]) -> Result<Vec<ControlValue>> {
        let opt = self.payoffs(sol, &Control::Optimal)?;
        let mut out = Vec::with_capacity(controls.len());
        for c in controls {
            let v = if *c == Control::Optimal { opt.clone() } else { self.payoffs(sol, c)? };
            let (mean, stderr) = mean_stderr(&v);
            let diff: Vec<f64> = opt.iter().zip(&v).map(|(a, b)| a - b).collect();
            let (gap_mean, gap_stderr) = mean_stderr(&diff);
            out.push(ControlValue {
                control: c.clone(),
                mean,
                stderr,
                gap_mean,
                gap_stderr,
            });
        }
        Ok(out)
    }
}

/// `(mean, stderr)` of a control's payoff.
pub fn control_value(cp: &ControlProblem, control: &Control) -> Result<(f64, f64)> {
    let tr = simulate_optimal(cp)?;
    let v = tr.payoffs(cp.sol, control)?;
    Ok(mean_stderr(&v))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowCheck {
    /// `∫_s^t α tr γ dr`.
    pub integral: f64,
    /// `1 / C`.
    pub bound: f64,
    pub integral_below_bound: bool,
    pub alpha_s_positive: bool,
    /// Both conditions together.
    pub holds: bool,
}

/// Window condition for uniqueness of the optimal control, with `C` an
/// upper bound of the form `∇²Φ ≼ C·Id`.
pub fn uniqueness_window_check(cp: &ControlProblem, c_hess: f64) -> Result<WindowCheck> {
    if !(0.0 <= cp.s && cp.s < cp.t && cp.t <= 1.0) {
        return Err(Error::InvalidArgument(format!("window [{}, {}] is not inside [0, 1]", cp.s, cp.t)));
    }
    let sol = cp.sol;
    let mut cuts: Vec<f64> = vec![cp.s, cp.t];
    cuts.extend(sol.alpha().qs().iter().copied().filter(|&q| q > cp.s && q < cp.t));
    cuts.extend(sol.derived().breaks_in(cp.s, cp.t));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let nodes = (sol.derived().model().max_power() as usize).max(8);
    let mut integral = 0.0;
    for w in cuts.windows(2) {
        let a = sol.alpha().evaluate(w[0]);
        if a == 0.0 {
            continue;
        }
        let rule = gauss_legendre(nodes, w[0], w[1]);
        for (r, wt) in rule.nodes.iter().zip(&rule.weights) {
            integral += wt * a * sol.derived().gamma(*r).trace();
        }
    }
    let bound = if c_hess > 0.0 { 1.0 / c_hess } else { f64::INFINITY };
    let below = integral < bound;
    let alpha_s_positive = sol.alpha().evaluate(cp.s) > 0.0;
    Ok(WindowCheck {
        integral,
        bound,
        integral_below_bound: below,
        alpha_s_positive,
        holds: below && alpha_s_positive,
    })
}

/// `√D · max |∇²Φ(q_l, x)|` over stored levels and interior grid points,
/// by central differences of the grid values.
pub fn hessian_bound(sol: &PdeSolution) -> f64 {
    let g = sol.geometry();
    let d = g.dim;
    let h = g.h;
    let mut best = 0.0_f64;
    for level in sol.levels() {
        let vals = par::map_range(g.len(), |idx| {
            let x = g.point(idx);
            if !g.contains(&x, 2.0 * h) {
                return 0.0;
            }
            fd_hess(&|y: &[f64]| Ok(level.eval(y)), &x, h)
                .map(|m| m.frobenius_norm())
                .unwrap_or(0.0)
        });
        best = vals.into_iter().fold(best, f64::max);
    }
    (d as f64).sqrt() * best
}

/// Mean with standard error, per matrix entry or vector coordinate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntryCheck {
    pub index: (usize, usize),
    pub expected: f64,
    pub mean: f64,
    pub stderr: f64,
}

impl EntryCheck {
    pub fn within(&self, k_stderr: f64, tol: f64) -> bool {
        (self.mean - self.expected).abs() <= k_stderr * self.stderr + tol
    }
}

/// `E ∇Φ(t, X(t))` against `∇Φ(s, x)`.
pub fn gradient_martingale(cp: &ControlProblem, tr: &Trajectories) -> Result<Vec<EntryCheck>> {
    let d = tr.dim;
    let start = slice_at(cp.sol, cp.s)?.grad(&cp.x, cp.sol.geometry().h);
    Ok((0..d)
        .map(|k| {
            let v: Vec<f64> = (0..tr.n_paths).map(|p| tr.grad_final[p * d + k]).collect();
            let (mean, stderr) = mean_stderr(&v);
            EntryCheck {
                index: (k, k),
                expected: start[k],
                mean,
                stderr,
            }
        })
        .collect())
}

/// `E[∇²Φ(t, X(t)) + ∫ α ∇²Φ γ ∇²Φ dr]` against `∇²Φ(s, x)`.
pub fn hessian_identity(cp: &ControlProblem, tr: &Trajectories) -> Result<Vec<EntryCheck>> {
    let d = tr.dim;
    let start = slice_at(cp.sol, cp.s)?.hess(&cp.x, cp.sol.geometry().h);
    let mut out = Vec::new();
    for i in 0..d {
        for j in i..d {
            let v: Vec<f64> = (0..tr.n_paths)
                .map(|p| tr.hess_final[p].get(i, j) + tr.hess_integral[p].get(i, j))
                .collect();
            let (mean, stderr) = mean_stderr(&v);
            out.push(EntryCheck {
                index: (i, j),
                expected: start.get(i, j),
                mean,
                stderr,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdeReport {
    pub s: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub phi_sx: f64,
    pub controls: Vec<ControlValue>,
    /// `value(u*)` matches `Φ(s, x)` within `3·stderr + tol`.
    pub value_matches: bool,
    /// No tested control beats `u*` by more than `3·stderr + tol`.
    pub optimal_not_beaten: bool,
    pub gradient: Vec<EntryCheck>,
    pub hessian: Vec<EntryCheck>,
    pub window: WindowCheck,
    pub exits: usize,
    pub max_sum_drift: f64,
}

/// Runs the optimal control, the given perturbations, and the derivative
/// identities, with tolerance `tol` added to every `3·stderr` band.
pub fn run_checks(cp: &ControlProblem, perturbations: &[Control], tol: f64) -> Result<SdeReport> {
    let tr = simulate_optimal(cp)?;
    let mut controls = vec![Control::Optimal];
    controls.extend(perturbations.iter().cloned());
    let values = tr.control_values(cp.sol, &controls)?;
    let phi_sx = cp.sol.eval(cp.s, &cp.x)?;
    let opt = &values[0];
    let value_matches = (opt.mean - phi_sx).abs() <= 3.0 * opt.stderr + tol;
    let optimal_not_beaten = values[1..]
        .iter()
        .all(|v| v.gap_mean >= -(3.0 * v.gap_stderr + tol));
    let window = uniqueness_window_check(cp, hessian_bound(cp.sol))?;
    Ok(SdeReport {
        s: cp.s,
        t: cp.t,
        x: cp.x.clone(),
        n_paths: cp.n_paths,
        n_steps: cp.n_steps,
        seed: cp.seed,
        phi_sx,
        controls: values,
        value_matches,
        optimal_not_beaten,
        gradient: gradient_martingale(cp, &tr)?,
        hessian: hessian_identity(cp, &tr)?,
        window,
        exits: tr.exits,
        max_sum_drift: tr.max_sum_drift,
    })
}

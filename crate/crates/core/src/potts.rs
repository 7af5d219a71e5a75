//! The Potts specialisation: uniform base on the standard basis, the
//! symmetric path `Ψ*`, and the algebra of its covariance increments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional;
use crate::model::MixtureModel;
use crate::optimize::{self, ConvexityReport, OptimizeConfig};
use crate::paths::{DerivedPath, MatrixPath};
use crate::pde::{self, BaseMeasure, GridSpec, PdeSolution};
use crate::symmat::SymMat;

/// Tolerance for the exact matrix identities.
pub const IDENTITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct PottsSetup {
    pub dim: usize,
    pub model: MixtureModel,
    pub base: BaseMeasure,
    pub psi_star: MatrixPath,
    pub z: SymMat,
}

impl PottsSetup {
    pub fn new(dim: usize, betas: &[(u32, f64)]) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("Potts needs D >= 2, got {dim}")));
        }
        let model = MixtureModel::new(dim, betas)?;
        let psi_star = MatrixPath::psi_star(dim)?;
        let z = psi_star.z().clone();
        Ok(Self {
            dim,
            model,
            base: BaseMeasure::potts_uniform(dim)?,
            psi_star,
            z,
        })
    }

    pub fn derived(&self) -> Result<DerivedPath> {
        DerivedPath::new(&self.model, &self.psi_star)
    }

    /// True when only the quadratic term is present.
    pub fn is_quadratic_only(&self) -> bool {
        self.model.components().iter().all(|c| c.p == 2 || c.beta == 0.0)
    }

    /// `w = (1, …, 1)`.
    pub fn w(&self) -> Vec<f64> {
        vec![1.0; self.dim]
    }

    /// `v_k = D e_k − w`.
    pub fn v(&self, k: usize) -> Vec<f64> {
        let mut v = vec![-1.0; self.dim];
        v[k] += self.dim as f64;
        v
    }

    /// `Ψ*'(s) = (1/D) Id − (1/D²) 𝟙`, constant in `s`.
    pub fn psi_dot(&self) -> SymMat {
        let d = self.dim as f64;
        SymMat::identity(self.dim)
            .scale(1.0 / d)
            .axpy(-1.0 / (d * d), &SymMat::ones(self.dim))
            .expect("same dim")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaIdentities {
    pub dim: usize,
    pub beta2: f64,
    pub gamma: SymMat,
    /// `|γ(s) − (2β²/D²)(D Id − 𝟙)|` over sampled `s`.
    pub closed_form_err: f64,
    /// `|γ − (2β²/D³) Σ v_k v_kᵀ|`.
    pub sum_vv_err: f64,
    /// `|γ² − (2β²/D) γ|`.
    pub square_err: f64,
    /// `|γ w|`.
    pub kernel_err: f64,
    /// `|Σ v_k v_kᵀ − (D² Id − D 𝟙)|`.
    pub vv_total_err: f64,
    /// `|Ψ∘Ψ' − (s(D−1)/D³) Id − ((1−s)/D²) Ψ'|` over sampled `s`.
    pub psi_psidot_err: f64,
    pub passed: bool,
}

const S_SAMPLES: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

fn psi_psidot_err(setup: &PottsSetup) -> f64 {
    let d = setup.dim as f64;
    let dot = setup.psi_dot();
    S_SAMPLES
        .iter()
        .map(|&s| {
            let lhs = setup.psi_star.value(s).hadamard(&setup.psi_star.derivative(s)).expect("dim");
            let rhs = SymMat::identity(setup.dim)
                .scale(s * (d - 1.0) / (d * d * d))
                .axpy((1.0 - s) / (d * d), &dot)
                .expect("dim");
            lhs.sub(&rhs).expect("dim").frobenius_norm()
        })
        .fold(0.0, f64::max)
}

/// Identities for the quadratic Potts model along `Ψ*`.
pub fn gamma_identities(setup: &PottsSetup) -> Result<GammaIdentities> {
    if !setup.is_quadratic_only() {
        return Err(Error::InvalidModel(
            "the closed-form covariance identities hold for the quadratic term alone".into(),
        ));
    }
    let dim = setup.dim;
    let d = dim as f64;
    let b2 = setup.model.beta(2);
    let c = 2.0 * b2 * b2;
    let derived = setup.derived()?;
    let closed = SymMat::identity(dim)
        .scale(d)
        .sub(&SymMat::ones(dim))?
        .scale(c / (d * d));
    let mut closed_form_err = 0.0_f64;
    for &s in &S_SAMPLES {
        closed_form_err = closed_form_err.max(derived.gamma(s).sub(&closed)?.frobenius_norm());
    }
    let gamma = derived.gamma(0.5);
    let mut vv = SymMat::zeros(dim);
    for k in 0..dim {
        vv = vv.add(&SymMat::outer(&setup.v(k)))?;
    }
    let vv_expect = SymMat::identity(dim).scale(d * d).sub(&SymMat::ones(dim).scale(d))?;
    let vv_total_err = vv.sub(&vv_expect)?.frobenius_norm();
    let sum_vv_err = gamma.sub(&vv.scale(c / (d * d * d)))?.frobenius_norm();
    let square_err = gamma.square().sub(&gamma.scale(c / d))?.frobenius_norm();
    let kernel_err = gamma.mul_vec(&setup.w()).iter().map(|v| v * v).sum::<f64>().sqrt();
    let psi_psidot_err = psi_psidot_err(setup);
    let passed = [closed_form_err, sum_vv_err, square_err, kernel_err, vv_total_err, psi_psidot_err]
        .iter()
        .all(|&e| e <= IDENTITY_TOL);
    Ok(GammaIdentities {
        dim,
        beta2: b2,
        gamma,
        closed_form_err,
        sum_vv_err,
        square_err,
        kernel_err,
        vv_total_err,
        psi_psidot_err,
        passed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaSample {
    pub s: f64,
    pub min_eig_gamma: f64,
    /// Smallest eigenvalue of `p(p−1)β_p² Ψ^{∘(p−3)} ∘ (Ψ∘Ψ')` per power `p ≥ 3`.
    pub min_eig_lower: Vec<(u32, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaPd {
    pub samples: Vec<GammaSample>,
    /// `γ(0)` is positive semi-definite.
    pub gamma0_psd: bool,
    /// `γ(s)` and every lower bound are positive definite for `s ∈ (0, 1]`.
    pub pd_on_open: bool,
    /// `γ(s) − bound` is positive semi-definite at every sample.
    pub bound_holds: bool,
    pub psi_psidot_err: f64,
}

/// Positive definiteness of `γ` along `Ψ*` when a power `p ≥ 3` is present.
pub fn gamma_pd_check(setup: &PottsSetup) -> Result<GammaPd> {
    let high: Vec<(u32, f64)> = setup
        .model
        .components()
        .iter()
        .filter(|c| c.p >= 3 && c.beta > 0.0)
        .map(|c| (c.p, c.beta))
        .collect();
    if high.is_empty() {
        return Err(Error::InvalidModel("no component with p >= 3".into()));
    }
    let derived = setup.derived()?;
    let mut samples = Vec::new();
    let mut gamma0_psd = true;
    let mut pd_on_open = true;
    let mut bound_holds = true;
    for &s in &S_SAMPLES {
        let psi = setup.psi_star.value(s);
        let pp = psi.hadamard(&setup.psi_star.derivative(s))?;
        let gamma = derived.gamma(s);
        let min_g = gamma.min_eigenvalue();
        let mut lowers = Vec::new();
        for &(p, beta) in &high {
            let bound = psi
                .hadamard_pow(p - 3)
                .hadamard(&pp)?
                .scale((p * (p - 1)) as f64 * beta * beta);
            let lam = bound.min_eigenvalue();
            lowers.push((p, lam));
            if s > 0.0 && lam <= 0.0 {
                pd_on_open = false;
            }
            if !gamma.sub(&bound)?.is_psd(IDENTITY_TOL) {
                bound_holds = false;
            }
        }
        if s == 0.0 {
            gamma0_psd = min_g >= -IDENTITY_TOL;
        } else if min_g <= 0.0 {
            pd_on_open = false;
        }
        samples.push(GammaSample {
            s,
            min_eig_gamma: min_g,
            min_eig_lower: lowers,
        });
    }
    Ok(GammaPd {
        samples,
        gamma0_psd,
        pd_on_open,
        bound_holds,
        psi_psidot_err: psi_psidot_err(setup),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathInvariants {
    /// `min_s λ_min(Ψ*(s) − (s/D) Id)`.
    pub lower_bound_slack: f64,
    /// `min_x xᵀΨ*'x` over random `x`.
    pub min_quadratic: f64,
    /// `max_x |xᵀΨ*'x − (Σx²/D − (Σx/D)²)|`.
    pub jensen_err: f64,
}

pub fn path_invariants(setup: &PottsSetup, samples: usize, seed: u64) -> PathInvariants {
    let d = setup.dim as f64;
    let lower_bound_slack = S_SAMPLES
        .iter()
        .map(|&s| {
            setup
                .psi_star
                .value(s)
                .sub(&SymMat::identity(setup.dim).scale(s / d))
                .expect("dim")
                .min_eigenvalue()
        })
        .fold(f64::INFINITY, f64::min);
    let dot = setup.psi_dot();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_quadratic = f64::INFINITY;
    let mut jensen_err = 0.0_f64;
    for _ in 0..samples {
        let x: Vec<f64> = (0..setup.dim).map(|_| 3.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let q = dot.quad_form(&x);
        let sq: f64 = x.iter().map(|v| v * v).sum();
        let sum: f64 = x.iter().sum();
        min_quadratic = min_quadratic.min(q);
        jensen_err = jensen_err.max((q - (sq / d - (sum / d).powi(2))).abs());
    }
    PathInvariants {
        lower_bound_slack,
        min_quadratic,
        jensen_err,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegenerateDirections {
    pub points: usize,
    /// `max |wᵀ∇²φ(x)w|`, also over `y = 3w`.
    pub max_kernel: f64,
    /// `min_k v_kᵀ∇²φ(x)v_k`.
    pub min_vk: f64,
    /// `min yᵀ∇²φ(x)y / |y|²` over random `y` not parallel to `w`.
    pub min_off_kernel: f64,
    /// `min_k v_kᵀ∇²Φ(s, x)v_k` over sampled interior `(s, x)`, when a
    /// solution was supplied.
    pub min_vk_pde: Option<f64>,
    pub passed: bool,
}

/// Kernel tolerance for `wᵀ∇²φw`.
pub const KERNEL_TOL: f64 = 1e-10;

/// Kernel of the softmax Hessian, and positivity along `v_k`, at random `x`.
/// With `sol`, also checks `v_kᵀ∇²Φ v_k > 0` at interior points of the grid.
pub fn degenerate_direction_checks(
    setup: &PottsSetup,
    points: usize,
    seed: u64,
    sol: Option<&PdeSolution>,
) -> Result<DegenerateDirections> {
    let dim = setup.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = setup.w();
    let w3: Vec<f64> = w.iter().map(|v| 3.0 * v).collect();
    let mut max_kernel = 0.0_f64;
    let mut min_vk = f64::INFINITY;
    let mut min_off = f64::INFINITY;
    for _ in 0..points {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect();
        let h = setup.base.hess_phi(&x);
        max_kernel = max_kernel.max(h.quad_form(&w).abs()).max(h.quad_form(&w3).abs());
        for k in 0..dim {
            min_vk = min_vk.min(h.quad_form(&setup.v(k)));
        }
        // Random direction with its w-component removed, plus a random
        // multiple of w back in.
        let mut y: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = y.iter().sum::<f64>() / dim as f64;
        y.iter_mut().for_each(|v| *v -= mean);
        let r: f64 = rng.random_range(-2.0..2.0);
        y.iter_mut().for_each(|v| *v += r);
        let norm2: f64 = y.iter().map(|v| v * v).sum();
        min_off = min_off.min(h.quad_form(&y) / norm2);
    }
    let min_vk_pde = match sol {
        None => None,
        Some(sol) => {
            let g = sol.geometry();
            let inner = 0.5 * g.half_width();
            let mut best = f64::INFINITY;
            for i in 0..points.min(40) {
                let s = (i % 10) as f64 / 10.0;
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-inner..inner)).collect();
                let h = sol.hess(s, &x)?;
                for k in 0..dim {
                    best = best.min(h.quad_form(&setup.v(k)));
                }
            }
            Some(best)
        }
    };
    let passed = max_kernel <= KERNEL_TOL
        && min_vk > 0.0
        && min_off > 0.0
        && min_vk_pde.is_none_or(|v| v > 0.0);
    Ok(DegenerateDirections {
        points,
        max_kernel,
        min_vk,
        min_off_kernel: min_off,
        min_vk_pde,
        passed,
    })
}

/// `−½ ∇ξ(z)·e_k e_kᵀ = −½ Σ_p p β_p² D^{1−p}`, the same for every atom.
pub fn expected_tilt_shift(setup: &PottsSetup) -> f64 {
    let d = setup.dim as f64;
    -0.5 * setup
        .model
        .components()
        .iter()
        .map(|c| c.p as f64 * c.beta * c.beta * d.powi(1 - c.p as i32))
        .sum::<f64>()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StartResult {
    pub start: Vec<f64>,
    pub m: Vec<f64>,
    pub value: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvexityExperiment {
    pub tilt_shift_expected: f64,
    /// `max |Φ̃ − Φ − shift|` over stored grid values.
    pub tilt_shift_err: f64,
    pub convexity: ConvexityReport,
    pub starts: Vec<StartResult>,
    /// Largest coordinate gap between the minimisers found.
    pub m_spread: f64,
    pub value_spread: f64,
}

/// Tilt shift, midpoint convexity along random pairs, and multi-start
/// minimisation, all on the jump grid `q_grid`.
#[allow(clippy::too_many_arguments)]
pub fn potts_convexity_experiment(
    setup: &PottsSetup,
    q_grid: &[f64],
    pairs: usize,
    starts: usize,
    seed: u64,
    grid: &GridSpec,
) -> Result<ConvexityExperiment> {
    let derived = setup.derived()?;
    let tilted = functional::tilt(&setup.base, &setup.model, &setup.z)?;
    let k = q_grid.len().saturating_sub(1);
    let probe = crate::paths::DiscreteCdf::new(q_grid.to_vec(), {
        let mut ms: Vec<f64> = (0..k).map(|l| (l as f64 + 0.5) / k as f64).collect();
        ms.push(1.0);
        ms
    })?;
    let plain = pde::solve(&setup.base, &derived, &probe, grid)?;
    let tilt_sol = pde::solve(&tilted, &derived, &probe, grid)?;
    let shift = expected_tilt_shift(setup);
    let mut tilt_shift_err = 0.0_f64;
    for (a, b) in plain.levels().iter().zip(tilt_sol.levels()) {
        for (u, v) in a.values.iter().zip(&b.values) {
            tilt_shift_err = tilt_shift_err.max((v - u - shift).abs());
        }
    }
    let convexity = optimize::certify_convexity(
        &setup.model,
        &setup.psi_star,
        &setup.base,
        q_grid,
        pairs,
        seed,
        grid,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut results = Vec::with_capacity(starts);
    for _ in 0..starts {
        let start = optimize::random_levels(&mut rng, k);
        let cfg = OptimizeConfig {
            start: Some(start.clone()),
            ..OptimizeConfig::new(q_grid.to_vec())
        };
        let res = optimize::minimize(&setup.model, &setup.psi_star, &setup.base, &cfg, grid)?;
        results.push(StartResult {
            start,
            m: res.alpha.ms()[..k].to_vec(),
            value: res.value.total,
            converged: res.converged,
        });
    }
    let mut m_spread = 0.0_f64;
    let mut value_spread = 0.0_f64;
    for a in &results {
        for b in &results {
            value_spread = value_spread.max((a.value - b.value).abs());
            for (x, y) in a.m.iter().zip(&b.m) {
                m_spread = m_spread.max((x - y).abs());
            }
        }
    }
    Ok(ConvexityExperiment {
        tilt_shift_expected: shift,
        tilt_shift_err,
        convexity,
        starts: results,
        m_spread,
        value_spread,
    })
}

/// A grid suited to the Potts experiments in `D ≤ 3`.
pub fn default_grid(dim: usize) -> GridSpec {
    match dim {
        0..=2 => GridSpec::new(Some(6.0), 0.1, 15),
        _ => GridSpec::new(Some(5.0), 0.25, 9),
    }
}

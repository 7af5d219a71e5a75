//! Minimisation of `m ↦ ℱ(Ψ, α_m)` over monotone level vectors on a fixed
//! jump grid, by projected gradient descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{self, FunctionalValue};
use crate::model::MixtureModel;
use crate::par;
use crate::paths::{DiscreteCdf, MatrixPath};
use crate::pde::{BaseMeasure, GridSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Step shrink factor per backtrack.
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    /// Jump locations `0 = q_0 ≤ q_1 < … < q_K = 1`.
    pub q_grid: Vec<f64>,
    #[serde(default = "default_tol_f")]
    pub tol_f: f64,
    #[serde(default = "default_tol_m")]
    pub tol_m: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub line_search: LineSearch,
    /// Starting levels `m_0..m_{K−1}`; uniform spacing when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
}

fn default_tol_f() -> f64 {
    1e-12
}
fn default_tol_m() -> f64 {
    1e-7
}
fn default_max_iters() -> usize {
    500
}
fn default_fd_step() -> f64 {
    1e-3
}

impl OptimizeConfig {
    pub fn new(q_grid: Vec<f64>) -> Self {
        Self {
            q_grid,
            tol_f: default_tol_f(),
            tol_m: default_tol_m(),
            max_iters: default_max_iters(),
            fd_step: default_fd_step(),
            line_search: LineSearch::default(),
            start: None,
        }
    }

    /// Evenly spaced jumps `q_l = l/K`.
    pub fn uniform(k: usize) -> Self {
        Self::new((0..=k).map(|l| l as f64 / k as f64).collect())
    }

    fn validate(&self) -> Result<()> {
        let k = self.q_grid.len().saturating_sub(1);
        DiscreteCdf::new(self.q_grid.clone(), vec![1.0; k + 1])?;
        if !(self.fd_step > 0.0 && self.fd_step < 0.5) {
            return Err(Error::InvalidArgument(format!("fd_step {} outside (0, 0.5)", self.fd_step)));
        }
        if let Some(s) = &self.start {
            if s.len() != k {
                return Err(Error::DimensionMismatch { expected: k, found: s.len() });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub m: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub alpha: DiscreteCdf,
    pub value: FunctionalValue,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub iterations: usize,
}

impl OptimizeResult {
    /// CSV with columns `iter,value,grad_norm,m_0,…,m_{K−1}`.
    pub fn trace_csv(&self) -> String {
        let k = self.alpha.k();
        let mut out = String::from("iter,value,grad_norm");
        for l in 0..k {
            out.push_str(&format!(",m_{l}"));
        }
        out.push('\n');
        for row in &self.trace {
            out.push_str(&format!("{},{:.17e},{:.17e}", row.iter, row.value, row.grad_norm));
            for m in &row.m {
                out.push_str(&format!(",{m:.17e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Euclidean projection onto the monotone cone (pool adjacent violators).
pub fn isotonic(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let n = na + nb;
            *blocks.last_mut().expect("nonempty") = ((a * na as f64 + b * nb as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, n)| std::iter::repeat_n(v, n))
        .collect()
}

/// Projection onto `{0 ≤ x_1 ≤ … ≤ x_n ≤ 1}`.
pub fn project(y: &[f64]) -> Vec<f64> {
    isotonic(y).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// `ℱ` as a function of the free levels on a fixed jump grid.
pub struct Objective<'a> {
    pub model: &'a MixtureModel,
    pub psi: &'a MatrixPath,
    pub base: &'a BaseMeasure,
    pub grid: &'a GridSpec,
    pub q_grid: &'a [f64],
}

impl Objective<'_> {
    fn alpha(&self, m: &[f64]) -> DiscreteCdf {
        let mut ms = m.to_vec();
        ms.push(1.0);
        DiscreteCdf::unchecked(self.q_grid.to_vec(), ms)
    }

    /// Accepts any levels in `[0, 1]`, monotone or not.
    pub fn value(&self, m: &[f64]) -> Result<f64> {
        Ok(self.full(m)?.total)
    }

    pub fn full(&self, m: &[f64]) -> Result<FunctionalValue> {
        functional::evaluate(self.model, self.psi, &self.alpha(m), self.base, self.grid)
    }

    /// Central differences with the stencil clipped to `[0, 1]`.
    pub fn gradient(&self, m: &[f64], step: f64) -> Result<Vec<f64>> {
        let k = m.len();
        let probes = par::map_range(2 * k, |j| {
            let i = j / 2;
            let mut y = m.to_vec();
            y[i] = if j % 2 == 0 {
                (m[i] + step).min(1.0)
            } else {
                (m[i] - step).max(0.0)
            };
            self.value(&y).map(|v| (v, y[i]))
        });
        let mut g = vec![0.0; k];
        for i in 0..k {
            let (fp, xp) = probes[2 * i].clone()?;
            let (fm, xm) = probes[2 * i + 1].clone()?;
            g[i] = (fp - fm) / (xp - xm);
        }
        Ok(g)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn projected_gradient_norm(m: &[f64], g: &[f64]) -> f64 {
    let y: Vec<f64> = m.iter().zip(g).map(|(a, b)| a - b).collect();
    let p = project(&y);
    norm(&m.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>())
}

pub fn minimize(
    model: &MixtureModel,
    psi: &MatrixPath,
    base: &BaseMeasure,
    cfg: &OptimizeConfig,
    grid: &GridSpec,
) -> Result<OptimizeResult> {
    cfg.validate()?;
    let k = cfg.q_grid.len() - 1;
    let obj = Objective {
        model,
        psi,
        base,
        grid,
        q_grid: &cfg.q_grid,
    };
    let start = cfg
        .start
        .clone()
        .unwrap_or_else(|| (0..k).map(|l| (l as f64 + 0.5) / k as f64).collect());
    let mut m = project(&start);
    let mut f = obj.value(&m)?;
    let mut g = obj.gradient(&m, cfg.fd_step)?;
    let mut pg = projected_gradient_norm(&m, &g);
    let mut trace = vec![TraceRow {
        iter: 0,
        value: f,
        grad_norm: pg,
        m: m.clone(),
    }];
    let mut step = 1.0;
    let mut converged = pg < cfg.tol_m;
    let mut iter = 0;
    while !converged && iter < cfg.max_iters {
        iter += 1;
        let mut t = step;
        let mut accepted = None;
        for _ in 0..=cfg.line_search.max_backtracks {
            let y: Vec<f64> = m.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let cand = project(&y);
            let dir: Vec<f64> = cand.iter().zip(&m).map(|(a, b)| a - b).collect();
            let decrease: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            if norm(&dir) == 0.0 {
                break;
            }
            let fc = obj.value(&cand)?;
            if fc <= f + cfg.line_search.armijo * decrease {
                accepted = Some((cand, fc));
                break;
            }
            t *= cfg.line_search.shrink;
        }
        let Some((cand, fc)) = accepted else {
            // No descent along the projected direction at any tested step.
            converged = pg < 10.0 * cfg.tol_m.max(cfg.fd_step * cfg.fd_step);
            break;
        };
        let g_new = obj.gradient(&cand, cfg.fd_step)?;
        // Barzilai–Borwein step for the next iteration.
        let s: Vec<f64> = cand.iter().zip(&m).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-6, 1e6) } else { (2.0 * t).min(1e6) };
        let df = f - fc;
        m = cand;
        f = fc;
        g = g_new;
        pg = projected_gradient_norm(&m, &g);
        trace.push(TraceRow {
            iter,
            value: f,
            grad_norm: pg,
            m: m.clone(),
        });
        if pg < cfg.tol_m || df.abs() < cfg.tol_f {
            converged = true;
        }
    }
    let alpha = DiscreteCdf::new(cfg.q_grid.clone(), {
        let mut ms = m.clone();
        ms.push(1.0);
        ms
    })?;
    let value = obj.full(&m)?;
    Ok(OptimizeResult {
        alpha,
        value,
        trace,
        converged,
        iterations: iter,
    })
}

/// Random feasible level vector: sorted uniforms.
pub fn random_levels(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairSlack {
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
    /// `½ℱ(α₀) + ½ℱ(α₁) − ℱ(α_{1/2})`.
    pub slack: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub pairs: Vec<PairSlack>,
    /// Minimum over distinct pairs; `None` if every pair was degenerate.
    pub min_slack: Option<f64>,
    pub identical_excluded: usize,
}

/// Midpoint convexity of `ℱ` along random pairs of level vectors on `q_grid`.
pub fn certify_convexity(
    model: &MixtureModel,
    psi: &MatrixPath,
    base: &BaseMeasure,
    q_grid: &[f64],
    pairs: usize,
    seed: u64,
    grid: &GridSpec,
) -> Result<ConvexityReport> {
    DiscreteCdf::new(q_grid.to_vec(), vec![1.0; q_grid.len()])?;
    let k = q_grid.len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs)
        .map(|_| (random_levels(&mut rng, k), random_levels(&mut rng, k)))
        .collect();
    certify_pairs(model, psi, base, q_grid, &draws, grid)
}

/// Same as [`certify_convexity`] on given pairs.
pub fn certify_pairs(
    model: &MixtureModel,
    psi: &MatrixPath,
    base: &BaseMeasure,
    q_grid: &[f64],
    draws: &[(Vec<f64>, Vec<f64>)],
    grid: &GridSpec,
) -> Result<ConvexityReport> {
    let obj = Objective {
        model,
        psi,
        base,
        grid,
        q_grid,
    };
    let slacks = par::map_range(draws.len(), |i| -> Result<PairSlack> {
        let (a, b) = &draws[i];
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let slack = 0.5 * obj.value(a)? + 0.5 * obj.value(b)? - obj.value(&mid)?;
        Ok(PairSlack {
            m0: a.clone(),
            m1: b.clone(),
            slack,
        })
    });
    let mut out = Vec::with_capacity(slacks.len());
    let mut min_slack: Option<f64> = None;
    let mut identical = 0;
    for s in slacks {
        let s = s?;
        if s.m0 == s.m1 {
            identical += 1;
        } else {
            min_slack = Some(min_slack.map_or(s.slack, |v: f64| v.min(s.slack)));
        }
        out.push(s);
    }
    Ok(ConvexityReport {
        pairs: out,
        min_slack,
        identical_excluded: identical,
    })
}

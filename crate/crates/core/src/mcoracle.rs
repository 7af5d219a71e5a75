//! Nested Monte Carlo evaluation of the cascade recursion
//! `X_{l−1} = (1/m_{l−1}) log E_{g_l} exp(m_{l−1} X_l)`, `X_K = φ`.
//!
//! Shares no numerical code with the grid solver beyond the matrix square
//! root, so agreement between the two is a meaningful check.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::paths::{DerivedPath, DiscreteCdf};
use crate::pde::BaseMeasure;
use crate::symmat::{SymMat, PSD_TOL};

/// Leaves per replication used to pick default widths.
pub const DEFAULT_LEAF_BUDGET: usize = 1 << 18;
pub const DEFAULT_REPLICATIONS: usize = 32;

#[derive(Clone, Debug)]
pub struct NestedSampler {
    alpha: DiscreteCdf,
    base: BaseMeasure,
    roots: Vec<Option<SymMat>>,
    widths: Vec<usize>,
    seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub widths: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
}

impl NestedSampler {
    /// `widths[l − 1]` is the branching factor at level `l = 1..=K`.
    /// `None` spreads [`DEFAULT_LEAF_BUDGET`] evenly over the levels
    /// with a non-zero covariance increment.
    pub fn new(
        alpha: &DiscreteCdf,
        derived: &DerivedPath,
        base: &BaseMeasure,
        widths: Option<Vec<usize>>,
        seed: u64,
    ) -> Result<Self> {
        if base.dim() != derived.dim() {
            return Err(Error::DimensionMismatch {
                expected: derived.dim(),
                found: base.dim(),
            });
        }
        let qs = alpha.qs();
        let k = alpha.k();
        let mut roots = Vec::with_capacity(k);
        for l in 1..=k {
            let cov = derived.increment(qs[l - 1], qs[l]);
            let min = cov.min_eigenvalue();
            let scale = 1.0 + cov.max_abs();
            if min < -PSD_TOL * scale {
                return Err(Error::NonPsdIncrement {
                    level: l,
                    min_eigenvalue: min,
                });
            }
            if cov.max_abs() <= PSD_TOL * scale {
                roots.push(None);
            } else {
                roots.push(Some(cov.sqrt_psd_tol(PSD_TOL * scale)?));
            }
        }
        let active = roots.iter().filter(|r| r.is_some()).count();
        let widths = match widths {
            Some(w) => {
                if w.len() != k {
                    return Err(Error::InvalidArgument(format!(
                        "expected {k} widths, got {}",
                        w.len()
                    )));
                }
                for (l, &n) in w.iter().enumerate() {
                    if n == 0 || (n < 2 && alpha.ms()[l] > 0.0 && roots[l].is_some()) {
                        return Err(Error::InvalidArgument(format!(
                            "width {n} at level {} is too small",
                            l + 1
                        )));
                    }
                }
                w
            }
            None => {
                let per = if active == 0 {
                    1
                } else {
                    ((DEFAULT_LEAF_BUDGET as f64).powf(1.0 / active as f64).floor() as usize).max(2)
                };
                roots.iter().map(|r| if r.is_some() { per } else { 1 }).collect()
            }
        };
        Ok(Self {
            alpha: alpha.clone(),
            base: base.clone(),
            roots,
            widths,
            seed,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    fn recurse(&self, l: usize, y: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        let k = self.alpha.k();
        if l > k {
            return self.base.phi(y);
        }
        let m = self.alpha.ms()[l - 1];
        let Some(root) = &self.roots[l - 1] else {
            return self.recurse(l + 1, y, rng);
        };
        let d = y.len();
        let n = self.widths[l - 1];
        let mut g = vec![0.0; d];
        let mut next = vec![0.0; d];
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            for gi in g.iter_mut() {
                *gi = StandardNormal.sample(rng);
            }
            let inc = root.mul_vec(&g);
            for i in 0..d {
                next[i] = y[i] + inc[i];
            }
            vals.push(self.recurse(l + 1, &next, rng));
        }
        fold(&vals, m)
    }

    /// Replicated estimate of `Φ(0, x)`. Replication `r` draws from the
    /// ChaCha stream `r` of the seed, so results do not depend on threading.
    pub fn estimate_phi0(&self, x: &[f64], replications: usize) -> Result<Estimate> {
        if replications < 2 {
            return Err(Error::InvalidArgument("need at least two replications".into()));
        }
        if x.len() != self.base.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.base.dim(),
                found: x.len(),
            });
        }
        if self.roots.iter().all(|r| r.is_none()) {
            return Ok(Estimate {
                mean: self.base.phi(x),
                stderr: 0.0,
                widths: self.widths.clone(),
                replications,
                seed: self.seed,
            });
        }
        let reps = par::map_range(replications, |r| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(r as u64);
            self.recurse(1, x, &mut rng)
        });
        let n = reps.len() as f64;
        let mean = reps.iter().sum::<f64>() / n;
        let var = reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Estimate {
            mean,
            stderr: (var / n).sqrt(),
            widths: self.widths.clone(),
            replications,
            seed: self.seed,
        })
    }
}

/// `(1/m) log mean exp(m v)`, or the mean at `m = 0`.
fn fold(vals: &[f64], m: f64) -> f64 {
    let n = vals.len() as f64;
    if m <= 0.0 {
        return vals.iter().sum::<f64>() / n;
    }
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = vals.iter().map(|v| (m * (v - top)).exp()).sum();
    top + (s / n).ln() / m
}

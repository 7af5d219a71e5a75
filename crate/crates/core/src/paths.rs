//! Order parameters: step CDFs `α`, piecewise-linear matrix paths `Ψ`,
//! their composition `Ψ∘α⁻¹`, and the derived `μ = ∇ξ∘Ψ`, `γ = μ'`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MixtureModel;
use crate::symmat::{SymMat, PSD_TOL};

const ORDER_TOL: f64 = 1e-12;

/// `α = Σ_{l=0}^{K} (m_l − m_{l−1}) 𝟙_{[q_l, ∞)}` restricted to `[0, 1]`.
///
/// `qs = [q_0, …, q_K]` with `0 = q_0 ≤ q_1 < … < q_K = 1` and
/// `ms = [m_0, …, m_K]` with `0 ≤ m_0 ≤ … ≤ m_K = 1`.
/// Repeated levels are allowed so that a fixed jump grid can carry any
/// monotone level vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CdfSpec", into = "CdfSpec")]
pub struct DiscreteCdf {
    qs: Vec<f64>,
    ms: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CdfSpec {
    pub qs: Vec<f64>,
    pub ms: Vec<f64>,
}

impl TryFrom<CdfSpec> for DiscreteCdf {
    type Error = Error;

    fn try_from(s: CdfSpec) -> Result<Self> {
        DiscreteCdf::new(s.qs, s.ms)
    }
}

impl From<DiscreteCdf> for CdfSpec {
    fn from(a: DiscreteCdf) -> Self {
        CdfSpec { qs: a.qs, ms: a.ms }
    }
}

impl DiscreteCdf {
    pub fn new(qs: Vec<f64>, ms: Vec<f64>) -> Result<Self> {
        Self::validate_qs(&qs)?;
        if ms.len() != qs.len() {
            return Err(Error::InvalidCdf(format!(
                "qs has {} entries but ms has {}",
                qs.len(),
                ms.len()
            )));
        }
        if ms.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidCdf("levels must be finite".into()));
        }
        if ms[0] < 0.0 {
            return Err(Error::InvalidCdf(format!("m_0 = {} is negative", ms[0])));
        }
        for l in 1..ms.len() {
            if ms[l] < ms[l - 1] - ORDER_TOL {
                return Err(Error::InvalidCdf(format!(
                    "levels must satisfy 0 <= m_0 <= ... <= m_K = 1, but m_{} = {} < m_{} = {}",
                    l,
                    ms[l],
                    l - 1,
                    ms[l - 1]
                )));
            }
        }
        if (ms[ms.len() - 1] - 1.0).abs() > ORDER_TOL {
            return Err(Error::InvalidCdf(format!(
                "last level m_K must equal 1, got {}",
                ms[ms.len() - 1]
            )));
        }
        let mut ms = ms;
        let k = ms.len() - 1;
        ms[k] = 1.0;
        for l in 1..ms.len() {
            ms[l] = ms[l].max(ms[l - 1]);
        }
        Ok(Self { qs, ms })
    }

    fn validate_qs(qs: &[f64]) -> Result<()> {
        if qs.len() < 2 {
            return Err(Error::InvalidCdf("need at least q_0 = 0 and q_K = 1".into()));
        }
        if qs.iter().any(|q| !q.is_finite()) {
            return Err(Error::InvalidCdf("jump locations must be finite".into()));
        }
        if qs[0] != 0.0 {
            return Err(Error::InvalidCdf(format!("q_0 must be 0, got {}", qs[0])));
        }
        if qs[1] < qs[0] {
            return Err(Error::InvalidCdf("q_1 must be >= q_0".into()));
        }
        for l in 2..qs.len() {
            if qs[l] <= qs[l - 1] {
                return Err(Error::InvalidCdf(format!(
                    "jump locations must satisfy 0 = q_0 <= q_1 < ... < q_K = 1, but q_{} = {} <= q_{} = {}",
                    l,
                    qs[l],
                    l - 1,
                    qs[l - 1]
                )));
            }
        }
        if qs[qs.len() - 1] != 1.0 {
            return Err(Error::InvalidCdf(format!(
                "last jump location q_K must equal 1, got {}",
                qs[qs.len() - 1]
            )));
        }
        Ok(())
    }

    /// Levels on a fixed jump grid with no validation of their order.
    /// Used for finite-difference probes that may step outside the
    /// monotone cone.
    pub(crate) fn unchecked(qs: Vec<f64>, ms: Vec<f64>) -> Self {
        Self { qs, ms }
    }

    /// `𝟙_{[q, ∞)}` on `[0, 1]`.
    pub fn one_step(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidCdf(format!("jump location {q} outside [0, 1]")));
        }
        if q == 1.0 {
            Self::new(vec![0.0, 1.0], vec![0.0, 1.0])
        } else if q == 0.0 {
            Self::new(vec![0.0, 1.0], vec![1.0, 1.0])
        } else {
            Self::new(vec![0.0, q, 1.0], vec![0.0, 1.0, 1.0])
        }
    }

    /// Staircase approximation of a monotone `f: [0,1] → [0,1]` with `n`
    /// equal pieces, using the value at each piece midpoint.
    /// The `d_𝓜` error is at most `(f(1) − f(0)) / n`.
    pub fn staircase(f: impl Fn(f64) -> f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("staircase needs at least one piece".into()));
        }
        let qs: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        let mut ms = Vec::with_capacity(n + 1);
        let mut prev = 0.0_f64;
        for j in 0..n {
            let v = f((j as f64 + 0.5) / n as f64).clamp(0.0, 1.0).max(prev);
            ms.push(v);
            prev = v;
        }
        ms.push(1.0);
        Self::new(qs, ms)
    }

    /// Replaces the levels, keeping the jump grid.
    pub fn with_levels(&self, levels: &[f64]) -> Result<Self> {
        if levels.len() + 1 != self.qs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.qs.len() - 1,
                found: levels.len(),
            });
        }
        let mut ms = levels.to_vec();
        ms.push(1.0);
        Self::new(self.qs.clone(), ms)
    }

    pub fn qs(&self) -> &[f64] {
        &self.qs
    }

    pub fn ms(&self) -> &[f64] {
        &self.ms
    }

    /// Number of levels `K` (the index of `q_K = 1`).
    pub fn k(&self) -> usize {
        self.qs.len() - 1
    }

    /// Free levels `m_0, …, m_{K−1}`.
    pub fn levels(&self) -> &[f64] {
        &self.ms[..self.ms.len() - 1]
    }

    /// `α(s)`, right-continuous.
    pub fn evaluate(&self, s: f64) -> f64 {
        if s >= 1.0 {
            return 1.0;
        }
        let mut v = 0.0;
        for (q, m) in self.qs.iter().zip(&self.ms) {
            if *q <= s {
                v = *m;
            } else {
                break;
            }
        }
        v
    }

    /// Index `l ≥ 1` with `s ∈ [q_{l−1}, q_l)`; `K` for `s ≥ 1`.
    pub fn piece(&self, s: f64) -> usize {
        let k = self.k();
        (1..=k).find(|&l| s < self.qs[l]).unwrap_or(k)
    }

    /// Left-continuous inverse, with `α⁻¹(0) = q_0` and `α⁻¹(1) = 1`.
    pub fn quantile(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.qs[0];
        }
        if s >= 1.0 {
            return 1.0;
        }
        let mut prev = 0.0;
        for (q, m) in self.qs.iter().zip(&self.ms) {
            if prev < s && s <= *m {
                return *q;
            }
            prev = *m;
        }
        1.0
    }

    /// `d_𝓜(α, α') = ∫_0^1 |α − α'|`, exact.
    pub fn distance(&self, other: &DiscreteCdf) -> f64 {
        let mut cuts: Vec<f64> = self.qs.iter().chain(other.qs.iter()).copied().collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .map(|w| (w[1] - w[0]) * (self.evaluate(w[0]) - other.evaluate(w[0])).abs())
            .sum()
    }

    /// `∫_0^1 |α⁻¹ − α'⁻¹|`, exact.
    pub fn quantile_distance(&self, other: &DiscreteCdf) -> f64 {
        let mut cuts: Vec<f64> = vec![0.0, 1.0];
        cuts.extend(self.ms.iter().chain(other.ms.iter()).copied());
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                (w[1] - w[0]) * (self.quantile(mid) - other.quantile(mid)).abs()
            })
            .sum()
    }

    /// The same function written on a finer jump grid containing `qs`.
    pub fn refine_to(&self, qs: &[f64]) -> Result<Self> {
        for q in &self.qs[1..] {
            if !qs.iter().any(|x| (x - q).abs() <= ORDER_TOL) {
                return Err(Error::InvalidCdf(format!("refinement misses jump location {q}")));
            }
        }
        let ms = qs.iter().map(|&q| self.evaluate(q)).collect();
        Self::new(qs.to_vec(), ms)
    }

    /// `(1 − λ)α + λα'` written on the union of both jump grids.
    pub fn mix(&self, other: &DiscreteCdf, lambda: f64) -> Result<Self> {
        let mut qs: Vec<f64> = self.qs.iter().chain(other.qs.iter()).copied().collect();
        qs.sort_by(f64::total_cmp);
        qs.dedup_by(|a, b| (*a - *b).abs() <= ORDER_TOL);
        let ms = qs
            .iter()
            .map(|&q| (1.0 - lambda) * self.evaluate(q) + lambda * other.evaluate(q))
            .collect();
        Self::new(qs, ms)
    }

    /// `k` pieces with sorted uniform jumps and levels.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidCdf("need at least one piece".into()));
        }
        let mut inner: Vec<f64> = (0..k - 1).map(|_| rng.random::<f64>()).collect();
        inner.sort_by(f64::total_cmp);
        let mut qs = vec![0.0];
        qs.extend(inner);
        qs.push(1.0);
        let mut ms: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        ms.sort_by(f64::total_cmp);
        ms.push(1.0);
        Self::new(qs, ms)
    }

    /// Jump sizes `m_l − m_{l−1}`.
    pub fn jumps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.ms
            .iter()
            .map(|m| {
                let d = m - prev;
                prev = *m;
                d
            })
            .collect()
    }
}

/// Continuous or discrete CDF on `[0, 1]` given as a callable.
pub trait Cdf: Sync {
    fn value(&self, s: f64) -> f64;
}

impl Cdf for DiscreteCdf {
    fn value(&self, s: f64) -> f64 {
        self.evaluate(s)
    }
}

impl<F: Fn(f64) -> f64 + Sync> Cdf for F {
    fn value(&self, s: f64) -> f64 {
        self(s)
    }
}

/// Piecewise-linear, Loewner-increasing path `s ↦ Ψ(s)` on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathSpec", into = "PathSpec")]
pub struct MatrixPath {
    dim: usize,
    knots: Vec<(f64, SymMat)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathSpec {
    pub knots: Vec<(f64, SymMat)>,
}

impl TryFrom<PathSpec> for MatrixPath {
    type Error = Error;

    fn try_from(s: PathSpec) -> Result<Self> {
        MatrixPath::new(s.knots)
    }
}

impl From<MatrixPath> for PathSpec {
    fn from(p: MatrixPath) -> Self {
        PathSpec { knots: p.knots }
    }
}

impl MatrixPath {
    pub fn new(knots: Vec<(f64, SymMat)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidPath("need at least two knots".into()));
        }
        let dim = knots[0].1.dim();
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(Error::InvalidPath("knots must start at s = 0 and end at s = 1".into()));
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidPath("knot positions must be strictly increasing".into()));
            }
            if w[1].1.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: w[1].1.dim(),
                });
            }
            let inc = w[1].1.sub(&w[0].1)?;
            let scale = 1.0 + w[1].1.max_abs();
            let min_eig = inc.min_eigenvalue();
            if min_eig < -PSD_TOL * scale {
                return Err(Error::InvalidPath(format!(
                    "path decreases between s = {} and s = {} (min eigenvalue {:e})",
                    w[0].0, w[1].0, min_eig
                )));
            }
        }
        if !knots[0].1.is_psd(PSD_TOL * (1.0 + knots[0].1.max_abs())) {
            return Err(Error::InvalidPath("path must start in the PSD cone".into()));
        }
        Ok(Self { dim, knots })
    }

    /// `Ψ(s) = s z`.
    pub fn linear(z: SymMat) -> Result<Self> {
        let zero = SymMat::zeros(z.dim());
        Self::new(vec![(0.0, zero), (1.0, z)])
    }

    /// `Ψ ≡ z`.
    pub fn constant(z: SymMat) -> Result<Self> {
        Self::new(vec![(0.0, z.clone()), (1.0, z)])
    }

    /// The symmetric Potts path `Ψ*(s) = (s/D) Id + ((1 − s)/D²) 𝟙`.
    pub fn psi_star(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidPath("the Potts path needs D >= 2".into()));
        }
        let d = dim as f64;
        Self::new(vec![
            (0.0, SymMat::ones(dim).scale(1.0 / (d * d))),
            (1.0, SymMat::identity(dim).scale(1.0 / d)),
        ])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn knots(&self) -> &[(f64, SymMat)] {
        &self.knots
    }

    pub fn knot_positions(&self) -> Vec<f64> {
        self.knots.iter().map(|k| k.0).collect()
    }

    pub fn z(&self) -> &SymMat {
        &self.knots[self.knots.len() - 1].1
    }

    fn segment(&self, s: f64) -> usize {
        let n = self.knots.len() - 1;
        (0..n).find(|&j| s < self.knots[j + 1].0).unwrap_or(n - 1)
    }

    pub fn value(&self, s: f64) -> SymMat {
        let s = s.clamp(0.0, 1.0);
        let j = self.segment(s);
        let (s0, a) = &self.knots[j];
        let (s1, b) = &self.knots[j + 1];
        let t = (s - s0) / (s1 - s0);
        a.scale(1.0 - t).axpy(t, b).expect("knot dims agree")
    }

    /// Right derivative (left derivative at `s = 1`).
    pub fn derivative(&self, s: f64) -> SymMat {
        let j = self.segment(s.clamp(0.0, 1.0));
        let (s0, a) = &self.knots[j];
        let (s1, b) = &self.knots[j + 1];
        b.sub(a).expect("knot dims agree").scale(1.0 / (s1 - s0))
    }
}

/// Increasing step path: `π(0) = values[0]`, `π(s) = values[j]` for
/// `s ∈ (breaks[j−1], breaks[j]]` when `s < 1`, and `π(1) = endpoint`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPath {
    pub breaks: Vec<f64>,
    pub values: Vec<SymMat>,
    pub endpoint: SymMat,
}

impl StepPath {
    pub fn new(breaks: Vec<f64>, values: Vec<SymMat>, endpoint: SymMat) -> Result<Self> {
        if breaks.len() < 2 || breaks.len() != values.len() {
            return Err(Error::InvalidPath("step path needs one value per break".into()));
        }
        if breaks[0] != 0.0 || breaks[breaks.len() - 1] != 1.0 {
            return Err(Error::InvalidPath("step path breaks must run from 0 to 1".into()));
        }
        for w in breaks.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidPath("step path breaks must increase".into()));
            }
        }
        let all: Vec<&SymMat> = values.iter().chain(std::iter::once(&endpoint)).collect();
        for w in all.windows(2) {
            let inc = w[1].sub(w[0])?;
            if inc.min_eigenvalue() < -PSD_TOL * (1.0 + w[1].max_abs()) {
                return Err(Error::InvalidPath("step path is not increasing".into()));
            }
        }
        Ok(Self {
            breaks,
            values,
            endpoint,
        })
    }

    pub fn value(&self, s: f64) -> &SymMat {
        if s <= 0.0 {
            return &self.values[0];
        }
        if s >= 1.0 {
            return &self.endpoint;
        }
        let j = (1..self.breaks.len())
            .find(|&j| s <= self.breaks[j])
            .unwrap_or(self.breaks.len() - 1);
        &self.values[j]
    }

    pub fn endpoint(&self) -> &SymMat {
        &self.endpoint
    }

    /// Splits `π` into a piecewise-linear `Ψ` through its distinct values at
    /// evenly spaced knots and a CDF `α` with `Ψ∘α⁻¹ = π`.
    pub fn decompose(&self) -> Result<(MatrixPath, DiscreteCdf)> {
        // Distinct consecutive values with the right end of the set where
        // each is taken. The value at s = 0 alone has an empty interval, and
        // so does an endpoint that differs from the last piece.
        let mut vals: Vec<SymMat> = Vec::new();
        let mut ends: Vec<f64> = Vec::new();
        let entries = self
            .values
            .iter()
            .enumerate()
            .map(|(j, v)| (if j == 0 { 0.0 } else { self.breaks[j] }, v))
            .chain(std::iter::once((1.0, &self.endpoint)));
        for (end, v) in entries {
            match vals.last() {
                Some(last) if last.sub(v)?.max_abs() == 0.0 => {
                    *ends.last_mut().expect("nonempty") = end;
                }
                _ => {
                    vals.push(v.clone());
                    ends.push(end);
                }
            }
        }
        if vals.len() == 1 {
            let z = vals.pop().expect("one value");
            return Ok((MatrixPath::constant(z)?, DiscreteCdf::one_step(1.0)?));
        }
        let n = vals.len() - 1;
        let qs: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        let knots = qs.iter().copied().zip(vals).collect();
        let psi = MatrixPath::new(knots)?;
        let alpha = DiscreteCdf::new(qs, ends)?;
        Ok((psi, alpha))
    }
}

/// `π = Ψ∘α⁻¹`.
pub fn compose_pi(psi: &MatrixPath, alpha: &DiscreteCdf) -> StepPath {
    let mut breaks = vec![0.0];
    let mut values = vec![psi.value(alpha.qs()[0])];
    let mut prev = 0.0;
    for (q, m) in alpha.qs().iter().zip(alpha.ms()) {
        if *m > prev {
            breaks.push(*m);
            values.push(psi.value(*q));
            prev = *m;
        }
    }
    // α⁻¹(1) = 1 pins the endpoint to z.
    StepPath {
        breaks,
        values,
        endpoint: psi.z().clone(),
    }
}

/// `μ = ∇ξ∘Ψ` and its exact derivative `γ`.
#[derive(Clone, Debug)]
pub struct DerivedPath {
    model: MixtureModel,
    psi: MatrixPath,
}

impl DerivedPath {
    pub fn new(model: &MixtureModel, psi: &MatrixPath) -> Result<Self> {
        if model.dim() != psi.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: psi.dim(),
            });
        }
        Ok(Self {
            model: model.clone(),
            psi: psi.clone(),
        })
    }

    pub fn model(&self) -> &MixtureModel {
        &self.model
    }

    pub fn psi(&self) -> &MatrixPath {
        &self.psi
    }

    pub fn dim(&self) -> usize {
        self.psi.dim()
    }

    pub fn mu(&self, s: f64) -> SymMat {
        self.model.grad_xi(&self.psi.value(s)).expect("dims checked")
    }

    /// `γ(s) = Σ p(p−1)β_p² Ψ(s)^{∘(p−2)} ∘ Ψ'(s)`.
    pub fn gamma(&self, s: f64) -> SymMat {
        self.model
            .grad_xi_directional(&self.psi.value(s), &self.psi.derivative(s))
            .expect("dims checked")
    }

    /// True when `γ` vanishes identically along the path.
    pub fn is_static(&self) -> bool {
        self.psi
            .knots()
            .windows(2)
            .all(|w| w[1].1.sub(&w[0].1).map(|d| d.max_abs() == 0.0).unwrap_or(false))
    }

    /// `μ(t) − μ(s)`.
    pub fn increment(&self, s: f64, t: f64) -> SymMat {
        self.mu(t).sub(&self.mu(s)).expect("same dim")
    }

    /// Break points of the path inside `(a, b)`.
    pub fn breaks_in(&self, a: f64, b: f64) -> Vec<f64> {
        self.psi
            .knot_positions()
            .into_iter()
            .filter(|&s| s > a && s < b)
            .collect()
    }

    /// Lipschitz constant of `μ` in Frobenius norm, `sup_s |γ(s)|`,
    /// sampled densely on each linear segment.
    pub fn lipschitz_mu(&self) -> f64 {
        let knots = self.psi.knot_positions();
        let mut best = 0.0_f64;
        for w in knots.windows(2) {
            for i in 0..=64 {
                let t = i as f64 / 64.0;
                // Stay inside the segment so the derivative is its own.
                let s = w[0] + (w[1] - w[0]) * t.min(1.0 - 1e-12);
                best = best.max(self.gamma(s).frobenius_norm());
            }
        }
        best
    }

    /// `sup_s tr γ(s)`, sampled as in [`Self::lipschitz_mu`].
    pub fn max_trace_gamma(&self) -> f64 {
        let knots = self.psi.knot_positions();
        let mut best = 0.0_f64;
        for w in knots.windows(2) {
            for i in 0..=64 {
                let s = w[0] + (w[1] - w[0]) * (i as f64 / 64.0).min(1.0 - 1e-12);
                best = best.max(self.gamma(s).trace());
            }
        }
        best
    }

    /// Frobenius residual of `A'A + AA' + γ(s)` with
    /// `A(s) = √(μ(t) − μ(s))` and `A'` a central difference of step `ds`.
    pub fn sqrt_identity_residual(&self, s: f64, t: f64, ds: f64) -> Result<f64> {
        let a = self.increment(s, t).sqrt_psd()?;
        let ap = self.increment(s + ds, t).sqrt_psd()?;
        let am = self.increment(s - ds, t).sqrt_psd()?;
        let da = ap.sub(&am)?.scale(0.5 / ds);
        let lhs = da.anticommutator(&a)?;
        Ok(lhs.add(&self.gamma(s))?.frobenius_norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cdf(rng: &mut ChaCha8Rng, k: usize) -> DiscreteCdf {
        let mut qs: Vec<f64> = (0..k - 1).map(|_| rng.random::<f64>()).collect();
        qs.sort_by(f64::total_cmp);
        let mut all = vec![0.0];
        all.extend(qs);
        all.push(1.0);
        let mut ms: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        ms.sort_by(f64::total_cmp);
        ms.push(1.0);
        DiscreteCdf::new(all, ms).unwrap()
    }

    #[test]
    fn validation() {
        assert!(DiscreteCdf::new(vec![0.0, 0.5, 1.0], vec![0.5, 0.2, 1.0]).is_err());
        assert!(DiscreteCdf::new(vec![0.0, 0.5, 0.4, 1.0], vec![0.0, 0.1, 0.2, 1.0]).is_err());
        assert!(DiscreteCdf::new(vec![0.0, 0.5], vec![0.0, 1.0]).is_err());
        assert!(DiscreteCdf::new(vec![0.1, 1.0], vec![0.0, 1.0]).is_err());
        assert!(DiscreteCdf::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 0.9]).is_err());
        assert!(DiscreteCdf::new(vec![0.0, 0.0, 1.0], vec![0.2, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn one_step_shape() {
        let a = DiscreteCdf::one_step(0.5).unwrap();
        assert_eq!(a.evaluate(0.0), 0.0);
        assert_eq!(a.evaluate(0.49), 0.0);
        assert_eq!(a.evaluate(0.5), 1.0);
        assert_eq!(a.evaluate(1.0), 1.0);
        for s in [0.01, 0.3, 0.99] {
            assert_eq!(a.quantile(s), 0.5);
        }
        assert_eq!(a.quantile(0.0), 0.0);
        assert_eq!(a.quantile(1.0), 1.0);
    }

    #[test]
    fn distance_examples() {
        let a = DiscreteCdf::one_step(0.5).unwrap();
        let b = DiscreteCdf::one_step(0.0).unwrap();
        assert_abs_diff_eq!(a.distance(&b), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b.distance(&a), 0.5, epsilon = 1e-15);
        assert_eq!(a.distance(&a), 0.0);
    }

    #[test]
    fn fubini_identity_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let k1 = rng.random_range(1..6);
            let k2 = rng.random_range(1..6);
            let a = random_cdf(&mut rng, k1);
            let b = random_cdf(&mut rng, k2);
            assert_abs_diff_eq!(a.distance(&b), a.quantile_distance(&b), epsilon = 1e-10);
        }
    }

    #[test]
    fn staircase_distance_bound() {
        let f = |s: f64| s;
        for n in [4, 8, 16] {
            let a = DiscreteCdf::staircase(f, n).unwrap();
            // Exact distance to the identity CDF: n triangles of area 1/(4n²).
            let d: f64 = (0..n)
                .map(|j| {
                    let lo = j as f64 / n as f64;
                    let hi = (j + 1) as f64 / n as f64;
                    let m = a.evaluate(lo);
                    crate::quadrature::integrate(|s| (s - m).abs(), lo, m.clamp(lo, hi), 8)
                        + crate::quadrature::integrate(|s| (s - m).abs(), m.clamp(lo, hi), hi, 8)
                })
                .sum();
            assert_abs_diff_eq!(d, 1.0 / (4.0 * n as f64), epsilon = 1e-12);
        }
    }

    #[test]
    fn mix_is_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_cdf(&mut rng, 3);
            let b = random_cdf(&mut rng, 4);
            let c = a.mix(&b, 0.3).unwrap();
            for i in 0..100 {
                let s = i as f64 / 100.0;
                assert_abs_diff_eq!(c.evaluate(s), 0.7 * a.evaluate(s) + 0.3 * b.evaluate(s), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn psi_star_endpoints() {
        let p = MatrixPath::psi_star(2).unwrap();
        assert!(p.value(0.0).sub(&SymMat::ones(2).scale(0.25)).unwrap().max_abs() < 1e-16);
        assert!(p.value(1.0).sub(&SymMat::identity(2).scale(0.5)).unwrap().max_abs() < 1e-16);
        for i in 1..=10 {
            assert!(p.value(i as f64 / 10.0).min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn gamma_examples() {
        let m = MixtureModel::new(3, &[(2, 0.9)]).unwrap();
        let d = DerivedPath::new(&m, &MatrixPath::psi_star(3).unwrap()).unwrap();
        let expect = SymMat::identity(3).scale(3.0).sub(&SymMat::ones(3)).unwrap().scale(2.0 * 0.81 / 9.0);
        for s in [0.0, 0.3, 1.0] {
            assert!(d.gamma(s).sub(&expect).unwrap().max_abs() < 1e-15);
        }
        // D = 1, Ψ(s) = z s: γ(s) = z ξ''(z s).
        let m = MixtureModel::new(1, &[(2, 0.7), (3, 0.4)]).unwrap();
        let z = 0.8;
        let d = DerivedPath::new(&m, &MatrixPath::linear(SymMat::scalar(z)).unwrap()).unwrap();
        for s in [0.1, 0.5, 0.9] {
            let xi2 = 2.0 * 0.49 + 6.0 * 0.16 * z * s;
            assert_abs_diff_eq!(d.gamma(s).get(0, 0), z * xi2, epsilon = 1e-14);
        }
        let c = DerivedPath::new(&m, &MatrixPath::constant(SymMat::scalar(0.5)).unwrap()).unwrap();
        assert_eq!(c.gamma(0.4).get(0, 0), 0.0);
        assert!(c.is_static());
    }

    #[test]
    fn compose_examples() {
        let psi = MatrixPath::psi_star(2).unwrap();
        let a = DiscreteCdf::one_step(0.4).unwrap();
        let pi = compose_pi(&psi, &a);
        assert_eq!(pi.value(0.0), &psi.value(0.0));
        assert_eq!(pi.value(0.5), &psi.value(0.4));
        assert_eq!(pi.endpoint(), psi.z());
        // D = 1, Ψ(s) = z s: π = z α⁻¹ away from s = 1.
        let z = 0.7;
        let psi = MatrixPath::linear(SymMat::scalar(z)).unwrap();
        let a = DiscreteCdf::new(vec![0.0, 0.2, 0.6, 1.0], vec![0.1, 0.3, 0.8, 1.0]).unwrap();
        let pi = compose_pi(&psi, &a);
        for i in 0..100 {
            let s = i as f64 / 100.0;
            assert_abs_diff_eq!(pi.value(s).get(0, 0), z * a.quantile(s), epsilon = 1e-15);
        }
        assert_eq!(pi.value(1.0).get(0, 0), z);
    }

    #[test]
    fn decompose_round_trip() {
        let psi = MatrixPath::psi_star(2).unwrap();
        let a = DiscreteCdf::new(vec![0.0, 0.3, 0.7, 1.0], vec![0.2, 0.5, 0.9, 1.0]).unwrap();
        let pi = compose_pi(&psi, &a);
        let (psi2, a2) = pi.decompose().unwrap();
        let pi2 = compose_pi(&psi2, &a2);
        for i in 0..=200 {
            let s = i as f64 / 200.0;
            assert!(pi.value(s).sub(pi2.value(s)).unwrap().max_abs() < 1e-15, "s = {s}");
        }
    }

    #[test]
    fn sqrt_identity() {
        let m = MixtureModel::new(2, &[(2, 1.0), (3, 1.0)]).unwrap();
        let d = DerivedPath::new(&m, &MatrixPath::psi_star(2).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 100 {
            let s: f64 = rng.random_range(0.05..0.9);
            let t: f64 = rng.random_range(s + 0.05..1.0);
            if d.increment(s, t).min_eigenvalue() <= 1e-6 {
                continue;
            }
            let r = d.sqrt_identity_residual(s, t, 1e-5).unwrap();
            assert!(r < 1e-6, "s={s} t={t} residual={r}");
            checked += 1;
        }
    }

    #[test]
    fn mu_monotone_along_path() {
        let m = MixtureModel::new(2, &[(2, 0.6), (3, 0.9), (4, 0.3)]).unwrap();
        let d = DerivedPath::new(&m, &MatrixPath::psi_star(2).unwrap()).unwrap();
        for i in 0..50 {
            let s = i as f64 / 50.0;
            let t = s + 0.02;
            assert!(d.mu(s).loewner_leq(&d.mu(t), 1e-12).unwrap());
        }
    }

    proptest! {
        #[test]
        fn quantile_inverts_evaluate(qs in prop::collection::btree_set(1u32..99, 1..5), ms in prop::collection::vec(0.0f64..1.0, 5)) {
            let mut q: Vec<f64> = vec![0.0];
            q.extend(qs.iter().map(|v| *v as f64 / 100.0));
            q.push(1.0);
            let mut m: Vec<f64> = ms[..q.len() - 1].to_vec();
            m.sort_by(f64::total_cmp);
            m.push(1.0);
            let a = DiscreteCdf::new(q, m).unwrap();
            // α(α⁻¹(s)) ≥ s for every s in (0, 1).
            for i in 1..100 {
                let s = i as f64 / 100.0;
                prop_assert!(a.evaluate(a.quantile(s)) >= s - 1e-12);
            }
        }
    }
}

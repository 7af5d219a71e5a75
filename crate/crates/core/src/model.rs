//! Covariance functions of Hadamard-power mixture type,
//! `ξ(a) = Σ_{k,k'} Σ_p β_p² a_{kk'}^p`, with exact gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symmat::{SymMat, PSD_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Entrywise powers summed over all `D²` entries.
    PottsHadamard,
    /// The scalar mixed p-spin covariance, `D = 1`.
    ScalarMixed,
}

/// One mixture component `β_p² r^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub p: u32,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct MixtureModel {
    dim: usize,
    components: Vec<Component>,
    kind: ModelKind,
}

/// Wire format: `{ "dim": D, "betas": [[p, beta], ...] }`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub betas: Vec<(u32, f64)>,
}

impl TryFrom<ModelSpec> for MixtureModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        MixtureModel::new(spec.dim, &spec.betas)
    }
}

impl From<MixtureModel> for ModelSpec {
    fn from(m: MixtureModel) -> Self {
        ModelSpec {
            dim: m.dim,
            betas: m.components.iter().map(|c| (c.p, c.beta)).collect(),
        }
    }
}

impl MixtureModel {
    /// `D = 1` gives the scalar mixed model, otherwise the Potts/Hadamard family.
    pub fn new(dim: usize, betas: &[(u32, f64)]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        if betas.is_empty() {
            return Err(Error::InvalidModel("at least one mixture component is required".into()));
        }
        let mut components = Vec::with_capacity(betas.len());
        for &(p, beta) in betas {
            if p < 2 {
                return Err(Error::InvalidModel(format!("power p = {p} must be at least 2")));
            }
            if !(beta >= 0.0) || !beta.is_finite() {
                return Err(Error::InvalidModel(format!("beta_{p} = {beta} must be finite and non-negative")));
            }
            if components.iter().any(|c: &Component| c.p == p) {
                return Err(Error::InvalidModel(format!("duplicate power p = {p}")));
            }
            components.push(Component { p, beta });
        }
        if components.iter().all(|c| c.beta == 0.0) {
            return Err(Error::InvalidModel("at least one beta_p must be positive".into()));
        }
        components.sort_by_key(|c| c.p);
        let kind = if dim == 1 {
            ModelKind::ScalarMixed
        } else {
            ModelKind::PottsHadamard
        };
        Ok(Self { dim, components, kind })
    }

    /// `ξ(r) = β² r²` on the real line.
    pub fn sk(beta: f64) -> Result<Self> {
        Self::new(1, &[(2, beta)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Coefficient β_p, zero when absent.
    pub fn beta(&self, p: u32) -> f64 {
        self.components
            .iter()
            .find(|c| c.p == p)
            .map_or(0.0, |c| c.beta)
    }

    /// True when only the quadratic term is active.
    pub fn is_pure_quadratic(&self) -> bool {
        self.components.iter().all(|c| c.p == 2 || c.beta == 0.0)
    }

    pub fn max_power(&self) -> u32 {
        self.components.iter().map(|c| c.p).max().unwrap_or(2)
    }

    fn check(&self, a: &SymMat) -> Result<()> {
        if a.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: a.dim(),
            });
        }
        Ok(())
    }

    pub fn xi(&self, a: &SymMat) -> Result<f64> {
        self.check(a)?;
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = a.get(i, j);
                for c in &self.components {
                    s += c.beta * c.beta * v.powi(c.p as i32);
                }
            }
        }
        Ok(s)
    }

    /// `∇ξ(a) = Σ p β_p² a^{∘(p−1)}`.
    pub fn grad_xi(&self, a: &SymMat) -> Result<SymMat> {
        self.check(a)?;
        Ok(a.map(|v| {
            self.components
                .iter()
                .map(|c| c.p as f64 * c.beta * c.beta * v.powi(c.p as i32 - 1))
                .sum()
        }))
    }

    /// Directional derivative of `∇ξ` at `a` along `d`:
    /// `Σ p(p−1) β_p² a^{∘(p−2)} ∘ d`.
    pub fn grad_xi_directional(&self, a: &SymMat, d: &SymMat) -> Result<SymMat> {
        self.check(a)?;
        self.check(d)?;
        let mut out = SymMat::zeros(self.dim);
        for c in &self.components {
            let coef = (c.p * (c.p - 1)) as f64 * c.beta * c.beta;
            out = out.axpy(coef, &a.hadamard_pow(c.p - 2).hadamard(d)?)?;
        }
        Ok(out)
    }

    /// `θ(a) = a·∇ξ(a) − ξ(a)`.
    pub fn theta(&self, a: &SymMat) -> Result<f64> {
        Ok(a.dot(&self.grad_xi(a)?)? - self.xi(a)?)
    }

    /// Randomized falsification of monotonicity (H3), non-negativity (H2)
    /// and the strict monotonicity condition `c·∇(b·∇ξ)(a) > 0`.
    /// A pass is evidence, not proof.
    pub fn check_assumptions(&self, samples: usize, seed: u64) -> AssumptionReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let mut h2 = CheckOutcome::default();
        let mut h3 = CheckOutcome::default();
        let mut cond = CheckOutcome::default();
        for _ in 0..samples.max(1) {
            let b = random_psd(d, &mut rng);
            let incr = random_psd(d, &mut rng);
            let a = b.add(&incr).expect("same dim");

            let xa = self.xi(&a).expect("dim");
            let xb = self.xi(&b).expect("dim");
            h2.record(xb >= 0.0 && self.xi(&SymMat::zeros(d)).expect("dim") == 0.0, || {
                Witness::new("xi(b) < 0", vec![b.clone()], xb)
            });
            let ga = self.grad_xi(&a).expect("dim");
            let gb = self.grad_xi(&b).expect("dim");
            let diff = ga.sub(&gb).expect("dim");
            let min_eig = diff.min_eigenvalue();
            let scale = 1.0 + ga.max_abs();
            let ok = xa >= xb - 1e-12 * (1.0 + xa.abs()) && min_eig >= -PSD_TOL * scale;
            h3.record(ok, || {
                Witness::new("grad xi not monotone on a >= b", vec![a.clone(), b.clone()], min_eig)
            });

            let pa = random_psd(d, &mut rng);
            let pb = random_psd(d, &mut rng);
            let pc = random_psd(d, &mut rng)
                .add(&SymMat::identity(d).scale(1e-3))
                .expect("dim");
            let value = self.cond_xi_fd(&pa, &pb, &pc);
            cond.record(value > 0.0, || {
                Witness::new("c . grad(b . grad xi)(a) <= 0", vec![pa.clone(), pb.clone(), pc.clone()], value)
            });
        }
        AssumptionReport {
            samples: samples.max(1),
            h2,
            h3,
            cond_xi: cond,
        }
    }

    /// `c·∇(b·∇ξ)(a)` by a central difference of `∇ξ` along `c`.
    pub fn cond_xi_fd(&self, a: &SymMat, b: &SymMat, c: &SymMat) -> f64 {
        let eps = 1e-5 * (1.0 + a.max_abs());
        let plus = self.grad_xi(&a.axpy(eps, c).expect("dim")).expect("dim");
        let minus = self.grad_xi(&a.axpy(-eps, c).expect("dim")).expect("dim");
        (b.dot(&plus).expect("dim") - b.dot(&minus).expect("dim")) / (2.0 * eps)
    }
}

/// `g gᵀ / D` with standard normal `g`.
pub(crate) fn random_psd(dim: usize, rng: &mut ChaCha8Rng) -> SymMat {
    let g: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    SymMat::from_fn(dim, |i, j| {
        (0..dim).map(|k| g[i][k] * g[j][k]).sum::<f64>() / dim as f64
    })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub passed: bool,
    pub checked: usize,
    pub failures: usize,
    pub witness: Option<Witness>,
}

impl CheckOutcome {
    fn record(&mut self, ok: bool, witness: impl FnOnce() -> Witness) {
        if self.checked == 0 {
            self.passed = true;
        }
        self.checked += 1;
        if !ok {
            self.failures += 1;
            self.passed = false;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Witness {
    pub reason: String,
    pub matrices: Vec<SymMat>,
    pub value: f64,
}

impl Witness {
    fn new(reason: &str, matrices: Vec<SymMat>, value: f64) -> Self {
        Self {
            reason: reason.to_string(),
            matrices,
            value,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub h2: CheckOutcome,
    pub h3: CheckOutcome,
    pub cond_xi: CheckOutcome,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.h2.passed && self.h3.passed && self.cond_xi.passed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn potts2() -> MixtureModel {
        MixtureModel::new(2, &[(2, 1.0)]).unwrap()
    }

    #[test]
    fn xi_examples() {
        let half = SymMat::diag(&[0.5, 0.5]);
        assert_abs_diff_eq!(potts2().xi(&half).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(potts2().xi(&SymMat::zeros(2)).unwrap(), 0.0);
        let m = MixtureModel::new(1, &[(2, 1.0), (3, 1.0)]).unwrap();
        assert_abs_diff_eq!(m.xi(&SymMat::scalar(2.0)).unwrap(), 12.0, epsilon = 1e-14);
        assert_eq!(m.kind(), ModelKind::ScalarMixed);
        assert_eq!(potts2().kind(), ModelKind::PottsHadamard);
    }

    #[test]
    fn grad_examples() {
        let a = SymMat::from_rows(&[vec![0.3, -0.2], vec![-0.2, 0.9]]).unwrap();
        let g = potts2().grad_xi(&a).unwrap();
        assert!(g.sub(&a.scale(2.0)).unwrap().max_abs() < 1e-15);
        assert_eq!(potts2().grad_xi(&SymMat::zeros(2)).unwrap(), SymMat::zeros(2));
        let cubic = MixtureModel::new(2, &[(3, 1.0)]).unwrap();
        let a = SymMat::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let expect = SymMat::from_rows(&[vec![1.0, 0.25], vec![0.25, 1.0]]).unwrap().scale(3.0);
        assert!(cubic.grad_xi(&a).unwrap().sub(&expect).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn theta_examples() {
        let m = MixtureModel::sk(1.0).unwrap();
        assert_abs_diff_eq!(m.theta(&SymMat::scalar(0.7)).unwrap(), 0.49, epsilon = 1e-15);
        assert_eq!(m.theta(&SymMat::scalar(0.0)).unwrap(), 0.0);
        let half = SymMat::diag(&[0.5, 0.5]);
        assert_abs_diff_eq!(potts2().theta(&half).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(MixtureModel::new(2, &[]).is_err());
        assert!(MixtureModel::new(2, &[(1, 1.0)]).is_err());
        assert!(MixtureModel::new(2, &[(2, 0.0)]).is_err());
        assert!(MixtureModel::new(2, &[(2, -1.0)]).is_err());
        assert!(MixtureModel::new(0, &[(2, 1.0)]).is_err());
    }

    #[test]
    fn serde_shape() {
        let m: MixtureModel = serde_json::from_str(r#"{"dim":2,"betas":[[2,1.0],[3,0.5]]}"#).unwrap();
        assert_eq!(m.beta(3), 0.5);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"dim":2,"betas":[[2,1.0],[3,0.5]]}"#);
        assert!(serde_json::from_str::<MixtureModel>(r#"{"dim":2,"betas":[[2,0.0]]}"#).is_err());
    }

    #[test]
    fn quadratic_potts_assumptions() {
        let r = potts2().check_assumptions(10_000, 1);
        assert!(r.h2.passed);
        assert!(r.h3.passed);
        // c·∇(b·∇ξ)(a) = 2 tr(cb) > 0 for c PD and b PSD nonzero.
        assert!(r.cond_xi.passed);
    }

    #[test]
    fn mixed_potts_assumptions() {
        let m = MixtureModel::new(2, &[(2, 1.0), (3, 1.0)]).unwrap();
        let r = m.check_assumptions(10_000, 2);
        assert!(r.all_passed(), "{r:?}");
    }

    #[test]
    fn cond_xi_fd_matches_closed_form() {
        // c·∇(b·∇ξ)(a) = Σ p(p−1)β² (c∘b)·a^{∘(p−2)}
        let m = MixtureModel::new(2, &[(2, 0.7), (3, 1.1), (4, 0.4)]).unwrap();
        let a = SymMat::from_rows(&[vec![0.6, 0.2], vec![0.2, 0.4]]).unwrap();
        let b = SymMat::from_rows(&[vec![0.3, -0.1], vec![-0.1, 0.5]]).unwrap();
        let c = SymMat::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.8]]).unwrap();
        let exact: f64 = m
            .components()
            .iter()
            .map(|k| {
                (k.p * (k.p - 1)) as f64
                    * k.beta
                    * k.beta
                    * c.hadamard(&b).unwrap().dot(&a.hadamard_pow(k.p - 2)).unwrap()
            })
            .sum();
        assert_abs_diff_eq!(m.cond_xi_fd(&a, &b, &c), exact, epsilon = 1e-8);
    }

    proptest! {
        #[test]
        fn grad_matches_finite_differences(entries in prop::collection::vec(-1.0f64..1.0, 3)) {
            let m = MixtureModel::new(2, &[(2, 0.8), (3, 0.6), (5, 0.3)]).unwrap();
            let a = SymMat::from_rows(&[vec![entries[0], entries[1]], vec![entries[1], entries[2]]]).unwrap();
            let g = m.grad_xi(&a).unwrap();
            let h = 1e-5;
            for (i, j) in [(0usize, 0usize), (0, 1), (1, 1)] {
                // Perturbing the (i,j) and (j,i) entries together moves ξ by
                // the sum of both partial derivatives.
                let mut e = SymMat::zeros(2);
                e.set(i, j, 1.0);
                let fd = (m.xi(&a.axpy(h, &e).unwrap()).unwrap() - m.xi(&a.axpy(-h, &e).unwrap()).unwrap()) / (2.0 * h);
                let analytic = if i == j { g.get(i, j) } else { 2.0 * g.get(i, j) };
                prop_assert!((fd - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()));
            }
        }

        #[test]
        fn theta_nonnegative_on_psd(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = MixtureModel::new(3, &[(2, 0.9), (3, 0.5), (4, 0.2)]).unwrap();
            let a = random_psd(3, &mut rng);
            prop_assert!(m.theta(&a).unwrap() >= -1e-12);
        }
    }
}

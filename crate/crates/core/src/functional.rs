//! The functional
//! `ℱ(Ψ, α) = E Φ̃(0, √μ(0) η) + ½θ(z) − ½∫ α Ψ·γ ds`
//! where `Φ̃` solves the PDE with the tilted base measure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MixtureModel;
use crate::paths::{DerivedPath, DiscreteCdf, MatrixPath, StepPath};
use crate::pde::{self, BaseMeasure, GridSpec, PdeSolution};
use crate::quadrature::{gauss_hermite, gauss_legendre};
use crate::symmat::SymMat;
use crate::grid::{covariance_factors, ScalarField};

/// Tolerance for the two ways of computing the integral term.
pub const TERM_INT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalValue {
    pub total: f64,
    /// `E Φ̃(0, √μ(0) η)`.
    pub term_phi: f64,
    /// `½θ(z)`.
    pub term_theta: f64,
    /// `−½∫ α Ψ·γ ds` by the θ-telescoping closed form.
    pub term_int: f64,
    /// The same term by direct Gauss–Legendre quadrature.
    pub term_int_quadrature: f64,
}

/// `dP̃(σ) = exp(−½ ∇ξ(z)·σσᵀ) dP(σ)`, not renormalised.
pub fn tilt(base: &BaseMeasure, model: &MixtureModel, z: &SymMat) -> Result<BaseMeasure> {
    if base.dim() != model.dim() || z.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: base.dim().max(z.dim()),
        });
    }
    let g = model.grad_xi(z)?;
    base.reweighted(|sigma| (-0.5 * g.quad_form(sigma)).exp())
}

/// `θ(z) − Σ_l (m_l − m_{l−1}) θ(Ψ(q_l))`.
pub fn integral_closed_form(model: &MixtureModel, psi: &MatrixPath, alpha: &DiscreteCdf) -> Result<f64> {
    let mut v = model.theta(psi.z())?;
    for (q, jump) in alpha.qs().iter().zip(alpha.jumps()) {
        v -= jump * model.theta(&psi.value(*q))?;
    }
    Ok(v)
}

/// `∫_0^1 α Ψ·γ ds` by Gauss–Legendre on every piece where both `α` and
/// the path are smooth. Exact for the Hadamard family.
pub fn integral_quadrature(derived: &DerivedPath, alpha: &DiscreteCdf) -> f64 {
    let mut cuts: Vec<f64> = alpha.qs().to_vec();
    cuts.extend(derived.psi().knot_positions());
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let nodes = (derived.model().max_power() as usize).max(8);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let a = alpha.evaluate(w[0]);
        if a == 0.0 {
            continue;
        }
        let rule = gauss_legendre(nodes, w[0], w[1]);
        for (s, wt) in rule.nodes.iter().zip(&rule.weights) {
            let v = derived.psi().value(*s).dot(&derived.gamma(*s)).expect("same dim");
            total += wt * a * v;
        }
    }
    total
}

/// `E f(√c η)` by tensor Gauss–Hermite in the eigenbasis of `c`,
/// or `f(0)` when `c = 0`.
pub fn gaussian_average(f: &dyn ScalarField, cov: &SymMat, nodes: usize) -> Result<f64> {
    let d = cov.dim();
    let dirs = covariance_factors(cov)?;
    if dirs.is_empty() {
        return Ok(f.eval(&vec![0.0; d]));
    }
    let rule = gauss_hermite(nodes);
    let r = dirs.len();
    let total = nodes.pow(r as u32);
    let mut counter = vec![0usize; r];
    let mut acc = 0.0;
    let mut y = vec![0.0; d];
    for _ in 0..total {
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut w = 1.0;
        for (c, (root, v)) in counter.iter().zip(&dirs) {
            let z = rule.nodes[*c] * root;
            for k in 0..d {
                y[k] += z * v[k];
            }
            w *= rule.weights[*c];
        }
        acc += w * f.eval(&y);
        for c in counter.iter_mut().rev() {
            *c += 1;
            if *c < nodes {
                break;
            }
            *c = 0;
        }
    }
    Ok(acc)
}

/// Solution together with its functional value.
pub struct Evaluation {
    pub value: FunctionalValue,
    pub solution: PdeSolution,
}

/// Evaluates `ℱ(Ψ, α)`.
pub fn evaluate(
    model: &MixtureModel,
    psi: &MatrixPath,
    alpha: &DiscreteCdf,
    base: &BaseMeasure,
    grid: &GridSpec,
) -> Result<FunctionalValue> {
    Ok(evaluate_full(model, psi, alpha, base, grid)?.value)
}

/// Like [`evaluate`] and also returns the PDE solution on the tilted base.
pub fn evaluate_full(
    model: &MixtureModel,
    psi: &MatrixPath,
    alpha: &DiscreteCdf,
    base: &BaseMeasure,
    grid: &GridSpec,
) -> Result<Evaluation> {
    let derived = DerivedPath::new(model, psi)?;
    let z = psi.z();
    let tilted = tilt(base, model, z)?;
    let solution = pde::solve(&tilted, &derived, alpha, grid)?;
    let term_phi = gaussian_average(solution.level(0), &derived.mu(0.0), grid.quad_nodes)?;
    let term_theta = 0.5 * model.theta(z)?;
    let closed = integral_closed_form(model, psi, alpha)?;
    let direct = integral_quadrature(&derived, alpha);
    if (closed - direct).abs() > TERM_INT_TOL * (1.0 + closed.abs()) {
        return Err(Error::Numerical(format!(
            "integral term disagrees: closed form {closed}, quadrature {direct}"
        )));
    }
    let term_int = -0.5 * closed;
    Ok(Evaluation {
        value: FunctionalValue {
            total: term_phi + term_theta + term_int,
            term_phi,
            term_theta,
            term_int,
            term_int_quadrature: -0.5 * direct,
        },
        solution,
    })
}

/// `𝒫(π)` for a step path, through `π = Ψ∘α⁻¹` with `Ψ` interpolating
/// the values of `π`. The correction is `½∫θ(π(s)) ds`, computed directly.
pub fn evaluate_pi(
    model: &MixtureModel,
    pi: &StepPath,
    base: &BaseMeasure,
    grid: &GridSpec,
) -> Result<f64> {
    let (psi, alpha) = pi.decompose()?;
    let value = evaluate(model, &psi, &alpha, base, grid)?;
    let mut correction = 0.0;
    for (j, w) in pi.breaks.windows(2).enumerate() {
        correction += (w[1] - w[0]) * model.theta(&pi.values[j + 1])?;
    }
    Ok(value.term_phi + 0.5 * correction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::compose_pi;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tilt_examples() {
        let m = MixtureModel::new(3, &[(2, 1.3)]).unwrap();
        let z = SymMat::identity(3).scale(1.0 / 3.0);
        let t = tilt(&BaseMeasure::potts_uniform(3).unwrap(), &m, &z).unwrap();
        for a in t.atoms() {
            assert_abs_diff_eq!(a.weight, (-1.69f64 / 3.0).exp() / 3.0, epsilon = 1e-15);
        }
        let t = tilt(&BaseMeasure::ising(), &MixtureModel::sk(0.7).unwrap(), &SymMat::scalar(1.0)).unwrap();
        for a in t.atoms() {
            assert_abs_diff_eq!(a.weight, 0.5 * (-0.49f64).exp(), epsilon = 1e-15);
        }
        let t = tilt(&BaseMeasure::ising(), &MixtureModel::sk(0.7).unwrap(), &SymMat::scalar(0.0)).unwrap();
        assert_eq!(t, BaseMeasure::ising());
    }

    #[test]
    fn static_path_gives_phi_plus_theta() {
        let m = MixtureModel::sk(0.9).unwrap();
        let psi = MatrixPath::constant(SymMat::scalar(0.0)).unwrap();
        let alpha = DiscreteCdf::new(vec![0.0, 0.5, 1.0], vec![0.2, 0.6, 1.0]).unwrap();
        let v = evaluate(&m, &psi, &alpha, &BaseMeasure::ising(), &GridSpec::default()).unwrap();
        assert_abs_diff_eq!(v.total, 0.0, epsilon = 1e-12);
        assert_eq!(v.term_int, 0.0);
    }

    #[test]
    fn terms_add_up_and_agree() {
        let m = MixtureModel::new(2, &[(2, 0.8), (3, 0.6)]).unwrap();
        let psi = MatrixPath::psi_star(2).unwrap();
        let alpha = DiscreteCdf::new(vec![0.0, 0.4, 1.0], vec![0.3, 0.7, 1.0]).unwrap();
        let grid = GridSpec::new(Some(5.0), 0.1, 15);
        let v = evaluate(&m, &psi, &alpha, &BaseMeasure::potts_uniform(2).unwrap(), &grid).unwrap();
        assert_eq!(v.total, v.term_phi + v.term_theta + v.term_int);
        assert_abs_diff_eq!(v.term_int, v.term_int_quadrature, epsilon = 1e-10);
    }

    #[test]
    fn pi_route_matches_for_random_alpha() {
        let m = MixtureModel::new(1, &[(2, 0.7), (3, 0.5)]).unwrap();
        let psi = MatrixPath::new(vec![
            (0.0, SymMat::scalar(0.1)),
            (0.5, SymMat::scalar(0.4)),
            (1.0, SymMat::scalar(1.0)),
        ])
        .unwrap();
        let base = BaseMeasure::ising();
        let grid = GridSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = rng.random_range(1..5usize);
            let mut qs: Vec<f64> = (0..k - 1).map(|_| rng.random_range(0.01..0.99)).collect();
            qs.sort_by(f64::total_cmp);
            qs.insert(0, 0.0);
            qs.push(1.0);
            let mut ms: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..0.99)).collect();
            ms.sort_by(f64::total_cmp);
            ms.push(1.0);
            let Ok(alpha) = DiscreteCdf::new(qs, ms) else { continue };
            let direct = evaluate(&m, &psi, &alpha, &base, &grid).unwrap().total;
            let via_pi = evaluate_pi(&m, &compose_pi(&psi, &alpha), &base, &grid).unwrap();
            assert_abs_diff_eq!(direct, via_pi, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_path_pi_is_phi_at_origin() {
        let m = MixtureModel::sk(1.0).unwrap();
        let pi = StepPath::new(vec![0.0, 1.0], vec![SymMat::scalar(0.0); 2], SymMat::scalar(0.0)).unwrap();
        let v = evaluate_pi(&m, &pi, &BaseMeasure::ising(), &GridSpec::default()).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }
}

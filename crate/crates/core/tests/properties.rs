//! Invariants of the public API checked on random inputs.

use parisi_core::potts::PottsSetup;
use parisi_core::{functional, par, pde, BaseMeasure, DerivedPath, DiscreteCdf, GridSpec, MatrixPath, MixtureModel, SymMat};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cdf(seed: u64, k: usize) -> DiscreteCdf {
    DiscreteCdf::random(&mut ChaCha8Rng::seed_from_u64(seed), k).unwrap()
}

fn sk_solution(beta: f64, alpha: &DiscreteCdf) -> pde::PdeSolution {
    let model = MixtureModel::sk(beta).unwrap();
    let psi = MatrixPath::linear(SymMat::scalar(1.0)).unwrap();
    let derived = DerivedPath::new(&model, &psi).unwrap();
    pde::solve(&BaseMeasure::ising(), &derived, alpha, &GridSpec::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mixing_cdfs_stays_inside_the_segment(a in 0u64..1000, b in 0u64..1000, k in 1usize..5, lambda in 0.0f64..1.0) {
        let (x, y) = (cdf(a, k), cdf(b, k + 1));
        let z = x.mix(&y, lambda).unwrap();
        for i in 0..=50 {
            let s = i as f64 / 50.0;
            let want = (1.0 - lambda) * x.evaluate(s) + lambda * y.evaluate(s);
            prop_assert!((z.evaluate(s) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_decreases_in_time_and_has_bounded_gradient(seed in 0u64..1000, k in 1usize..4, beta in 0.1f64..1.2, x in -2.0f64..2.0) {
        let alpha = cdf(seed, k);
        let sol = sk_solution(beta, &alpha);
        let ts = [0.0, 0.25, 0.5, 0.75, 1.0];
        let vals: Vec<f64> = ts.iter().map(|&t| sol.eval(t, &[x]).unwrap()).collect();
        prop_assert!((vals[4] - x.cosh().ln()).abs() < 1e-12);
        for w in vals.windows(2) {
            prop_assert!(w[0] >= w[1] - 1e-6, "{vals:?}");
        }
        // the spins have unit norm, so Φ(s, ·) is 1-Lipschitz
        prop_assert!(sol.grad(0.0, &[x]).unwrap()[0].abs() <= 1.0 + 1e-4);
        prop_assert!(sol.max_grid_gradient() <= 1.0 + 1e-6);
    }

    #[test]
    fn functional_terms_add_up(seed in 0u64..1000, k in 1usize..4, beta in 0.1f64..1.2) {
        let model = MixtureModel::sk(beta).unwrap();
        let psi = MatrixPath::linear(SymMat::scalar(1.0)).unwrap();
        let v = functional::evaluate(&model, &psi, &cdf(seed, k), &BaseMeasure::ising(), &GridSpec::default()).unwrap();
        prop_assert!((v.total - (v.term_phi + v.term_theta + v.term_int)).abs() < 1e-13);
        prop_assert!((v.term_int - v.term_int_quadrature).abs() < 1e-9);
        prop_assert!(v.term_int <= 1e-15);
    }

    #[test]
    fn tilt_on_the_simplex_is_a_uniform_shift(d in 1usize..4, b2 in 0.1f64..2.0, b3 in 0.0f64..1.0) {
        let model = MixtureModel::new(d, &[(2, b2), (3, b3)]).unwrap();
        let base = BaseMeasure::potts_uniform(d).unwrap();
        let z = SymMat::identity(d).scale(1.0 / d as f64);
        let t = functional::tilt(&base, &model, &z).unwrap();
        // ∇ξ(Id/D) is diagonal with entries Σ p β_p² D^{1−p}
        let df = d as f64;
        let diag = 2.0 * b2 * b2 / df + 3.0 * b3 * b3 / (df * df);
        let want = (-0.5 * diag).exp();
        prop_assert!((t.total_mass() - want).abs() < 1e-13);
        for a in t.atoms() {
            prop_assert!((a.weight - want / df).abs() < 1e-13);
        }
    }

    #[test]
    fn quadratic_potts_gamma_kills_the_constant_direction(d in 2usize..5, b2 in 0.1f64..2.0, s in 0.0f64..1.0) {
        let setup = PottsSetup::new(d, &[(2, b2)]).unwrap();
        let derived = setup.derived().unwrap();
        let w = setup.w();
        let g = derived.gamma(s);
        let gw = g.mul_vec(&w);
        prop_assert!(gw.iter().all(|v| v.abs() < 1e-12), "{gw:?}");
        // and γ = (2β²/D²)(D Id − 𝟙)
        let df = d as f64;
        let want = SymMat::identity(d).scale(df).sub(&SymMat::ones(d)).unwrap().scale(2.0 * b2 * b2 / (df * df));
        prop_assert!(g.sub(&want).unwrap().max_abs() < 1e-12);
    }
}

#[test]
fn sequential_and_parallel_solves_agree_bitwise() {
    let alpha = cdf(3, 3);
    let a = sk_solution(0.9, &alpha).to_csv();
    par::set_sequential(true);
    let b = sk_solution(0.9, &alpha).to_csv();
    par::set_sequential(false);
    assert_eq!(a, b);
}

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use parisi_core::mcoracle::NestedSampler;
use parisi_core::potts::{self, PottsSetup};
use parisi_core::{functional, par, pde, BaseMeasure, DerivedPath, DiscreteCdf, GridSpec, MatrixPath, MixtureModel, SymMat};

const MODES: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn potts_solve(c: &mut Criterion) {
    let setup = PottsSetup::new(2, &[(2, 1.0), (3, 1.0)]).unwrap();
    let derived = setup.derived().unwrap();
    let alpha = DiscreteCdf::new(vec![0.0, 0.3, 0.6, 1.0], vec![0.2, 0.5, 0.8, 1.0]).unwrap();
    let grid = potts::default_grid(2);
    let mut group = c.benchmark_group("potts_d2_solve");
    group.sample_size(10);
    for (name, seq) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| pde::solve(&setup.base, &derived, black_box(&alpha), &grid).unwrap());
        });
    }
    par::set_sequential(false);
    group.finish();
}

fn d1_functional(c: &mut Criterion) {
    let model = MixtureModel::sk(0.8).unwrap();
    let psi = MatrixPath::linear(SymMat::scalar(1.0)).unwrap();
    let alpha = DiscreteCdf::new(vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0], vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.0]).unwrap();
    let base = BaseMeasure::ising();
    let grid = GridSpec::new(None, 0.01, 31);
    let mut group = c.benchmark_group("d1_functional_fine");
    for (name, seq) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| functional::evaluate(&model, &psi, black_box(&alpha), &base, &grid).unwrap());
        });
    }
    par::set_sequential(false);
    group.finish();
}

fn nested_mc(c: &mut Criterion) {
    let model = MixtureModel::sk(0.8).unwrap();
    let psi = MatrixPath::linear(SymMat::scalar(1.0)).unwrap();
    let derived = DerivedPath::new(&model, &psi).unwrap();
    let alpha = DiscreteCdf::new(vec![0.0, 0.5, 1.0], vec![0.3, 0.7, 1.0]).unwrap();
    let sampler = NestedSampler::new(&alpha, &derived, &BaseMeasure::ising(), Some(vec![128, 128]), 7).unwrap();
    let mut group = c.benchmark_group("nested_mc");
    group.sample_size(10);
    for (name, seq) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| sampler.estimate_phi0(black_box(&[0.0]), 16).unwrap());
        });
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, potts_solve, d1_functional, nested_mc);
criterion_main!(benches);

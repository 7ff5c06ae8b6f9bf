use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sofic_spectra::group::GroupSpec;
use sofic_spectra::measure::{le_diagnostic_with, sample_configuration, LeParams, MeasureModel};
use sofic_spectra::operator::{assemble_induced_with, schrodinger_rule, InducedOperator};
use sofic_spectra::scalar::Value;
use sofic_spectra::sofic::{good_vertices_with, random_permutation_approximation, torus_approximation};
use sofic_spectra::spectral::{eigen_spectra, EigenOptions};
use sofic_spectra::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bernoulli() -> MeasureModel {
    MeasureModel::iid(vec![0.5, 0.5]).unwrap()
}

fn goodness(c: &mut Criterion) {
    let sigma = random_permutation_approximation(2, 20_000, 7).unwrap();
    let mut group = c.benchmark_group("goodness_f2_n20000_r3");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| good_vertices_with(&sigma, 3, exec).unwrap()));
    }
    group.finish();
}

fn assembly(c: &mut Criterion) {
    let sigma = torus_approximation(2, 128).unwrap();
    let rule = schrodinger_rule(&GroupSpec::lattice(2).unwrap(), &[Value::zero(), Value::int(2)]).unwrap();
    let rho = sample_configuration(&bernoulli(), &sigma, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let good = good_vertices_with(&sigma, 2, Execution::Parallel).unwrap();
    let mut group = c.benchmark_group("assembly_z2_n16384");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| assemble_induced_with(&rule, &sigma, &rho, &good, exec).unwrap()));
    }
    group.finish();
}

fn eigensolves(c: &mut Criterion) {
    let sigma = torus_approximation(2, 12).unwrap();
    let rule = schrodinger_rule(&GroupSpec::lattice(2).unwrap(), &[Value::zero(), Value::ratio(3, 2)]).unwrap();
    let good = good_vertices_with(&sigma, 2, Execution::Parallel).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hs: Vec<InducedOperator> = (0..8)
        .map(|_| {
            let rho = sample_configuration(&bernoulli(), &sigma, &mut rng).unwrap();
            assemble_induced_with(&rule, &sigma, &rho, &good, Execution::Sequential).unwrap()
        })
        .collect();
    let mut group = c.benchmark_group("eigen_spectra_8x144");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| eigen_spectra(&hs, EigenOptions::default(), exec).unwrap()));
    }
    group.finish();
}

fn le(c: &mut Criterion) {
    let sigmas: Vec<_> = [256, 1024].iter().map(|&n| torus_approximation(1, n).unwrap()).collect();
    let params = LeParams { radius: 2, eps: 0.05, samples: 64, seed: 3, ..LeParams::default() };
    let mut group = c.benchmark_group("le_diagnostic");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "z1"), &sigmas, |b, s| {
            b.iter(|| le_diagnostic_with(&bernoulli(), s, params, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, goodness, assembly, eigensolves, le);
criterion_main!(benches);

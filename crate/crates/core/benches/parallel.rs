use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use csduality::bayeslab::{simulate_batch, ExperimentConfig};
use csduality::distfam::{DiscreteFamily, DualPair};
use csduality::matrixcs::matrix_orthogonality_mc;
use csduality::par::Exec;
use csduality::roi::{roi_check_direct, Grid2D, RadialMeasure};
use csduality::seqcore::FactorialSequence;

fn modes() -> Vec<(&'static str, Exec)> {
    let mut v = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    v.push(("parallel", Exec::Parallel));
    v
}

fn orthogonality(c: &mut Criterion) {
    let seq = FactorialSequence::poisson(256);
    let measure = RadialMeasure::canonical(&seq).unwrap();
    let mut g = c.benchmark_group("matrix_orthogonality_mc");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::new(name, 4096), |b| {
            b.iter(|| matrix_orthogonality_mc(2, 2, &seq, &measure, 2, black_box(4096), 42, exec).unwrap())
        });
    }
    g.finish();
}

fn roi(c: &mut Criterion) {
    let pair = DualPair::canonical(DiscreteFamily::poisson(256), Exec::Sequential).unwrap();
    let mut g = c.benchmark_group("roi_check_direct");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::new(name, 8), |b| {
            b.iter(|| roi_check_direct(&pair, black_box(8), Grid2D::default(), exec).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let config = ExperimentConfig::coin(1000, 0.3, 7).unwrap();
    let mut g = c.benchmark_group("simulate_batch");
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::new(name, 20_000), |b| {
            b.iter(|| simulate_batch(&config, black_box(20_000), exec))
        });
    }
    g.finish();
}

criterion_group!(benches, orthogonality, roi, simulation);
criterion_main!(benches);

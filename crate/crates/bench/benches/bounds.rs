use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rkhs_envelope::{
    block_inverse, compute_delta_tilde, fit_nominal, kernel_vector, suboptimal_envelope, BoundProblem, DualMode,
    GpNoise, GpPosterior, NominalKind, SubOptimalEnvelope,
};
use rkhs_envelope_bench::{henon_problem, queries};
use std::hint::black_box;

fn optimal(c: &mut Criterion) {
    let mut g = c.benchmark_group("upper_bound");
    for count in [25, 64, 100] {
        let p = henon_problem(count, 1.0);
        let qs = queries(8);
        g.bench_with_input(BenchmarkId::from_parameter(count), &p, |b, p| {
            b.iter(|| {
                for x in &qs {
                    black_box(p.upper_bound(x).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn dual(c: &mut Criterion) {
    let p = henon_problem(100, 1.0);
    let qs = queries(4);
    let mut g = c.benchmark_group("dual_upper_bound");
    for (name, mode) in [("alternating", DualMode::alternating()), ("exact", DualMode::exact())] {
        g.bench_function(name, |b| {
            b.iter(|| {
                for x in &qs {
                    black_box(p.dual_upper_bound(x, mode, None).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn setup(c: &mut Criterion) {
    c.bench_function("problem_setup_100", |b| b.iter(|| black_box(henon_problem(100, 1.0))));
    let p = henon_problem(100, 1.0);
    let x = vec![0.37, -2.9];
    let col = kernel_vector(p.kernel(), p.dataset().inputs(), &x).unwrap();
    c.bench_function("block_inverse_100", |b| {
        b.iter(|| black_box(block_inverse(p.factorization(), &col, 1.0).unwrap()))
    });
    c.bench_function("delta_tilde_100", |b| b.iter(|| black_box(compute_delta_tilde(&p).unwrap())));
}

fn baselines(c: &mut Criterion) {
    let p: BoundProblem = henon_problem(100, 1.0);
    let qs = queries(64);
    let model = fit_nominal(&p, NominalKind::Krr { mu: 1e-4 }).unwrap();
    let env = SubOptimalEnvelope::new(&p, model).unwrap();
    c.bench_function("suboptimal_64_queries", |b| {
        b.iter(|| {
            for x in &qs {
                black_box(suboptimal_envelope(&env, &p, x).unwrap());
            }
        })
    });
    let gp = GpPosterior::fit(&p, 1.0 / 2.58, GpNoise::Variance).unwrap();
    c.bench_function("gp_64_queries", |b| {
        b.iter(|| {
            for x in &qs {
                black_box(gp.predict(x).unwrap());
            }
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = optimal, dual, setup, baselines
}
criterion_main!(benches);

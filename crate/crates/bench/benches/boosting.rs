use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mixreg_bench::boosting_problem;
use mixreg_core::boost::boost_fit;
use mixreg_core::estimate::{fit_bfgs, total_loss_and_gradient, BfgsOptions, Coefficients, Loss};
use mixreg_core::BoostConfig;

fn boosting(c: &mut Criterion) {
    let mut group = c.benchmark_group("boosting");
    group.sample_size(10);
    let config = BoostConfig {
        step_length: 0.05,
        m_stop: 100,
        cv_folds: 2,
        seed: 1,
    };
    for loss in [Loss::LogS, Loss::Crps] {
        let (spec, design, y) = boosting_problem(&["t2m", "pr", "sh", "tcc"], 1460, loss, 2);
        group.bench_function(BenchmarkId::new("100 iterations", loss), |b| {
            b.iter(|| boost_fit(&spec, &design, &y, &config).unwrap())
        });
        let zeros = Coefficients::zeros(&spec);
        group.bench_function(BenchmarkId::new("loss and gradient", loss), |b| {
            b.iter(|| total_loss_and_gradient(&spec, &zeros, &design, &y).unwrap())
        });
    }
    let (spec, design, y) = boosting_problem(&["t2m"], 1460, Loss::LogS, 3);
    group.bench_function("bfgs mixsamos-gb spec", |b| {
        b.iter(|| fit_bfgs(&spec, &design, &y, &BfgsOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, boosting);
criterion_main!(benches);

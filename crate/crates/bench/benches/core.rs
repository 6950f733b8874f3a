use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kdebias_bench::{bandwidth_2d, mixture_2d};
use kdebias_core::bias_analysis::bias_report;
use kdebias_core::lower_bound_lab::{blowup_sweep, geometric, FarPlacement, ScheduleKind};
use kdebias_core::quadrature::convolve_at;
use kdebias_core::{kde_estimate, Kernel, QuadOptions};

fn estimator(c: &mut Criterion) {
    let model = mixture_2d();
    let kernel = Kernel::gaussian(2);
    let h = bandwidth_2d(0.3);
    let queries: Vec<Vec<f64>> = (0..16).map(|i| vec![-1.5 + 0.2 * i as f64, 0.1]).collect();
    let mut group = c.benchmark_group("kde_estimate");
    for n in [1_000usize, 10_000, 100_000] {
        let samples = model.sample(n, 1).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &samples, |b, s| {
            b.iter(|| kde_estimate(s, &kernel, &h, &queries).unwrap())
        });
    }
    group.finish();
}

fn convolution(c: &mut Criterion) {
    let model = mixture_2d();
    let opts = QuadOptions::for_dim(2);
    let mut group = c.benchmark_group("convolve_at");
    for (name, kernel) in [("gaussian", Kernel::gaussian(2)), ("epanechnikov", Kernel::epanechnikov(2))] {
        for scale in [0.5, 0.05] {
            let h = bandwidth_2d(scale);
            group.bench_function(BenchmarkId::new(name, scale), |b| {
                b.iter(|| convolve_at(&kernel, &h, &model, &[0.3, -0.1], &opts).unwrap())
            });
        }
    }
    group.finish();
}

fn report(c: &mut Criterion) {
    let model = mixture_2d();
    let kernel = Kernel::gaussian(2);
    let h = bandwidth_2d(0.2);
    let opts = QuadOptions::for_dim(2);
    c.bench_function("bias_report_d2", |b| {
        b.iter(|| bias_report(&kernel, &h, &model, &[0.3, -0.1], 2, None, &opts).unwrap())
    });
}

fn blowup(c: &mut Criterion) {
    let Kernel::AdversarialRadial(params) = Kernel::adversarial(1.0, 2, 2, 10_000).unwrap() else {
        unreachable!()
    };
    let eps = geometric(0.5, 0.5, 6);
    let opts = QuadOptions::for_dim(2);
    let mut group = c.benchmark_group("blowup_sweep");
    group.sample_size(10);
    group.bench_function("d2_balanced", |b| {
        b.iter(|| blowup_sweep(params, ScheduleKind::Balanced, &eps, FarPlacement::SpikeAligned, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, estimator, convolution, report, blowup);
criterion_main!(benches);

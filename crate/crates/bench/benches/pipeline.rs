use bloomtax_bench::{corpus, imbalanced, vectors};
use bloomtax_core::evalkit::{compute_metrics, grid_search, CvConfig};
use bloomtax_core::features::{smote_balance, SmotePolicy};
use bloomtax_core::models::{LogRegConfig, ModelSpec, SvmConfig};
use bloomtax_core::pipeline::{evaluate, RunConfig};
use bloomtax_core::textprep::{normalize, PrepResources};
use bloomtax_core::{BloomLabel, ModelKind};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_prep(c: &mut Criterion) {
    let res = PrepResources::bundled();
    let sentences = corpus(100);
    c.bench_function("normalize/600", |b| {
        b.iter(|| {
            for s in &sentences {
                black_box(normalize(&s.text, &res));
            }
        })
    });
}

fn bench_models(c: &mut Criterion) {
    let (vocab, xs) = vectors(100, false);
    let mut g = c.benchmark_group("fit");
    let specs = [
        ("nb", ModelSpec::NaiveBayes { alpha: 0.5 }),
        ("lr", ModelSpec::LogisticRegression(LogRegConfig::default())),
        ("svm", ModelSpec::LinearSvm(SvmConfig::default())),
    ];
    for (name, spec) in specs {
        g.bench_with_input(BenchmarkId::from_parameter(name), &spec, |b, spec| {
            b.iter(|| spec.fit(black_box(&xs), &vocab, 1).unwrap())
        });
    }
    g.finish();
}

fn bench_smote(c: &mut Criterion) {
    let (_, xs) = vectors(100, false);
    let skewed = imbalanced(&xs);
    c.bench_function("smote_balance/450", |b| {
        b.iter(|| smote_balance(black_box(&skewed), &SmotePolicy::default()).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    let y_true: Vec<BloomLabel> = (0..10_000).map(|i| BloomLabel::ALL[i % 6]).collect();
    let y_pred: Vec<BloomLabel> = (0..10_000).map(|i| BloomLabel::ALL[(i * 7 / 5) % 6]).collect();
    c.bench_function("compute_metrics/10k", |b| {
        b.iter(|| compute_metrics(black_box(&y_true), &y_pred).unwrap())
    });
}

fn bench_grid(c: &mut Criterion) {
    let (vocab, xs) = vectors(100, false);
    let grid: Vec<ModelSpec> = [1e-4, 1e-3, 1e-2, 1e-1]
        .into_iter()
        .map(|lambda| ModelSpec::LinearSvm(SvmConfig { lambda, epochs: 30 }))
        .collect();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("svm_grid_5fold", |b| {
        b.iter(|| grid_search(black_box(&xs), &vocab, &grid, &CvConfig::default()).unwrap())
    });
    let sentences = corpus(100);
    let cfg = RunConfig {
        models: vec![ModelKind::LinearSvm],
        ..RunConfig::default()
    };
    g.bench_function("evaluate_svm_600", |b| {
        b.iter(|| evaluate(&cfg, black_box(&sentences)).unwrap())
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_prep,
    bench_models,
    bench_smote,
    bench_metrics,
    bench_grid
);
criterion_main!(benches);

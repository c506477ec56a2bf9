use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use diary_core::analysis::machine_code;
use diary_core::simulate::SimulationOptions;
use diary_core::stats::{studentized_range_cdf, tukey_hsd, GroupSummary};
use diary_core::synthetic::{bundled_script, BUNDLED_SEED};
use diary_core::{simulate, Codebook, StudyConfig, StudyDb};

fn srange(c: &mut Criterion) {
    c.bench_function("studentized_range_cdf k=3 df=21", |b| {
        b.iter(|| studentized_range_cdf(black_box(3.1), 3, black_box(21.0)).unwrap())
    });
    c.bench_function("studentized_range_cdf k=10 df=5", |b| {
        b.iter(|| studentized_range_cdf(black_box(4.0), 10, black_box(5.0)).unwrap())
    });
}

fn tukey(c: &mut Criterion) {
    let groups = vec![
        GroupSummary::new("robot", 8, 286.0, 166.0),
        GroupSummary::new("audio", 8, 394.0, 299.0),
        GroupSummary::new("text", 8, 130.0, 30.9),
    ];
    c.bench_function("tukey_hsd 3 groups", |b| {
        b.iter(|| tukey_hsd(black_box(&groups)).unwrap())
    });
}

fn study(c: &mut Criterion) {
    let script = bundled_script(BUNDLED_SEED);
    let mut group = c.benchmark_group("study");
    group.sample_size(10);
    group.bench_function("simulate bundled 24-participant week", |b| {
        b.iter(|| {
            simulate(
                &script,
                SimulationOptions::default(),
                StudyDb::in_memory(StudyConfig::default()),
            )
            .unwrap()
        })
    });
    let (service, _) = simulate(
        &script,
        SimulationOptions::default(),
        StudyDb::in_memory(StudyConfig::default()),
    )
    .unwrap();
    let entries = service.with_store(|s| s.entries().to_vec());
    let codebook = Codebook::bundled();
    group.bench_function("machine-code 162 entries", |b| {
        b.iter(|| machine_code(black_box(&entries), &codebook).unwrap())
    });
    group.finish();
}

criterion_group!(benches, srange, tukey, study);
criterion_main!(benches);

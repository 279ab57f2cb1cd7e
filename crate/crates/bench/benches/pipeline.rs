use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use modp_bench::testbed;
use modp_core::dataset::crosstab;
use modp_core::synthesis::instantiate;
use modp_core::training::{backward, LossParams};
use modp_core::{LossKind, MultiBladeModel};

fn bench_crosstab(c: &mut Criterion) {
    let m = testbed(10_000);
    c.bench_function("crosstab 10k rows", |b| b.iter(|| crosstab(black_box(&m))));
}

fn bench_model(c: &mut Criterion) {
    let m = testbed(4096);
    let model = MultiBladeModel::new(m.layout().clone(), 5, 15, 0).unwrap();
    c.bench_function("forward model_5_15 4096 rows", |b| b.iter(|| model.forward(black_box(&m)).unwrap()));
    let params = LossParams::default();
    c.bench_function("backward mse 4096 rows", |b| {
        b.iter(|| backward(&model, black_box(&m), LossKind::Mse, params).unwrap())
    });
    c.bench_function("backward zval 4096 rows", |b| {
        b.iter(|| backward(&model, black_box(&m), LossKind::Zval, params).unwrap())
    });
}

fn bench_instantiate(c: &mut Criterion) {
    let m = testbed(4096);
    let model = MultiBladeModel::new(m.layout().clone(), 5, 15, 0).unwrap();
    let probs = model.forward(&m).unwrap();
    let mut seed = 0;
    c.bench_function("instantiate 4096 rows", |b| {
        b.iter_batched(
            || {
                seed += 1;
                seed
            },
            |s| instantiate(&probs, m.layout(), s, 0).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_crosstab, bench_model, bench_instantiate);
criterion_main!(benches);

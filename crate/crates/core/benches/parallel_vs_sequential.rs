use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fair_core::data::{fixture_path, prepare, Schema};
use fair_core::fairmodels::{DatasetKind, Family};
use fair_core::par::{self, ExecMode};
use fair_core::train::{train, TrainConfig};

fn sweep_runs(c: &mut Criterion) {
    let schema = Schema::load(fixture_path("german_sex.schema.json")).unwrap();
    let prepared = prepare(fixture_path("german_credit.csv"), &schema, 0).unwrap();
    let configs: Vec<TrainConfig> = [0.0, 1.0, 10.0, 1e3]
        .into_iter()
        .flat_map(|alpha| {
            (0..2).map(move |seed| {
                let mut c = TrainConfig::new(DatasetKind::GermanSex, Family::FairScalar, alpha, seed);
                c.max_epochs = 5;
                c.patience = 5;
                c
            })
        })
        .collect();
    let mut group = c.benchmark_group("eight_training_runs");
    group.sample_size(10);
    for mode in [ExecMode::Sequential, ExecMode::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| par::map(mode, &configs, |c| train(c, &prepared.splits).unwrap().log.best_epoch))
        });
    }
    group.finish();
}

criterion_group!(benches, sweep_runs);
criterion_main!(benches);

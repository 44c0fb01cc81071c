use criterion::{criterion_group, criterion_main, Criterion};

fn config() -> Criterion {
    Criterion::default().sample_size(10)
}

criterion_group! {
    name = benches;
    config = config();
    targets = burgers_bench::benchmarks
}
criterion_main!(benches);

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use verasel_bench::{nodes, populated_board, SEED};
use verasel_core::crypto::{ecvrf, Backend, Vrf};
use verasel_core::protocol::{client_collect, honest_roster};
use verasel_core::selection::{assign_layers, select_active_set};
use verasel_core::Threshold;

fn vrf(c: &mut Criterion) {
    let key = &nodes(1)[0].0;
    let sk = *key.secret().as_bytes();
    let pk = key.public();
    let (_, pi) = ecvrf::prove(&sk, &SEED);
    c.bench_function("ecvrf/prove", |b| {
        b.iter(|| ecvrf::prove(&sk, black_box(&SEED)))
    });
    c.bench_function("ecvrf/verify", |b| {
        b.iter(|| ecvrf::verify(pk.as_bytes(), black_box(&SEED), &pi))
    });
    c.bench_function("mock/prove", |b| {
        b.iter(|| Backend::Mock.prove(key, black_box(&SEED)))
    });
}

fn selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("select_active_set");
    for n in [100, 1000, 10_000] {
        let roster = honest_roster(&nodes(n), &SEED, Backend::Mock);
        let tau = Threshold::new(1, 2).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &roster, |b, r| {
            b.iter(|| select_active_set(r, tau).unwrap())
        });
    }
    group.finish();

    let roster = honest_roster(&nodes(1000), &SEED, Backend::Mock);
    let all = select_active_set(&roster, Threshold::FULL).unwrap();
    c.bench_function("assign_layers/1000", |b| {
        b.iter(|| assign_layers(&all, &roster, 3).unwrap())
    });
}

fn collect(c: &mut Criterion) {
    let mut group = c.benchmark_group("client_collect/1000");
    group.sample_size(10);
    let n = nodes(1000);
    for backend in [Backend::Mock, Backend::Ecvrf] {
        let board = populated_board(&n, backend);
        group.bench_function(backend.name(), |b| {
            b.iter(|| client_collect(&board, 1, &SEED, backend))
        });
    }
    group.finish();
}

criterion_group!(benches, vrf, selection, collect);
criterion_main!(benches);

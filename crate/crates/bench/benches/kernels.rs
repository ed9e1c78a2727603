use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use poolforge::layers::{netvlad, NetVladParams};
use poolforge::tensor::{kernels, random};
use poolforge::{ParamStore, Tape};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256, 1024] {
        let mut rng = random::rng(1);
        let a = random::normal([32, n], 1.0, &mut rng);
        let b = random::normal([n, 64], 1.0, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| kernels::matmul(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn netvlad_forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("netvlad");
    for (dim, clusters) in [(128, 8), (1024, 8), (1024, 64)] {
        let mut rng = random::rng(2);
        let mut store = ParamStore::new();
        NetVladParams::init(&mut store, "vlad", dim, clusters, &mut rng);
        let x = random::normal([8, 32, dim], 1.0, &mut rng);
        group.bench_function(format!("{dim}x{clusters}"), |bench| {
            bench.iter(|| {
                let mut tape = Tape::new();
                store.bind(&mut tape);
                let params = NetVladParams::bind(&tape, "vlad").unwrap();
                let xv = tape.constant(x.clone());
                let v = netvlad(&mut tape, xv, &params, 1.0, None).unwrap();
                let s = tape.sum(v).unwrap();
                black_box(tape.backward(s).unwrap());
            })
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, netvlad_forward_backward);
criterion_main!(benches);

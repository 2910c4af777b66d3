use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use langdiar::hungarian_match;
use langdiar_bench::cost_matrix;

fn bench(c: &mut Criterion) {
    let mut g = c.benchmark_group("hungarian");
    for (rows, cols) in [(4, 2), (4, 4), (16, 16), (64, 64)] {
        let m = cost_matrix(rows, cols, 1);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{rows}x{cols}")), &m, |b, m| {
            b.iter(|| hungarian_match(black_box(m)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);

use candle_core::DType;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use langdiar::nn::{Mode, ParamStore};
use langdiar::{Featurizer, LanguageDiarizer, ModelConfig};
use langdiar_bench::noise;

fn bench(c: &mut Criterion) {
    let wav = noise(10.0, 1);
    let mut g = c.benchmark_group("featurizer/10s");
    g.sample_size(10);
    for d in [32, 64] {
        let mut store = ParamStore::new(0, DType::F32);
        let feat = Featurizer::new(&mut store, &ModelConfig::desk(d).featurizer).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(d), &feat, |b, f| b.iter(|| f.extract(black_box(&wav)).unwrap()));
    }
    g.finish();

    let model = LanguageDiarizer::new(&ModelConfig::desk(32), 0, DType::F32).unwrap();
    let mut g = c.benchmark_group("forward/10s");
    g.sample_size(10);
    g.bench_function("desk-32", |b| b.iter(|| model.forward(black_box(&wav), &Mode::Eval).unwrap()));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);

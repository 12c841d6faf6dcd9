//! Single worker vs the full pool on the volume kernels and both pipelines.
//!
//! `cargo bench -p stereo-costvol` times the rayon build; add
//! `--no-default-features` for the sequential fallback, where both rows run
//! on the calling thread.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stereo_costvol::acv::{mapm_level, PatchWeights};
use stereo_costvol::io::{generate_stereogram, StereogramSpec};
use stereo_costvol::par::{is_parallel, with_threads};
use stereo_costvol::pipeline::{box3d_regularize, run_pipeline, PipelineConfig, PipelineMode};
use stereo_costvol::rng::SeededRng;
use stereo_costvol::volume::group_correlation;

fn settings() -> Vec<(&'static str, Option<usize>)> {
    if is_parallel() {
        vec![("threads=1", Some(1)), ("pool", None)]
    } else {
        vec![("sequential", None)]
    }
}

fn kernels(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let (l, r) = (rng.feature_map(64, 64, 120), rng.feature_map(64, 64, 120));
    let weights = PatchWeights::uniform(2).unwrap();
    let volume = rng.volume(8, 48, 64, 120);
    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (name, threads) in settings() {
        g.bench_function(BenchmarkId::new("group_correlation", name), |b| {
            b.iter(|| with_threads(threads, || group_correlation(&l, &r, 48, 16).unwrap()))
        });
        g.bench_function(BenchmarkId::new("mapm_level", name), |b| {
            b.iter(|| with_threads(threads, || mapm_level(&l, &r, 2, &weights, 48, 16).unwrap()))
        });
        g.bench_function(BenchmarkId::new("box3d_regularize", name), |b| {
            b.iter(|| with_threads(threads, || box3d_regularize(&volume, 1)))
        });
    }
    g.finish();
}

fn pipelines(c: &mut Criterion) {
    let s = generate_stereogram(&StereogramSpec::constant(256, 480, 8, 1)).unwrap();
    let mut g = c.benchmark_group("pipelines");
    g.sample_size(10);
    for mode in [PipelineMode::Acv, PipelineMode::FastAcv] {
        let cfg = PipelineConfig::new(mode, 192);
        for (name, threads) in settings() {
            g.bench_function(BenchmarkId::new(mode.name(), name), |b| {
                b.iter(|| with_threads(threads, || run_pipeline(&s.left, &s.right, &cfg).unwrap()))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, kernels, pipelines);
criterion_main!(benches);

//! Parallel vs sequential throughput of the heavy stages.
//!
//! With the default `parallel` feature each benchmark runs twice: on the
//! global rayon pool and inside a one-thread pool. Built with
//! `--no-default-features` only the sequential code path exists and the
//! benchmarks run once under the `sequential` label.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dynvo::pipeline::{Pipeline, PipelineConfig};
use dynvo::superpixel::{extract_superpixels, SlicParams};
use dynvo::synth::{generate_scene, presets, SyntheticSequence};

fn scene() -> SyntheticSequence {
    generate_scene(&presets::moving_object(3, 1)).expect("preset renders")
}

/// Runs `f` once per available execution mode.
fn modes(mut f: impl FnMut(&str, &dyn Fn(&mut (dyn FnMut() + Send)))) {
    #[cfg(feature = "parallel")]
    {
        f("parallel", &|work: &mut (dyn FnMut() + Send)| work());
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
        f("sequential", &move |work: &mut (dyn FnMut() + Send)| one.install(&mut *work));
    }
    #[cfg(not(feature = "parallel"))]
    f("sequential", &|work: &mut (dyn FnMut() + Send)| work());
}

fn superpixels(c: &mut Criterion) {
    let seq = scene();
    let frame = &seq.frames[0];
    let params = SlicParams::default();
    let mut group = c.benchmark_group("superpixels_640x480");
    group.sample_size(10);
    modes(|name, run| {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                run(&mut || {
                    black_box(extract_superpixels(&frame.color, &frame.depth, &params).unwrap());
                })
            })
        });
    });
    group.finish();
}

fn frame_pair(c: &mut Criterion) {
    let seq = scene();
    let config = PipelineConfig {
        intrinsics: seq.intrinsics,
        ..PipelineConfig::default()
    };
    let mut group = c.benchmark_group("pipeline_two_frames_640x480");
    group.sample_size(10);
    modes(|name, run| {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                run(&mut || {
                    let mut pipeline = Pipeline::new(config).unwrap();
                    for frame in &seq.frames[..2] {
                        black_box(pipeline.process(frame).unwrap());
                    }
                })
            })
        });
    });
    group.finish();
}

criterion_group!(benches, superpixels, frame_pair);
criterion_main!(benches);

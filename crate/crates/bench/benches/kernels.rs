use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use shmkit::attention::EnsembleParams;
use shmkit::eval::map_mar;
use shmkit::fmap::{conv_lite, rotate, KernelSize, Rotation, SeededWeights};
use shmkit::gam::{gam_generate, DEFAULT_F_RATE};
use shmkit::hea::{ClassLabel, TaskId};
use shmkit::perturb::{occlude, rain_snow};
use shmkit::pipeline::{run_pipeline, PipelineConfig};
use shmkit::vcva::{vcva_pipeline, ChannelWeights, VcvaConfig};
use shmkit_bench::{synthetic_detections, synthetic_map};

fn fmap_kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("fmap");
    for side in [32, 64, 128] {
        let m = synthetic_map(4, side, side, 1);
        let k7 = SeededWeights::generate(2, 4 * 4 * 49);
        g.bench_with_input(BenchmarkId::new("conv7", side), &m, |b, m| {
            b.iter(|| conv_lite(black_box(m), &k7, 4, KernelSize::Seven).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("rotate90", side), &m, |b, m| {
            b.iter(|| rotate(black_box(m), Rotation::from_signed_degrees(90).unwrap()))
        });
    }
    g.finish();
}

fn gam(c: &mut Criterion) {
    let mut g = c.benchmark_group("gam_generate");
    g.sample_size(20);
    for side in [32, 64, 127] {
        let m = synthetic_map(3, side, side, 3);
        g.bench_with_input(BenchmarkId::from_parameter(side), &m, |b, m| {
            b.iter(|| {
                gam_generate(
                    black_box(m),
                    &EnsembleParams::default(),
                    Rotation::default(),
                    DEFAULT_F_RATE,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn vcva(c: &mut Criterion) {
    let m = synthetic_map(21, 64, 64, 4);
    let w = ChannelWeights::uniform(21);
    c.bench_function("vcva_pipeline/21x64x64", |b| {
        b.iter(|| vcva_pipeline(black_box(&m), &w, &VcvaConfig::default()).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let (dets, gts) = synthetic_detections(200, 5);
    let classes: Vec<ClassLabel> = TaskId::Task8.labels().collect();
    c.bench_function("map_mar/200", |b| {
        b.iter(|| map_mar(black_box(&dets), black_box(&gts), &classes))
    });
}

fn perturb(c: &mut Criterion) {
    let m = synthetic_map(3, 256, 256, 6)
        .map_values(|v| v.abs())
        .unwrap();
    c.bench_function("occlude/0.6", |b| {
        b.iter(|| occlude(black_box(&m), 0.6, 7).unwrap())
    });
    c.bench_function("rain_snow/0.03", |b| {
        b.iter(|| rain_snow(black_box(&m), 0.03, 7).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let m = synthetic_map(3, 32, 32, 8);
    let cfg = PipelineConfig::default();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(20);
    g.bench_function("run/3x32x32", |b| {
        b.iter(|| run_pipeline("b", black_box(&m), &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, fmap_kernels, gam, vcva, metrics, perturb, pipeline);
criterion_main!(benches);

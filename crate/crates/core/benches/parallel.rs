//! Sequential vs rayon execution of the batch-level hot paths.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use facepad_core::flow::{colorwheel_encode, FlowField, FlowNormalization};
use facepad_core::ingest::Label;
use facepad_core::models::{ArchConfig, TeacherModel};
use facepad_core::preprocess::SamplePair;
use facepad_core::Exec;

const SIDE: usize = 64;

fn samples(n: usize) -> Vec<SamplePair> {
    (0..n)
        .map(|i| {
            let plane = |k: usize| -> Vec<f32> {
                (0..3 * SIDE * SIDE)
                    .map(|j| (((j * 7 + i * 13 + k) % 97) as f32 / 48.0) - 1.0)
                    .collect()
            };
            SamplePair {
                rgb: plane(0),
                flow_img: plane(5),
                side: SIDE,
                label: if i % 2 == 0 { Label::Bonafide } else { Label::Attack },
                clip_id: format!("bench{i}"),
            }
        })
        .collect()
}

fn flows(n: usize) -> Vec<FlowField> {
    (0..n)
        .map(|i| {
            FlowField::from_fn(SIDE * 2, SIDE * 2, |y, x| {
                ((x as f32 * 0.05 + i as f32).sin() * 3.0, (y as f32 * 0.04).cos() * 2.0)
            })
        })
        .collect()
}

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn teacher_forward(c: &mut Criterion) {
    let model = TeacherModel::new(&ArchConfig::default(), 0).unwrap();
    let batch = samples(16);
    let mut group = c.benchmark_group("teacher_forward_16x64");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| model.forward(black_box(&batch), exec).unwrap())
        });
    }
    group.finish();
}

fn colorwheel_batch(c: &mut Criterion) {
    let fields = flows(32);
    let mut group = c.benchmark_group("colorwheel_32x128");
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| exec.map(black_box(&fields), |f| colorwheel_encode(f, FlowNormalization::PerImageMax)))
        });
    }
    group.finish();
}

criterion_group!(benches, teacher_forward, colorwheel_batch);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use heartlink_core::emotion::{map_sample, quantize};
use heartlink_core::relay::WireMessage;
use heartlink_core::session::{offline_pipeline, SynthSettings};
use heartlink_core::synth::render;
use heartlink_core::wav::encode_wav;
use heartlink_core::{BiosignalSample, CalibrationProfile, PlayerId, Preset};

fn bench_render(c: &mut Criterion) {
    let mut group = c.benchmark_group("render");
    group.throughput(Throughput::Elements(44_100));
    for preset in Preset::ALL {
        let p = preset.params(&Default::default());
        group.bench_with_input(BenchmarkId::from_parameter(preset), &p, |b, p| {
            b.iter(|| render(black_box(p), 1.0, 44_100).unwrap())
        });
    }
    group.finish();
}

fn bench_mapping(c: &mut Criterion) {
    let profile = CalibrationProfile::default();
    let sample = BiosignalSample::new(0, 97.0, 4.2).unwrap();
    c.bench_function("quantize", |b| {
        b.iter(|| quantize(black_box(97.0), 60.0, 120.0).unwrap())
    });
    c.bench_function("map_sample", |b| {
        b.iter(|| map_sample(black_box(&sample), &profile).unwrap())
    });
}

fn bench_encode(c: &mut Criterion) {
    let buf = render(&Preset::Angry.params(&Default::default()), 1.0, 44_100).unwrap();
    let mut group = c.benchmark_group("encode");
    group.throughput(Throughput::Bytes(buf.len() as u64 * 2));
    group.bench_function("wav_1s", |b| b.iter(|| encode_wav(black_box(&buf))));
    group.finish();

    let line = WireMessage::Sample {
        session_id: "bench".into(),
        player_id: PlayerId::A,
        sample: BiosignalSample::new(123_000, 88.5, 3.25).unwrap(),
    }
    .encode();
    c.bench_function("wire_decode_sample", |b| {
        b.iter(|| WireMessage::decode(black_box(line.trim_end())).unwrap())
    });
}

fn bench_pipeline(c: &mut Criterion) {
    let trace: Vec<BiosignalSample> = (0..60u32)
        .map(|i| BiosignalSample::new(u64::from(i) * 1000, 60.0 + f64::from(i), 1.0 + f64::from(i) * 0.15).unwrap())
        .collect();
    let settings = SynthSettings::default();
    let profile = CalibrationProfile::default();
    c.bench_function("offline_pipeline_60s", |b| {
        b.iter(|| offline_pipeline(black_box(&trace), &profile, &settings).unwrap())
    });
}

criterion_group!(benches, bench_render, bench_mapping, bench_encode, bench_pipeline);
criterion_main!(benches);

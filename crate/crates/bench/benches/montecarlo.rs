use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use emfsec_core::montecarlo::{empirical_exposure, empirical_sop, SampleSpec};
use emfsec_core::sca::{initialize, NoiseConfig};
use emfsec_core::{ChannelDescription, ChannelModel, ComplexMatrix, OutageSpec, C64};
use std::hint::black_box;

const DRAWS: u64 = 100_000;

fn outage(c: &mut Criterion) {
    let h_u = ComplexMatrix::from_rows(&[vec![C64::new(0.8, -0.3), C64::new(-0.2, 0.9)]]);
    let ch = ChannelModel::new(ChannelDescription::isotropic(h_u, 1, 0.1, 0.1, 0.1)).unwrap();
    let spec = OutageSpec {
        epsilon: 0.05,
        delta: 0.05,
        exposure_limit: 10.0,
        bs_power: 10.0,
        ue_power: 10.0,
    };
    let cov = initialize(&ch, &spec, NoiseConfig::BOTH);
    let samples = SampleSpec::new(DRAWS, 7);
    let mut group = c.benchmark_group("monte_carlo");
    group.throughput(Throughput::Elements(DRAWS));
    group.sample_size(20);
    group.bench_function("sop", |b| {
        b.iter(|| empirical_sop(black_box(&ch), black_box(&cov), &samples))
    });
    group.bench_function("exposure", |b| {
        b.iter(|| empirical_exposure(black_box(&ch), black_box(&cov), spec.exposure_limit, &samples))
    });
    group.finish();
}

criterion_group!(benches, outage);
criterion_main!(benches);

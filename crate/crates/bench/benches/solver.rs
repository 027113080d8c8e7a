use criterion::{criterion_group, criterion_main, Criterion};
use emfsec_core::model::{taylor_eve, taylor_exposure, FenchelPoint};
use emfsec_core::sca::{initialize, optimize, NoiseConfig, ScaOptions};
use emfsec_core::subproblem::{solve_subproblem, Penalties, SubproblemSpec, DEFAULT_SUBPROBLEM_TOL};
use emfsec_core::{ChannelDescription, ChannelModel, ComplexMatrix, OutageSpec, C64};
use std::hint::black_box;

fn reference() -> (ChannelModel, OutageSpec) {
    let h_u = ComplexMatrix::from_rows(&[vec![C64::new(0.8, -0.3), C64::new(-0.2, 0.9)]]);
    let ch = ChannelModel::new(ChannelDescription::isotropic(h_u, 1, 0.1, 0.1, 0.1)).unwrap();
    let spec = OutageSpec {
        epsilon: 0.05,
        delta: 0.05,
        exposure_limit: 10.0,
        bs_power: 10.0,
        ue_power: 10.0,
    };
    (ch, spec)
}

fn subproblem(c: &mut Criterion) {
    let (ch, spec) = reference();
    let anchor = initialize(&ch, &spec, NoiseConfig::BOTH);
    let sub = SubproblemSpec {
        fenchel: FenchelPoint::at(&ch, &anchor),
        eve: taylor_eve(&ch, &anchor),
        exposure: taylor_exposure(&ch, &anchor, spec.exposure_limit),
        epsilon: spec.epsilon,
        delta: spec.delta,
        bs_power: spec.bs_power,
        ue_power: spec.ue_power,
        penalties: Penalties::uniform(1.0),
        anchor,
        bs_noise_enabled: true,
        ue_noise_enabled: true,
    };
    c.bench_function("solve_subproblem", |b| {
        b.iter(|| solve_subproblem(black_box(&ch), black_box(&sub), DEFAULT_SUBPROBLEM_TOL))
    });
}

fn sca(c: &mut Criterion) {
    let (ch, spec) = reference();
    let opts = ScaOptions::default();
    let mut group = c.benchmark_group("optimize");
    group.sample_size(10);
    for cfg in [NoiseConfig::NONE, NoiseConfig::BOTH] {
        group.bench_function(cfg.name(), |b| b.iter(|| optimize(black_box(&ch), &spec, cfg, &opts)));
    }
    group.finish();
}

criterion_group!(benches, subproblem, sca);
criterion_main!(benches);

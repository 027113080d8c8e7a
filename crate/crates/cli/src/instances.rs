//! Random problem instances for the validation checks.

use emfsec_core::quadform::SpectralProfile;
use emfsec_core::{ChannelDescription, ChannelModel, ComplexMatrix, CovarianceSet, Dimensions, HermitianMatrix, C64};
use rand::Rng;

pub fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    C64::from_polar((-u.ln()).sqrt(), std::f64::consts::TAU * rng.gen::<f64>())
}

pub fn complex_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

pub fn hermitian(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
    HermitianMatrix::hermitian_part(&complex_matrix(rng, n, n))
}

/// Full-rank PSD matrix with the given trace.
pub fn psd(rng: &mut impl Rng, n: usize, trace: f64) -> HermitianMatrix {
    let a = complex_matrix(rng, n, n);
    let m = HermitianMatrix::hermitian_part(&a.matmul(&a.adjoint()));
    let t = m.trace();
    m.scale(trace / t)
}

pub fn covariances(rng: &mut impl Rng, dims: Dimensions, power: f64) -> CovarianceSet {
    let (a, b, c) = (
        rng.gen_range(0.1..1.0),
        rng.gen_range(0.0..0.5),
        rng.gen_range(0.0..1.0),
    );
    CovarianceSet {
        signal: psd(rng, dims.n_bs, a * power),
        bs_noise: psd(rng, dims.n_bs, b * power),
        ue_noise: psd(rng, dims.n_ue_tx, c * power),
        rate_threshold: rng.gen_range(0.0..2.0),
    }
}

/// Two-antenna base station and single-antenna user with random
/// eavesdropper and exposure covariances on the base-station side.
pub fn channel(rng: &mut impl Rng) -> ChannelModel {
    let h_u = complex_matrix(rng, 1, 2);
    let mut desc = ChannelDescription::isotropic(h_u, 1, 0.1, 0.1, rng.gen_range(0.05..1.0));
    desc.eve_from_bs = psd(rng, 2, 2.0);
    desc.exposure_from_bs = psd(rng, 2, 2.0);
    desc.eve_from_ue = HermitianMatrix::scaled_identity(1, rng.gen_range(0.2..2.0));
    desc.exposure_from_ue = HermitianMatrix::scaled_identity(1, rng.gen_range(0.2..2.0));
    ChannelModel::new(desc).expect("valid random channel")
}

/// Up to four clusters with multiplicities up to four, total dimension at
/// most eight, random signs and magnitudes log-uniform in `[1e-3, 1e3]`.
pub fn profile(rng: &mut impl Rng) -> SpectralProfile {
    loop {
        let k = rng.gen_range(1..=4);
        let mut lambdas = Vec::with_capacity(k);
        let mut mults = Vec::with_capacity(k);
        let mut dim = 0;
        for _ in 0..k {
            let m = rng.gen_range(1..=4u32);
            if dim + m > 8 {
                break;
            }
            dim += m;
            let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
            lambdas.push(if rng.gen::<bool>() { mag } else { -mag });
            mults.push(m);
        }
        if let Ok(p) = SpectralProfile::new(lambdas, mults) {
            return p;
        }
    }
}

/// Eigenvalues of a profile repeated by multiplicity.
pub fn expand(p: &SpectralProfile) -> Vec<f64> {
    p.lambdas()
        .iter()
        .zip(p.mults())
        .flat_map(|(&l, &m)| std::iter::repeat_n(l, m as usize))
        .collect()
}

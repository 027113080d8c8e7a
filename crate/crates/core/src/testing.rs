//! Random instances shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{ComplexMatrix, HermitianMatrix, C64};
use crate::model::{CovarianceSet, Dimensions};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Box-Muller pair of independent standard normals.
pub fn normal_pair(rng: &mut impl Rng) -> (f64, f64) {
    let u: f64 = 1.0 - rng.gen::<f64>();
    let v: f64 = rng.gen();
    let r = (-2.0 * u.ln()).sqrt();
    let t = std::f64::consts::TAU * v;
    (r * t.cos(), r * t.sin())
}

pub fn random_complex(rng: &mut impl Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        let (a, b) = normal_pair(rng);
        C64::new(a, b)
    })
}

pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
    HermitianMatrix::hermitian_part(&random_complex(rng, n, n))
}

/// Full-rank PSD matrix with trace `trace`.
pub fn random_psd(rng: &mut impl Rng, n: usize, trace: f64) -> HermitianMatrix {
    let a = random_complex(rng, n, n);
    let m = HermitianMatrix::hermitian_part(&a.matmul(&a.adjoint()));
    let t = m.trace();
    m.scale(trace / t)
}

pub fn random_cov(rng: &mut impl Rng, dims: Dimensions, power: f64) -> CovarianceSet {
    let (a, b, c): (f64, f64, f64) = (
        rng.gen_range(0.1..1.0),
        rng.gen_range(0.0..0.5),
        rng.gen_range(0.0..1.0),
    );
    CovarianceSet {
        signal: random_psd(rng, dims.n_bs, a * power),
        bs_noise: random_psd(rng, dims.n_bs, b * power),
        ue_noise: random_psd(rng, dims.n_ue_tx, c * power),
        rate_threshold: rng.gen_range(0.0..2.0),
    }
}

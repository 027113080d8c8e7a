//! Sampling oracle for the closed-form outage probabilities.
//!
//! Draws are split into fixed-size chunks; chunk `i` uses the ChaCha stream
//! `i` of the generator keyed by the seed, so estimates do not depend on the
//! number of worker threads.

use std::f64::consts::TAU;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{half_factor, ComplexMatrix, HermitianMatrix, C64};
use crate::model::{rate_eavesdropper, ChannelModel, CovarianceSet};

/// Draw units (single draws or antithetic pairs) per chunk.
const CHUNK: u64 = 1 << 13;

/// How many draws to take and from which stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    /// Number of channel draws; rounded up to even when `antithetic` is set.
    pub n_samples: u64,
    pub seed: u64,
    /// Pair each draw with its mirror `U -> 1 - U` in the uniforms.
    pub antithetic: bool,
}

impl SampleSpec {
    pub fn new(n_samples: u64, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            antithetic: false,
        }
    }

    fn units(&self) -> u64 {
        if self.antithetic {
            self.n_samples.div_ceil(2)
        } else {
            self.n_samples
        }
    }
}

/// Empirical probability with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: u64,
}

impl Estimate {
    /// `|estimate - reference|` in units of the standard error.
    ///
    /// A zero standard error counts as one binomial count.
    pub fn sigmas_from(&self, reference: f64) -> f64 {
        let floor = 1.0 / self.n_samples.max(1) as f64;
        (self.estimate - reference).abs() / self.std_error.max(floor)
    }
}

/// Uniform on the open interval `(0, 1)`, symmetric under `u -> 1 - u`.
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard complex Gaussian (unit-variance real and imaginary parts) from a
/// pair of uniforms in polar form.
fn polar_gaussian(u: f64, v: f64) -> C64 {
    C64::from_polar((-2.0 * u.ln()).sqrt(), TAU * v)
}

/// `h = L^H r` for `G = 2 L^H L`.
fn apply(factor_adj: &ComplexMatrix, r: &[C64]) -> Vec<C64> {
    factor_adj.mul_vec(r)
}

/// One draw of a Rayleigh channel with covariance `cov`.
pub fn sample_channel(cov: &HermitianMatrix, rng: &mut ChaCha8Rng) -> Result<Vec<C64>> {
    let l = half_factor(cov)?;
    let r: Vec<C64> = (0..cov.dim())
        .map(|_| {
            let u = open_uniform(rng);
            let v = open_uniform(rng);
            polar_gaussian(u, v)
        })
        .collect();
    Ok(apply(&l.adjoint(), &r))
}

#[derive(Clone, Copy, Default)]
struct Counts {
    /// Draw units with one and with two hits (two only for antithetic pairs).
    single: u64,
    double: u64,
}

/// Per-event hit fractions over `spec`, where `event` receives `dim`
/// uniform pairs on `(0, 1)`, a scratch buffer and one flag per event.
fn estimate_events<F>(dim: usize, n_events: usize, spec: &SampleSpec, event: F) -> Vec<Estimate>
where
    F: Fn(&[(f64, f64)], &mut Vec<C64>, &mut [bool]) + Sync,
{
    let units = spec.units();
    let chunks = units.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(c);
            let n = CHUNK.min(units - c * CHUNK);
            let mut uv = vec![(0.0, 0.0); dim];
            let mut mirror = vec![(0.0, 0.0); dim];
            let mut scratch = Vec::with_capacity(dim);
            let mut hit = vec![false; n_events];
            let mut hit2 = vec![false; n_events];
            let mut acc = vec![Counts::default(); n_events];
            for _ in 0..n {
                for p in uv.iter_mut() {
                    *p = (open_uniform(&mut rng), open_uniform(&mut rng));
                }
                event(&uv, &mut scratch, &mut hit);
                if spec.antithetic {
                    for (m, &(u, v)) in mirror.iter_mut().zip(&uv) {
                        *m = (1.0 - u, 1.0 - v);
                    }
                    event(&mirror, &mut scratch, &mut hit2);
                }
                for (k, a) in acc.iter_mut().enumerate() {
                    match u64::from(hit[k]) + u64::from(spec.antithetic && hit2[k]) {
                        1 => a.single += 1,
                        2 => a.double += 1,
                        _ => {}
                    }
                }
            }
            acc
        })
        .reduce(
            || vec![Counts::default(); n_events],
            |a, b| {
                a.iter()
                    .zip(&b)
                    .map(|(x, y)| Counts {
                        single: x.single + y.single,
                        double: x.double + y.double,
                    })
                    .collect()
            },
        );
    counts
        .into_iter()
        .map(|c| summarize(c, units, spec.antithetic))
        .collect()
}

fn summarize(c: Counts, units: u64, antithetic: bool) -> Estimate {
    let n = units.max(1) as f64;
    if !antithetic {
        let p = c.single as f64 / n;
        return Estimate {
            estimate: p,
            std_error: (p * (1.0 - p) / n).sqrt(),
            n_samples: units,
        };
    }
    // Unit values are 0, 1/2 or 1; the error comes from their sample variance.
    let mean = (0.5 * c.single as f64 + c.double as f64) / n;
    let second = (0.25 * c.single as f64 + c.double as f64) / n;
    let var = (second - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Estimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        n_samples: 2 * units,
    }
}

fn fill_gaussians(uv: &[(f64, f64)], r: &mut Vec<C64>) {
    r.clear();
    r.extend(uv.iter().map(|&(u, v)| polar_gaussian(u, v)));
}

/// Empirical `Prob(R_E <= rate_threshold)` over eavesdropper channel draws.
pub fn empirical_sop(ch: &ChannelModel, cov: &CovarianceSet, spec: &SampleSpec) -> Estimate {
    let dims = ch.dims();
    let l_bs = ch.eve_bs_factor().adjoint();
    let l_ue = ch.eve_ue_factor().adjoint();
    let sigma = ch.eve_noise();
    estimate_events(dims.n_bs + dims.n_ue_tx, 1, spec, |uv, r, hit| {
        fill_gaussians(uv, r);
        let h = apply(&l_bs, &r[..dims.n_bs]);
        let g = apply(&l_ue, &r[dims.n_bs..]);
        hit[0] = rate_eavesdropper(&h, &g, cov, sigma) <= cov.rate_threshold;
    })[0]
}

/// Empirical `Prob(P_D <= exposure_limit)` over exposure channel draws.
pub fn empirical_exposure(ch: &ChannelModel, cov: &CovarianceSet, exposure_limit: f64, spec: &SampleSpec) -> Estimate {
    let dims = ch.dims();
    let l_bs = ch.exposure_bs_factor().adjoint();
    let l_ue = ch.exposure_ue_factor().adjoint();
    let total = cov.signal.add(&cov.bs_noise);
    estimate_events(dims.n_bs + dims.n_ue_tx, 1, spec, |uv, r, hit| {
        fill_gaussians(uv, r);
        let h = apply(&l_bs, &r[..dims.n_bs]);
        let g = apply(&l_ue, &r[dims.n_bs..]);
        hit[0] = total.quad_form(&h) + cov.ue_noise.quad_form(&g) <= exposure_limit;
    })[0]
}

/// Empirical `Prob(sum_i lambda_i |r_i|^2 / 2 <= z)` for each `z`, all from
/// the same draws. `|r_i|^2 / 2` is a unit-rate exponential, matching the
/// closed form's convention.
pub fn empirical_form_cdfs(eigenvalues: &[f64], zs: &[f64], spec: &SampleSpec) -> Vec<Estimate> {
    estimate_events(eigenvalues.len(), zs.len(), spec, |uv, _, hit| {
        let q: f64 = eigenvalues.iter().zip(uv).map(|(l, &(u, _))| -l * u.ln()).sum();
        for (h, z) in hit.iter_mut().zip(zs) {
            *h = q <= *z;
        }
    })
}

/// Sorted eavesdropper rates over `n_samples` draws (not antithetic).
pub fn sample_eavesdropper_rates(ch: &ChannelModel, cov: &CovarianceSet, n_samples: usize, seed: u64) -> Vec<f64> {
    let dims = ch.dims();
    let l_bs = ch.eve_bs_factor().adjoint();
    let l_ue = ch.eve_ue_factor().adjoint();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<f64> = (0..n_samples)
        .map(|_| {
            let r: Vec<C64> = (0..dims.n_bs + dims.n_ue_tx)
                .map(|_| {
                    let u = open_uniform(&mut rng);
                    let v = open_uniform(&mut rng);
                    polar_gaussian(u, v)
                })
                .collect();
            let h = apply(&l_bs, &r[..dims.n_bs]);
            let g = apply(&l_ue, &r[dims.n_bs..]);
            rate_eavesdropper(&h, &g, cov, ch.eve_noise())
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{exposure_outage_prob, secrecy_outage_prob, ChannelDescription, Dimensions};
    use crate::quadform::{cdf, group_eigenvalues, DEFAULT_GROUPING_TOLERANCE};
    use crate::testing::{random_complex, random_cov, random_psd, rng};
    use rand::Rng;

    fn reference_channel(seed: u64) -> ChannelModel {
        let mut g = rng(seed);
        let h_u = random_complex(&mut g, 1, 2).scale(std::f64::consts::FRAC_1_SQRT_2);
        ChannelModel::new(ChannelDescription::isotropic(h_u, 1, 0.1, 0.1, 0.1)).unwrap()
    }

    #[test]
    fn channel_power_matches_covariance() {
        let mut g = rng(1);
        let cov = HermitianMatrix::identity(2);
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| {
                sample_channel(&cov, &mut g)
                    .unwrap()
                    .iter()
                    .map(|x| x.norm_sqr())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 2.0).abs() <= 0.01, "{mean}");
    }

    #[test]
    fn channel_degenerate_covariances() {
        let mut g = rng(2);
        let h = sample_channel(&HermitianMatrix::zeros(2), &mut g).unwrap();
        assert!(h.iter().all(|x| *x == C64::new(0.0, 0.0)));
        let h = sample_channel(&HermitianMatrix::from_diag(&[1.0, 0.0]), &mut g).unwrap();
        assert_eq!(h[1], C64::new(0.0, 0.0));
        assert!(h[0].norm() > 0.0);
    }

    #[test]
    fn zero_covariance_never_outages() {
        let ch = reference_channel(3);
        let cov = CovarianceSet::zeros(Dimensions::TWO_BY_ONE);
        let spec = SampleSpec::new(20_000, 9);
        assert_eq!(empirical_sop(&ch, &cov, &spec).estimate, 1.0);
        assert_eq!(empirical_exposure(&ch, &cov, 0.5, &spec).estimate, 1.0);
    }

    #[test]
    fn estimates_match_closed_forms() {
        let ch = reference_channel(4);
        let mut g = rng(40);
        for seed in 0..5 {
            let cov = random_cov(&mut g, Dimensions::TWO_BY_ONE, 10.0);
            let spec = SampleSpec::new(200_000, seed);
            let sop = empirical_sop(&ch, &cov, &spec);
            let closed = secrecy_outage_prob(&ch, &cov);
            assert!(sop.sigmas_from(closed) <= 4.0, "{sop:?} vs {closed}");
            let limit = g.gen_range(5.0..40.0);
            let exp = empirical_exposure(&ch, &cov, limit, &spec);
            let closed = exposure_outage_prob(&ch, &cov, limit);
            assert!(exp.sigmas_from(closed) <= 4.0, "{exp:?} vs {closed}");
        }
    }

    #[test]
    fn antithetic_estimates_are_consistent() {
        let ch = reference_channel(5);
        let mut g = rng(50);
        let cov = random_cov(&mut g, Dimensions::TWO_BY_ONE, 10.0);
        let spec = SampleSpec {
            n_samples: 200_000,
            seed: 1,
            antithetic: true,
        };
        let est = empirical_exposure(&ch, &cov, 15.0, &spec);
        assert_eq!(est.n_samples, 200_000);
        let closed = exposure_outage_prob(&ch, &cov, 15.0);
        assert!(est.sigmas_from(closed) <= 4.0, "{est:?} vs {closed}");
        let plain = empirical_exposure(&ch, &cov, 15.0, &SampleSpec::new(200_000, 1));
        assert!(est.std_error <= plain.std_error * 1.05);
    }

    #[test]
    fn form_cdf_matches_closed_form() {
        let lambdas = [2.0, 0.5, 0.5, -1.0];
        let p = group_eigenvalues(&lambdas, DEFAULT_GROUPING_TOLERANCE);
        let zs = [0.0, 1.0, 4.0];
        let ests = empirical_form_cdfs(&lambdas, &zs, &SampleSpec::new(400_000, 3));
        for (est, z) in ests.iter().zip(zs) {
            assert!(est.sigmas_from(cdf(&p, z)) <= 4.0, "{est:?} at {z}");
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let ch = reference_channel(6);
        let mut g = rng(60);
        let cov = random_cov(&mut g, Dimensions::TWO_BY_ONE, 10.0);
        let spec = SampleSpec::new(50_000, 77);
        let a = empirical_sop(&ch, &cov, &spec);
        let b = empirical_sop(&ch, &cov, &spec);
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        let other = empirical_sop(&ch, &cov, &SampleSpec::new(50_000, 78));
        assert_ne!(a.estimate.to_bits(), other.estimate.to_bits());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let ch = reference_channel(7);
        let mut g = rng(70);
        let cov = random_cov(&mut g, Dimensions::TWO_BY_ONE, 10.0);
        let spec = SampleSpec::new(3 * CHUNK + 17, 5);
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let a = pool(1).install(|| empirical_sop(&ch, &cov, &spec));
        let b = pool(3).install(|| empirical_sop(&ch, &cov, &spec));
        assert_eq!(a, b);
        assert_eq!(a.n_samples, 3 * CHUNK + 17);
    }

    #[test]
    fn rate_samples_are_sorted_and_nonnegative() {
        let ch = reference_channel(8);
        let mut g = rng(80);
        let mut cov = random_cov(&mut g, Dimensions::TWO_BY_ONE, 10.0);
        cov.signal = random_psd(&mut g, 2, 5.0);
        let rates = sample_eavesdropper_rates(&ch, &cov, 1000, 1);
        assert!(rates.windows(2).all(|w| w[0] <= w[1]));
        assert!(rates[0] >= 0.0);
    }
}

//! Rates, outage probabilities and their first-order models.
//!
//! All random channels are Rayleigh with covariance `G = 2 L^H L`, realised as
//! `h = L^H r` where each entry of `r` has unit-variance real and imaginary
//! parts. Rates are in bits per channel use; powers are linear.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{half_factor, ComplexMatrix, HermitianEigen, HermitianMatrix, C64};
use crate::quadform::{
    density, group_eigenvalues_indexed, lambda_derivatives, tail_probability, SpectralProfile,
    DEFAULT_GROUPING_TOLERANCE,
};

/// Antenna counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// Base-station transmit antennas.
    pub n_bs: usize,
    /// User transmit antennas (artificial noise).
    pub n_ue_tx: usize,
    /// User receive antennas.
    pub n_ue_rx: usize,
}

impl Dimensions {
    /// Two base-station antennas, single-antenna full-duplex user.
    pub const TWO_BY_ONE: Self = Self {
        n_bs: 2,
        n_ue_tx: 1,
        n_ue_rx: 1,
    };
}

/// Channel statistics as supplied by the caller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDescription {
    /// Base station to user, `n_ue_rx x n_bs`.
    pub h_u: ComplexMatrix,
    /// Worst-case self-interference gain of the user.
    pub self_interference: f64,
    /// Receiver noise covariance at the user.
    pub user_noise: HermitianMatrix,
    /// Receiver noise power at the eavesdropper.
    pub eve_noise: f64,
    /// Covariance of the base station to eavesdropper channel.
    pub eve_from_bs: HermitianMatrix,
    /// Covariance of the user to eavesdropper channel.
    pub eve_from_ue: HermitianMatrix,
    /// Covariance of the base station to exposure-point channel.
    pub exposure_from_bs: HermitianMatrix,
    /// Covariance of the user to exposure-point channel.
    pub exposure_from_ue: HermitianMatrix,
}

impl ChannelDescription {
    /// Identity channel covariances everywhere and white user noise.
    pub fn isotropic(
        h_u: ComplexMatrix,
        n_ue_tx: usize,
        self_interference: f64,
        user_noise: f64,
        eve_noise: f64,
    ) -> Self {
        let n_bs = h_u.cols();
        let n_rx = h_u.rows();
        Self {
            h_u,
            self_interference,
            user_noise: HermitianMatrix::scaled_identity(n_rx, user_noise),
            eve_noise,
            eve_from_bs: HermitianMatrix::identity(n_bs),
            eve_from_ue: HermitianMatrix::identity(n_ue_tx),
            exposure_from_bs: HermitianMatrix::identity(n_bs),
            exposure_from_ue: HermitianMatrix::identity(n_ue_tx),
        }
    }
}

/// Validated channel statistics with cached half factors.
#[derive(Clone, Debug)]
pub struct ChannelModel {
    desc: ChannelDescription,
    dims: Dimensions,
    eve_bs: ComplexMatrix,
    eve_ue: ComplexMatrix,
    exp_bs: ComplexMatrix,
    exp_ue: ComplexMatrix,
}

impl ChannelModel {
    pub fn new(desc: ChannelDescription) -> Result<Self> {
        let dims = Dimensions {
            n_bs: desc.h_u.cols(),
            n_ue_tx: desc.eve_from_ue.dim(),
            n_ue_rx: desc.h_u.rows(),
        };
        if dims.n_bs == 0 || dims.n_ue_tx == 0 || dims.n_ue_rx == 0 {
            return Err(Error::Dimension("antenna counts must be positive".into()));
        }
        if !desc.h_u.is_finite() {
            return Err(Error::NonFinite("user channel"));
        }
        let checks = [
            (
                "eavesdropper channel from the base station",
                &desc.eve_from_bs,
                dims.n_bs,
            ),
            (
                "exposure channel from the base station",
                &desc.exposure_from_bs,
                dims.n_bs,
            ),
            ("eavesdropper channel from the user", &desc.eve_from_ue, dims.n_ue_tx),
            ("exposure channel from the user", &desc.exposure_from_ue, dims.n_ue_tx),
            ("user noise covariance", &desc.user_noise, dims.n_ue_rx),
        ];
        for (name, m, n) in checks {
            if m.dim() != n {
                return Err(Error::Dimension(format!(
                    "{name} is {0}x{0}, expected {n}x{n}",
                    m.dim()
                )));
            }
        }
        if !desc.user_noise.is_positive_definite() {
            return Err(Error::NotPositiveDefinite);
        }
        if !(desc.eve_noise > 0.0 && desc.eve_noise.is_finite()) {
            return Err(Error::InvalidParameter(
                "eavesdropper noise power must be positive".into(),
            ));
        }
        if !(desc.self_interference >= 0.0 && desc.self_interference.is_finite()) {
            return Err(Error::InvalidParameter("self-interference gain must be >= 0".into()));
        }
        Ok(Self {
            eve_bs: half_factor(&desc.eve_from_bs)?,
            eve_ue: half_factor(&desc.eve_from_ue)?,
            exp_bs: half_factor(&desc.exposure_from_bs)?,
            exp_ue: half_factor(&desc.exposure_from_ue)?,
            desc,
            dims,
        })
    }

    pub fn description(&self) -> &ChannelDescription {
        &self.desc
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn h_u(&self) -> &ComplexMatrix {
        &self.desc.h_u
    }

    pub fn eve_noise(&self) -> f64 {
        self.desc.eve_noise
    }

    /// Half factor of the base station to eavesdropper covariance.
    pub fn eve_bs_factor(&self) -> &ComplexMatrix {
        &self.eve_bs
    }

    pub fn eve_ue_factor(&self) -> &ComplexMatrix {
        &self.eve_ue
    }

    pub fn exposure_bs_factor(&self) -> &ComplexMatrix {
        &self.exp_bs
    }

    pub fn exposure_ue_factor(&self) -> &ComplexMatrix {
        &self.exp_ue
    }

    /// Interference-plus-noise covariance at the user.
    pub fn interference(&self, bs_noise: &HermitianMatrix, ue_noise: &HermitianMatrix) -> HermitianMatrix {
        let n = self.dims.n_ue_rx;
        bs_noise
            .congruence(&self.desc.h_u)
            .add(&HermitianMatrix::scaled_identity(
                n,
                self.desc.self_interference * ue_noise.trace(),
            ))
            .add(&self.desc.user_noise)
    }

    /// Upper bound on the user rate over all covariances with signal power
    /// at most `bs_power`: interference never drops below the receiver noise
    /// and `Q <= bs_power I`.
    pub fn user_rate_bound(&self, bs_power: f64) -> f64 {
        let noise = &self.desc.user_noise;
        let full = noise.add(
            &HermitianMatrix::identity(self.dims.n_bs)
                .scale(bs_power.max(0.0))
                .congruence(&self.desc.h_u),
        );
        let la = full.ln_det().expect("noise covariance is positive definite");
        let lb = noise.ln_det().expect("noise covariance is positive definite");
        ((la - lb) / LN_2).max(0.0)
    }
}

/// Transmit covariances and the eavesdropper rate threshold (bits).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSet {
    /// Information-bearing signal covariance at the base station.
    pub signal: HermitianMatrix,
    /// Artificial-noise covariance at the base station.
    pub bs_noise: HermitianMatrix,
    /// Artificial-noise covariance at the user.
    pub ue_noise: HermitianMatrix,
    /// Eavesdropper rate the design tolerates, in bits per channel use.
    pub rate_threshold: f64,
}

impl CovarianceSet {
    pub fn zeros(dims: Dimensions) -> Self {
        Self {
            signal: HermitianMatrix::zeros(dims.n_bs),
            bs_noise: HermitianMatrix::zeros(dims.n_bs),
            ue_noise: HermitianMatrix::zeros(dims.n_ue_tx),
            rate_threshold: 0.0,
        }
    }

    pub fn bs_power(&self) -> f64 {
        self.signal.trace() + self.bs_noise.trace()
    }

    pub fn ue_power(&self) -> f64 {
        self.ue_noise.trace()
    }

    /// Scales all three covariances, leaving the rate threshold alone.
    pub fn scale_powers(&self, c: f64) -> Self {
        Self {
            signal: self.signal.scale(c),
            bs_noise: self.bs_noise.scale(c),
            ue_noise: self.ue_noise.scale(c),
            rate_threshold: self.rate_threshold,
        }
    }

    pub fn with_rate_threshold(&self, r: f64) -> Self {
        Self {
            rate_threshold: r,
            ..self.clone()
        }
    }

    /// `||dQ||_F + ||dQ_n||_F + ||dQbar_n||_F + |dR|`.
    pub fn distance(&self, other: &Self) -> f64 {
        self.signal.sub(&other.signal).frobenius_norm()
            + self.bs_noise.sub(&other.bs_noise).frobenius_norm()
            + self.ue_noise.sub(&other.ue_noise).frobenius_norm()
            + (self.rate_threshold - other.rate_threshold).abs()
    }

    pub fn is_finite(&self) -> bool {
        self.signal.is_finite()
            && self.bs_noise.is_finite()
            && self.ue_noise.is_finite()
            && self.rate_threshold.is_finite()
    }
}

/// Outage targets and power budgets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutageSpec {
    /// Allowed secrecy outage probability.
    pub epsilon: f64,
    /// Allowed exposure outage probability.
    pub delta: f64,
    /// Exposure limit at the protected point (linear power).
    pub exposure_limit: f64,
    /// Base-station transmit power budget.
    pub bs_power: f64,
    /// User transmit power budget.
    pub ue_power: f64,
}

impl OutageSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.epsilon) || !unit(self.delta) {
            return Err(Error::InvalidParameter(
                "outage probabilities must lie in (0, 1)".into(),
            ));
        }
        for (name, v) in [
            ("exposure limit", self.exposure_limit),
            ("base-station power", self.bs_power),
            ("user power", self.ue_power),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// `2^r - 1` without cancellation for small `r`.
pub fn snr_factor(rate_bits: f64) -> f64 {
    (rate_bits * LN_2).exp_m1()
}

/// Achievable rate of the legitimate user.
pub fn rate_legitimate(ch: &ChannelModel, cov: &CovarianceSet) -> f64 {
    let b = ch.interference(&cov.bs_noise, &cov.ue_noise);
    let a = b.add(&cov.signal.congruence(ch.h_u()));
    let la = a.ln_det().expect("signal-plus-noise covariance is positive definite");
    let lb = b
        .ln_det()
        .expect("interference-plus-noise covariance is positive definite");
    ((la - lb) / LN_2).max(0.0)
}

/// Eavesdropper rate for one channel realisation.
pub fn rate_eavesdropper(h_e: &[C64], h_e_ue: &[C64], cov: &CovarianceSet, eve_noise: f64) -> f64 {
    let s = cov.signal.quad_form(h_e);
    let n = cov.ue_noise.quad_form(h_e_ue) + cov.bs_noise.quad_form(h_e) + eve_noise;
    (s / n).ln_1p().max(0.0) / LN_2
}

pub fn secrecy_rate(r_u: f64, r_e: f64) -> f64 {
    (r_u - r_e).max(0.0)
}

/// Operating point of the concave lower bound on the user rate.
#[derive(Clone, Debug)]
pub struct FenchelPoint {
    b_star: HermitianMatrix,
    b_inv: HermitianMatrix,
    ln_det: f64,
}

impl FenchelPoint {
    pub fn new(b_star: HermitianMatrix) -> Result<Self> {
        let ln_det = b_star.ln_det().map_err(|_| Error::NotPositiveDefinite)?;
        let b_inv = b_star.inverse()?;
        Ok(Self { b_star, b_inv, ln_det })
    }

    /// Touching point at the interference covariance of `cov`.
    pub fn at(ch: &ChannelModel, cov: &CovarianceSet) -> Self {
        Self::new(ch.interference(&cov.bs_noise, &cov.ue_noise)).expect("user noise covariance is positive definite")
    }

    pub fn matrix(&self) -> &HermitianMatrix {
        &self.b_star
    }

    pub fn inverse(&self) -> &HermitianMatrix {
        &self.b_inv
    }

    pub fn ln_det(&self) -> f64 {
        self.ln_det
    }
}

/// Concave lower bound on [`rate_legitimate`], tight when the interference
/// covariance equals the Fenchel point.
pub fn fenchel_lower_bound(ch: &ChannelModel, cov: &CovarianceSet, fp: &FenchelPoint) -> f64 {
    let b = ch.interference(&cov.bs_noise, &cov.ue_noise);
    let a = b.add(&cov.signal.congruence(ch.h_u()));
    let la = a.ln_det().expect("signal-plus-noise covariance is positive definite");
    let n = ch.dims().n_ue_rx as f64;
    (la - fp.ln_det - fp.b_inv.inner(&b) + n) / LN_2
}

/// Grouped spectrum of an outage event together with the eigenbases it came
/// from.
#[derive(Clone, Debug)]
pub struct OutageSpectrum {
    pub profile: SpectralProfile,
    /// Threshold the quadratic form is compared against.
    pub z: f64,
    /// Eigendecomposition of the base-station side matrix.
    pub bs_basis: HermitianEigen,
    /// Eigendecomposition of the user side matrix.
    pub ue_basis: HermitianEigen,
    /// Cluster of each base-station eigenvalue followed by each user one.
    pub assignment: Vec<Option<usize>>,
}

impl OutageSpectrum {
    fn new(bs: &HermitianMatrix, ue: &HermitianMatrix, z: f64) -> Self {
        let bs_basis = bs.eig().expect("finite covariance");
        let ue_basis = ue.eig().expect("finite covariance");
        let raw: Vec<f64> = bs_basis.values.iter().chain(&ue_basis.values).copied().collect();
        let g = group_eigenvalues_indexed(&raw, DEFAULT_GROUPING_TOLERANCE);
        Self {
            profile: g.profile,
            z,
            bs_basis,
            ue_basis,
            assignment: g.assignment,
        }
    }

    /// `Prob(form <= z)`.
    pub fn cdf(&self) -> f64 {
        1.0 - tail_probability(&self.profile, self.z).probability
    }

    pub fn density(&self) -> f64 {
        density(&self.profile, self.z)
    }

    /// Derivative of the CDF with respect to each raw eigenvalue: the cluster
    /// derivative shared evenly among its copies, or minus the density for
    /// eigenvalues that were dropped as zero.
    fn per_copy_derivatives(&self) -> (Vec<f64>, Vec<f64>) {
        let cluster = lambda_derivatives(&self.profile, self.z);
        let at_zero = -self.density();
        let per: Vec<f64> = self
            .assignment
            .iter()
            .map(|a| match a {
                Some(k) => cluster[*k] / self.profile.mults()[*k] as f64,
                None => at_zero,
            })
            .collect();
        let split = self.bs_basis.values.len();
        (per[..split].to_vec(), per[split..].to_vec())
    }
}

/// `U diag(w) U^H`.
fn weighted_projector(eig: &HermitianEigen, w: &[f64]) -> HermitianMatrix {
    let u = &eig.vectors;
    let n = u.rows();
    let mut out = ComplexMatrix::zeros(n, n);
    for (k, &wk) in w.iter().enumerate() {
        for i in 0..n {
            let a = u[(i, k)] * wk;
            for j in 0..n {
                out[(i, j)] += a * u[(j, k)].conj();
            }
        }
    }
    HermitianMatrix::hermitian_part(&out)
}

/// `2 L^H D L`.
fn pull_back(d: &HermitianMatrix, l: &ComplexMatrix) -> HermitianMatrix {
    d.congruence(&l.adjoint()).scale(2.0)
}

/// Spectrum of the eavesdropper event `R_E <= rate_threshold`.
pub fn sop_spectrum(ch: &ChannelModel, cov: &CovarianceSet) -> OutageSpectrum {
    let c = snr_factor(cov.rate_threshold);
    let bs = cov
        .signal
        .sub(&cov.bs_noise.scale(c))
        .congruence(ch.eve_bs_factor())
        .scale(2.0);
    let ue = cov.ue_noise.congruence(ch.eve_ue_factor()).scale(-2.0 * c);
    OutageSpectrum::new(&bs, &ue, c * ch.eve_noise())
}

/// `Prob(R_E <= rate_threshold)` in closed form.
pub fn secrecy_outage_prob(ch: &ChannelModel, cov: &CovarianceSet) -> f64 {
    sop_spectrum(ch, cov).cdf()
}

/// Spectrum of the exposure event `P_D <= exposure_limit`.
pub fn exposure_spectrum(ch: &ChannelModel, cov: &CovarianceSet, exposure_limit: f64) -> OutageSpectrum {
    let bs = cov
        .signal
        .add(&cov.bs_noise)
        .congruence(ch.exposure_bs_factor())
        .scale(2.0);
    let ue = cov.ue_noise.congruence(ch.exposure_ue_factor()).scale(2.0);
    OutageSpectrum::new(&bs, &ue, exposure_limit)
}

/// `Prob(P_D <= exposure_limit)` in closed form.
pub fn exposure_outage_prob(ch: &ChannelModel, cov: &CovarianceSet, exposure_limit: f64) -> f64 {
    exposure_spectrum(ch, cov, exposure_limit).cdf()
}

/// First-order model of an outage probability around `origin`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaylorCoefficients {
    /// Probability at the expansion point.
    pub value: f64,
    pub origin: CovarianceSet,
    pub signal: HermitianMatrix,
    pub bs_noise: HermitianMatrix,
    pub ue_noise: HermitianMatrix,
    /// Derivative with respect to the rate threshold; zero for exposure.
    pub rate: f64,
    /// Closest eigenvalue pair at the expansion point is nearly degenerate.
    pub ill_conditioned: bool,
}

impl TaylorCoefficients {
    pub fn evaluate(&self, at: &CovarianceSet) -> f64 {
        self.value
            + self.signal.inner(&at.signal.sub(&self.origin.signal))
            + self.bs_noise.inner(&at.bs_noise.sub(&self.origin.bs_noise))
            + self.ue_noise.inner(&at.ue_noise.sub(&self.origin.ue_noise))
            + self.rate * (at.rate_threshold - self.origin.rate_threshold)
    }
}

/// Linearisation of [`secrecy_outage_prob`].
pub fn taylor_eve(ch: &ChannelModel, origin: &CovarianceSet) -> TaylorCoefficients {
    let spec = sop_spectrum(ch, origin);
    let c = snr_factor(origin.rate_threshold);
    let (f_bs, f_ue) = spec.per_copy_derivatives();
    let d_bs = weighted_projector(&spec.bs_basis, &f_bs);
    let d_ue = weighted_projector(&spec.ue_basis, &f_ue);
    let signal = pull_back(&d_bs, ch.eve_bs_factor());
    let ue_dir = pull_back(&d_ue, ch.eve_ue_factor());
    // d/dc of the CDF through both matrices and the threshold c * v_e.
    let d_dc = -signal.inner(&origin.bs_noise) - ue_dir.inner(&origin.ue_noise) + ch.eve_noise() * spec.density();
    let dc_dr = LN_2 * (origin.rate_threshold * LN_2).exp();
    TaylorCoefficients {
        value: spec.cdf(),
        origin: origin.clone(),
        bs_noise: signal.scale(-c),
        ue_noise: ue_dir.scale(-c),
        signal,
        rate: dc_dr * d_dc,
        ill_conditioned: spec.profile.is_ill_conditioned(),
    }
}

/// Linearisation of [`exposure_outage_prob`]; signal and base-station noise
/// share one coefficient.
pub fn taylor_exposure(ch: &ChannelModel, origin: &CovarianceSet, exposure_limit: f64) -> TaylorCoefficients {
    let spec = exposure_spectrum(ch, origin, exposure_limit);
    let (f_bs, f_ue) = spec.per_copy_derivatives();
    let bs = pull_back(&weighted_projector(&spec.bs_basis, &f_bs), ch.exposure_bs_factor());
    let ue = pull_back(&weighted_projector(&spec.ue_basis, &f_ue), ch.exposure_ue_factor());
    TaylorCoefficients {
        value: spec.cdf(),
        origin: origin.clone(),
        signal: bs.clone(),
        bs_noise: bs,
        ue_noise: ue,
        rate: 0.0,
        ill_conditioned: spec.profile.is_ill_conditioned(),
    }
}

/// Upper end of the search interval for [`rate_threshold_for_outage`].
pub const MAX_RATE_THRESHOLD: f64 = 60.0;

/// Smallest rate threshold whose secrecy outage probability reaches
/// `1 - epsilon`, by bisection. The returned value always satisfies the target.
pub fn rate_threshold_for_outage(ch: &ChannelModel, cov: &CovarianceSet, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter("epsilon must lie in (0, 1)".into()));
    }
    let target = 1.0 - epsilon;
    let prob = |r: f64| secrecy_outage_prob(ch, &cov.with_rate_threshold(r));
    if prob(0.0) >= target {
        return Ok(0.0);
    }
    let top = prob(MAX_RATE_THRESHOLD);
    if top < target {
        return Err(Error::NotBracketed {
            upper_bits: MAX_RATE_THRESHOLD,
            probability: top,
            target,
        });
    }
    let (mut lo, mut hi) = (0.0, MAX_RATE_THRESHOLD);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = prob(mid);
        if p >= target {
            hi = mid;
            if p - target <= 1e-10 {
                break;
            }
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

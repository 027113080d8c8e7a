//! Distribution of indefinite quadratic forms in complex Gaussian vectors.
//!
//! A form `r^H diag(lambda) r / 2`, with every component of `r` having
//! unit-variance real and imaginary parts, is distributed as
//! `sum_k lambda_k * Gamma(m_k, 1)` once equal eigenvalues are grouped into
//! distinct values `lambda_k` with multiplicities `m_k`. This module evaluates
//! its upper tail `Prob(form > z)` for `z >= 0`, its density, and the
//! derivatives of the CDF with respect to each distinct eigenvalue.
//!
//! For every profile in which each positive eigenvalue has multiplicity at
//! most two (or there is a single distinct eigenvalue) the tail is the sum
//!
//! ```text
//! sum_{k: lambda_k > 0} exp(-Upsilon_k) Q(m_k, z/lambda_k - Upsilon_k)
//!                      * prod_{j != k} (lambda_k / (lambda_k - lambda_j))^{m_j}
//! ```
//!
//! with `Upsilon_k = sum_{j != k} m_j lambda_j / (lambda_k - lambda_j)`. Higher
//! multiplicities next to other eigenvalues pick up extra residue terms; those
//! clusters are evaluated from the full residue expansion instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for merging eigenvalues into one cluster.
pub const DEFAULT_GROUPING_TOLERANCE: f64 = 1e-8;

/// Profiles whose closest pair of distinct eigenvalues is relatively nearer
/// than this are flagged as ill-conditioned.
pub const ILL_CONDITIONED_GAP: f64 = 1e-3;
/// Largest tolerated `sum |term|` before the tail is flagged as cancellation-prone.
pub const CANCELLATION_LIMIT: f64 = 1e6;

/// Distinct nonzero eigenvalues with their multiplicities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    lambdas: Vec<f64>,
    mults: Vec<u32>,
}

impl SpectralProfile {
    pub fn new(lambdas: Vec<f64>, mults: Vec<u32>) -> Result<Self> {
        if lambdas.len() != mults.len() {
            return Err(Error::Dimension(format!(
                "{} eigenvalues but {} multiplicities",
                lambdas.len(),
                mults.len()
            )));
        }
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("spectral profile"));
        }
        if lambdas.contains(&0.0) {
            return Err(Error::InvalidParameter("zero eigenvalue in spectral profile".into()));
        }
        if mults.contains(&0) {
            return Err(Error::InvalidParameter("zero multiplicity in spectral profile".into()));
        }
        for i in 0..lambdas.len() {
            for j in i + 1..lambdas.len() {
                if lambdas[i] == lambdas[j] {
                    return Err(Error::InvalidParameter(format!(
                        "eigenvalue {} listed twice; merge it into one multiplicity",
                        lambdas[i]
                    )));
                }
            }
        }
        Ok(Self { lambdas, mults })
    }

    pub fn empty() -> Self {
        Self {
            lambdas: Vec::new(),
            mults: Vec::new(),
        }
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn mults(&self) -> &[u32] {
        &self.mults
    }

    /// Number of distinct eigenvalues.
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Total multiplicity, i.e. the number of nonzero eigenvalues.
    pub fn dimension(&self) -> u32 {
        self.mults.iter().sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        assert!(c > 0.0, "profile scale must be positive");
        Self {
            lambdas: self.lambdas.iter().map(|l| l * c).collect(),
            mults: self.mults.clone(),
        }
    }

    /// Smallest `|lambda_i - lambda_j| / max(|lambda_i|, |lambda_j|)`.
    pub fn min_relative_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let (a, b) = (self.lambdas[i], self.lambdas[j]);
                gap = gap.min((a - b).abs() / a.abs().max(b.abs()));
            }
        }
        gap
    }

    pub fn is_ill_conditioned(&self) -> bool {
        self.min_relative_gap() < ILL_CONDITIONED_GAP
    }

    /// True when the grouped closed form is exact for every positive cluster.
    pub fn printed_form_exact(&self) -> bool {
        self.len() <= 1 || self.lambdas.iter().zip(&self.mults).all(|(&l, &m)| l <= 0.0 || m <= 2)
    }

    /// Same profile with one more copy of eigenvalue `k`.
    pub fn with_extra_multiplicity(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.mults[k] += 1;
        out
    }
}

/// Result of grouping a raw eigenvalue list.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    pub profile: SpectralProfile,
    /// Cluster index for every raw eigenvalue; `None` where it was dropped as
    /// numerically zero.
    pub assignment: Vec<Option<usize>>,
}

/// Groups raw eigenvalues into distinct values with multiplicities.
pub fn group_eigenvalues(raw: &[f64], tol_rel: f64) -> SpectralProfile {
    group_eigenvalues_indexed(raw, tol_rel).profile
}

/// Grouping that also reports which cluster each raw eigenvalue joined.
///
/// Eigenvalues with `|lambda| <= tol_rel * max|raw|` are dropped. The rest are
/// sorted descending and chained into clusters while consecutive gaps stay
/// within the same tolerance; each cluster is represented by its mean.
pub fn group_eigenvalues_indexed(raw: &[f64], tol_rel: f64) -> Grouping {
    assert!(
        tol_rel > 0.0 && tol_rel < 1e-3,
        "grouping tolerance must lie in (0, 1e-3)"
    );
    assert!(raw.iter().all(|l| l.is_finite()), "non-finite eigenvalue");
    let scale = raw.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let thr = tol_rel * scale;
    let mut assignment = vec![None; raw.len()];
    let mut order: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].abs() > thr).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));

    let mut lambdas = Vec::new();
    let mut mults = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && raw[order[end - 1]] - raw[order[end]] <= thr {
            end += 1;
        }
        let members = &order[start..end];
        let mean = members.iter().map(|&i| raw[i]).sum::<f64>() / members.len() as f64;
        for &i in members {
            assignment[i] = Some(lambdas.len());
        }
        lambdas.push(mean);
        mults.push(members.len() as u32);
        start = end;
    }
    Grouping {
        profile: SpectralProfile { lambdas, mults },
        assignment,
    }
}

/// Partial exponential series `sum_{j<m} x^j / j!`.
pub fn gamma_series(m: u32, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for j in 0..m {
        if j > 0 {
            term *= x / j as f64;
        }
        sum += term;
    }
    sum
}

/// Regularized upper incomplete gamma function at integer order,
/// `e^{-x} sum_{j<m} x^j / j!`, continued to negative `x` by the same series.
pub fn upper_gamma_q(m: u32, x: f64) -> f64 {
    assert!(m >= 1, "gamma order must be positive");
    if x.abs() <= 500.0 {
        return (-x).exp() * gamma_series(m, x);
    }
    // Terms e^{-x} x^j / j! in log-magnitude form, factored by the largest.
    let lx = x.abs().ln();
    let mut ln_fact = 0.0;
    let logs: Vec<f64> = (0..m)
        .map(|j| {
            if j > 0 {
                ln_fact += (j as f64).ln();
            }
            j as f64 * lx - ln_fact - x
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rest: f64 = logs
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let sign = if x < 0.0 && j % 2 == 1 { -1.0 } else { 1.0 };
            sign * (l - top).exp()
        })
        .sum();
    rest * top.exp()
}

/// `Upsilon_k = sum_{j != k} m_j lambda_j / (lambda_k - lambda_j)`.
pub fn upsilon(profile: &SpectralProfile, k: usize) -> f64 {
    let lk = profile.lambdas[k];
    profile
        .lambdas
        .iter()
        .zip(&profile.mults)
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, (&lj, &mj))| mj as f64 * lj / (lk - lj))
        .sum()
}

/// `prod_{j != k} (lambda_k / (lambda_k - lambda_j))^{m_j}` as (sign, ln|.|).
fn ratio_product(profile: &SpectralProfile, k: usize) -> (f64, f64) {
    let lk = profile.lambdas[k];
    let mut sign = 1.0;
    let mut ln_mag = 0.0;
    for (j, (&lj, &mj)) in profile.lambdas.iter().zip(&profile.mults).enumerate() {
        if j == k {
            continue;
        }
        let r = lk / (lk - lj);
        if r < 0.0 && mj % 2 == 1 {
            sign = -sign;
        }
        ln_mag += mj as f64 * r.abs().ln();
    }
    (sign, ln_mag)
}

/// `e^{-z/lambda_k} prod_{j != k} (lambda_k / (lambda_k - lambda_j))^{m_j}`.
fn cluster_weight(profile: &SpectralProfile, k: usize, z: f64) -> f64 {
    let (sign, ln_mag) = ratio_product(profile, k);
    sign * (ln_mag - z / profile.lambdas[k]).exp()
}

/// Complete Bell polynomial `B_n(d_1, ..., d_n)` given `d[r-1] = d_r`.
fn bell(derivs: &[f64], n: usize) -> f64 {
    let mut b = vec![1.0];
    for k in 0..n {
        let mut next = 0.0;
        let mut binom = 1.0;
        for i in 0..=k {
            next += binom * derivs[i] * b[k - i];
            binom = binom * (k - i) as f64 / (i + 1) as f64;
        }
        b.push(next);
    }
    b[n]
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Residue of cluster `k`, normalised by its weight: the polynomial factor
/// multiplying `e^{-z/lambda_k} prod(...)`. With `with_pole_at_zero` the
/// extra `1/s` of the tail integrand is included; without it the result is
/// the density contribution times `lambda_k`.
fn residue_factor(profile: &SpectralProfile, k: usize, z: f64, with_pole_at_zero: bool) -> f64 {
    let lk = profile.lambdas[k];
    let n = (profile.mults[k] - 1) as usize;
    if n == 0 {
        return 1.0;
    }
    let ratios: Vec<(f64, f64)> = profile
        .lambdas
        .iter()
        .zip(&profile.mults)
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, (&lj, &mj))| (mj as f64, lj / (lk - lj)))
        .collect();
    let mut derivs = Vec::with_capacity(n);
    let ups: f64 = ratios.iter().map(|(m, a)| m * a).sum();
    derivs.push(-z / lk + ups - if with_pole_at_zero { 1.0 } else { 0.0 });
    for r in 2..=n {
        let fr = factorial(r as u32 - 1);
        let mut d = fr * ratios.iter().map(|(m, a)| m * a.powi(r as i32)).sum::<f64>();
        if with_pole_at_zero {
            d += if r % 2 == 0 { fr } else { -fr };
        }
        derivs.push(d);
    }
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * bell(&derivs, n) / factorial(n as u32)
}

/// Outcome of a tail evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailResult {
    /// `Prob(form > z)`, clamped to `[0, 1]`.
    pub probability: f64,
    /// Contribution of each distinct eigenvalue (zero for non-positive ones).
    pub per_eigenvalue_terms: Vec<f64>,
    /// Closest eigenvalue pair is nearer than [`ILL_CONDITIONED_GAP`], or the
    /// terms exceed [`CANCELLATION_LIMIT`] in total magnitude.
    pub ill_conditioned: bool,
    /// Sum of the terms before clamping.
    pub unclamped: f64,
}

impl TailResult {
    pub fn cdf(&self) -> f64 {
        1.0 - self.probability
    }

    /// Sum of absolute term values; rounding error is about `eps` times this.
    pub fn magnitude(&self) -> f64 {
        self.per_eigenvalue_terms.iter().map(|t| t.abs()).sum()
    }
}

/// Upper tail `Prob(sum_k lambda_k Gamma(m_k, 1) > z)` for `z >= 0`.
pub fn tail_probability(profile: &SpectralProfile, z: f64) -> TailResult {
    tail_probability_with(profile, z, gamma_series)
}

/// [`tail_probability`] with a caller-supplied partial exponential series,
/// used to check that validation catches a faulty special function.
pub fn tail_probability_with(profile: &SpectralProfile, z: f64, series: fn(u32, f64) -> f64) -> TailResult {
    assert!(z >= 0.0 && z.is_finite(), "tail threshold must be finite and >= 0");
    let printed = profile.printed_form_exact();
    let terms: Vec<f64> = (0..profile.len())
        .map(|k| {
            let lk = profile.lambdas[k];
            if lk <= 0.0 {
                return 0.0;
            }
            let factor = if printed {
                // exp(-Upsilon) Q(m, z/lambda - Upsilon) = e^{-z/lambda} S_m(x).
                series(profile.mults[k], z / lk - upsilon(profile, k))
            } else {
                residue_factor(profile, k, z, true)
            };
            cluster_weight(profile, k, z) * factor
        })
        .collect();
    let unclamped: f64 = terms.iter().sum();
    let magnitude: f64 = terms.iter().map(|t| t.abs()).sum();
    TailResult {
        probability: unclamped.clamp(0.0, 1.0),
        per_eigenvalue_terms: terms,
        ill_conditioned: profile.is_ill_conditioned() || magnitude > CANCELLATION_LIMIT,
        unclamped,
    }
}

/// `Prob(form <= z)`.
pub fn cdf(profile: &SpectralProfile, z: f64) -> f64 {
    tail_probability(profile, z).cdf()
}

/// Density of the form at `z > 0` (the right limit at `z = 0`).
pub fn density(profile: &SpectralProfile, z: f64) -> f64 {
    (0..profile.len())
        .filter(|&k| profile.lambdas[k] > 0.0)
        .map(|k| cluster_weight(profile, k, z) * residue_factor(profile, k, z, false) / profile.lambdas[k])
        .sum()
}

/// `d CDF / d lambda_k` for every distinct eigenvalue, moving all `m_k`
/// copies together.
pub fn lambda_derivatives(profile: &SpectralProfile, z: f64) -> Vec<f64> {
    if profile.printed_form_exact() {
        (0..profile.len())
            .map(|k| {
                let own = if profile.lambdas[k] > 0.0 {
                    own_cdf_derivative(profile, k, z)
                } else {
                    0.0
                };
                own - cross_tail_derivative(profile, k, z)
            })
            .collect()
    } else {
        // d/d lambda E[1{lambda G + Y > z}] = m * density with one more copy.
        (0..profile.len())
            .map(|k| -(profile.mults[k] as f64) * density(&profile.with_extra_multiplicity(k), z))
            .collect()
    }
}

/// `d CDF / d lambda` for a single eigenvalue currently at zero.
pub fn zero_eigenvalue_derivative(profile: &SpectralProfile, z: f64) -> f64 {
    -density(profile, z)
}

/// Derivative of the other positive clusters' tail terms with respect to
/// `lambda_k`.
fn cross_tail_derivative(profile: &SpectralProfile, k: usize, z: f64) -> f64 {
    let lk = profile.lambdas[k];
    let mk = profile.mults[k] as f64;
    let mut acc = 0.0;
    for kp in 0..profile.len() {
        let lp = profile.lambdas[kp];
        if kp == k || lp <= 0.0 {
            continue;
        }
        let mp = profile.mults[kp];
        let x = z / lp - upsilon(profile, kp);
        let w = cluster_weight(profile, kp, z);
        let d2 = (lp - lk) * (lp - lk);
        let head = gamma_series(mp, x) * mk * lk / d2;
        let tail = x.powi(mp as i32 - 1) / factorial(mp - 1) * mk * lp / d2;
        acc -= w * (head - tail);
    }
    acc
}

/// Derivative of cluster `k`'s own term of the CDF with respect to
/// `lambda_k > 0`.
fn own_cdf_derivative(profile: &SpectralProfile, k: usize, z: f64) -> f64 {
    let lk = profile.lambdas[k];
    let mk = profile.mults[k];
    let x = z / lk - upsilon(profile, k);
    let mut sq = 0.0;
    let mut lin = 0.0;
    for (j, (&lj, &mj)) in profile.lambdas.iter().zip(&profile.mults).enumerate() {
        if j == k {
            continue;
        }
        let d2 = (lk - lj) * (lk - lj);
        sq += mj as f64 * lj * lj / (lk * d2);
        lin += mj as f64 * lj / d2;
    }
    let w = cluster_weight(profile, k, z);
    w * (-gamma_series(mk, x) * sq + x.powi(mk as i32 - 1) / factorial(mk - 1) * (-z / (lk * lk) + lin))
}

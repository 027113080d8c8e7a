//! Oracle suites behind the `validate` command.
//!
//! Every check draws its instances from a ChaCha stream keyed by the seed and
//! reports `worst` as the largest error divided by what was allowed, so a
//! check passes when `worst <= 1` (and, for the quadratic-form check, enough
//! cases pass).

use std::fmt;
use std::str::FromStr;

use emfsec_core::model::{
    exposure_outage_prob, exposure_spectrum, fenchel_lower_bound, rate_legitimate, secrecy_outage_prob, taylor_eve,
    taylor_exposure, FenchelPoint,
};
use emfsec_core::montecarlo::{empirical_exposure, empirical_form_cdfs, empirical_sop, SampleSpec};
use emfsec_core::quadform::{gamma_series, tail_probability_with, SpectralProfile};
use emfsec_core::sca::{optimize, NoiseConfig};
use emfsec_core::subproblem::{
    solve_subproblem, unrealify, AffineHermitian, ConcaveProgram, Penalties, SolveStatus, SubproblemSpec,
    DEFAULT_SUBPROBLEM_TOL,
};
use emfsec_core::{ChannelModel, CovarianceSet, Dimensions, HermitianMatrix, TaylorCoefficients};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::instances;

/// Partial exponential series used by the closed-form tail.
pub type SeriesFn = fn(u32, f64) -> f64;

pub const SIGMA_BOUND: f64 = 4.0;
pub const FORM_PASS_FRACTION: f64 = 0.99;
pub const HYPOEXPONENTIAL_TOL: f64 = 1e-10;
pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_REL_TOL: f64 = 1e-4;
/// Derivatives below this magnitude are compared on an absolute scale.
pub const GRADIENT_FLOOR: f64 = 1e-3;
pub const GRADIENT_MIN_GAP: f64 = 1e-3;
pub const FENCHEL_TOL: f64 = 1e-9;
pub const KKT_TOL: f64 = 1e-6;
pub const WATER_FILLING_TOL: f64 = 1e-6;
pub const GRID_SCAN_TOL: f64 = 1e-4;
pub const CERTIFICATE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Fast,
    Full,
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fast" => Ok(Self::Fast),
            "full" => Ok(Self::Full),
            _ => Err(format!("unknown level `{s}` (expected fast or full)")),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fast => "fast",
            Self::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    /// Largest error over its allowance.
    pub worst: f64,
    pub note: String,
}

impl CheckResult {
    fn new(name: &str, cases: usize, failures: usize, worst: f64, passed: bool, note: String) -> Self {
        Self {
            name: name.into(),
            passed,
            cases,
            failures,
            worst,
            note,
        }
    }

    fn all(name: &str, ratios: &[f64], note: String) -> Self {
        let failures = ratios.iter().filter(|r| !(**r <= 1.0)).count();
        let worst = ratios.iter().copied().fold(0.0, f64::max);
        Self::new(
            name,
            ratios.len(),
            failures,
            worst,
            failures == 0 && !ratios.is_empty(),
            note,
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub level: Level,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Closed-form CDF of random profiles against sampled ones at three
/// thresholds each; at least [`FORM_PASS_FRACTION`] of the comparisons must
/// fall within [`SIGMA_BOUND`] standard errors.
pub fn quadform_monte_carlo(profiles: usize, samples: u64, seed: u64, series: SeriesFn) -> CheckResult {
    let mut g = rng(seed, 1);
    let mut ratios = Vec::with_capacity(3 * profiles);
    for i in 0..profiles {
        let p = instances::profile(&mut g);
        let mean_pos: f64 = p
            .lambdas()
            .iter()
            .zip(p.mults())
            .filter(|(l, _)| **l > 0.0)
            .map(|(l, m)| l * f64::from(*m))
            .sum();
        let scale = if mean_pos > 0.0 { mean_pos } else { 1.0 };
        let zs = [0.0, 0.5 * scale, 2.0 * scale];
        let est = empirical_form_cdfs(
            &instances::expand(&p),
            &zs,
            &SampleSpec::new(samples, seed ^ (i as u64) << 20),
        );
        for (e, z) in est.iter().zip(zs) {
            let closed = 1.0 - tail_probability_with(&p, z, series).probability;
            ratios.push(e.sigmas_from(closed) / SIGMA_BOUND);
        }
    }
    let hits = ratios.iter().filter(|r| **r <= 1.0).count();
    let needed = (FORM_PASS_FRACTION * ratios.len() as f64).ceil() as usize;
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    CheckResult::new(
        "quadform-monte-carlo",
        ratios.len(),
        ratios.len() - hits,
        worst,
        hits >= needed,
        format!("{hits}/{} within {SIGMA_BOUND} sigma, {needed} required", ratios.len()),
    )
}

/// Survival function of a sum of exponentials with distinct means `lambdas`.
pub fn hypoexponential_survival(lambdas: &[f64], z: f64) -> f64 {
    lambdas
        .iter()
        .enumerate()
        .map(|(k, &lk)| {
            let w: f64 = lambdas
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &lj)| lk / (lk - lj))
                .product();
            w * (-z / lk).exp()
        })
        .sum()
}

/// All-positive, multiplicity-one profiles against the hypoexponential law.
pub fn hypoexponential_exact(cases: usize, seed: u64, series: SeriesFn) -> CheckResult {
    let mut g = rng(seed, 2);
    let mut ratios = Vec::with_capacity(cases);
    while ratios.len() < cases {
        let n = g.gen_range(1..=6);
        let lambdas: Vec<f64> = (0..n).map(|_| 10f64.powf(g.gen_range(-1.0..1.0))).collect();
        let Ok(p) = SpectralProfile::new(lambdas.clone(), vec![1; n]) else {
            continue;
        };
        if p.min_relative_gap() < 0.1 {
            continue;
        }
        let z = g.gen_range(0.0..3.0) * lambdas.iter().sum::<f64>();
        let closed = tail_probability_with(&p, z, series).probability;
        ratios.push((closed - hypoexponential_survival(&lambdas, z)).abs() / HYPOEXPONENTIAL_TOL);
    }
    CheckResult::all(
        "hypoexponential-exact",
        &ratios,
        format!("tolerance {HYPOEXPONENTIAL_TOL}"),
    )
}

/// Secrecy outage probability of random instances against channel draws.
pub fn sop_monte_carlo(instances_n: usize, samples: u64, seed: u64) -> CheckResult {
    let mut g = rng(seed, 3);
    let ratios: Vec<f64> = (0..instances_n)
        .map(|i| {
            let ch = instances::channel(&mut g);
            let cov = {
                let power = g.gen_range(1.0..10.0);
                instances::covariances(&mut g, Dimensions::TWO_BY_ONE, power)
            };
            let est = empirical_sop(&ch, &cov, &SampleSpec::new(samples, seed.wrapping_add(i as u64)));
            est.sigmas_from(secrecy_outage_prob(&ch, &cov)) / SIGMA_BOUND
        })
        .collect();
    CheckResult::all(
        "sop-monte-carlo",
        &ratios,
        format!("{samples} draws, {SIGMA_BOUND} sigma"),
    )
}

/// Exposure probability against channel draws, plus exact agreement with
/// the hypoexponential law whenever the exposure spectrum is simple.
pub fn exposure_monte_carlo(instances_n: usize, samples: u64, seed: u64) -> CheckResult {
    let mut g = rng(seed, 4);
    let mut ratios = Vec::new();
    let mut exact = 0;
    for i in 0..instances_n {
        let ch = instances::channel(&mut g);
        let cov = {
            let power = g.gen_range(1.0..10.0);
            instances::covariances(&mut g, Dimensions::TWO_BY_ONE, power)
        };
        let limit = g.gen_range(2.0..40.0);
        let closed = exposure_outage_prob(&ch, &cov, limit);
        let est = empirical_exposure(&ch, &cov, limit, &SampleSpec::new(samples, seed.wrapping_add(i as u64)));
        ratios.push(est.sigmas_from(closed) / SIGMA_BOUND);
        let spec = exposure_spectrum(&ch, &cov, limit);
        if spec.profile.mults().iter().all(|&m| m == 1) && spec.profile.min_relative_gap() >= 0.1 {
            let hypo = hypoexponential_survival(spec.profile.lambdas(), limit);
            ratios.push(((1.0 - closed) - hypo).abs() / HYPOEXPONENTIAL_TOL);
            exact += 1;
        }
    }
    CheckResult::all(
        "exposure-monte-carlo",
        &ratios,
        format!("{samples} draws, {SIGMA_BOUND} sigma; {exact} hypoexponential comparisons"),
    )
}

fn along(origin: &CovarianceSet, dir: &CovarianceSet, s: f64) -> CovarianceSet {
    CovarianceSet {
        signal: origin.signal.add(&dir.signal.scale(s)),
        bs_noise: origin.bs_noise.add(&dir.bs_noise.scale(s)),
        ue_noise: origin.ue_noise.add(&dir.ue_noise.scale(s)),
        rate_threshold: origin.rate_threshold + dir.rate_threshold * s,
    }
}

/// Central difference of `f` along `dir` against the linear model's slope,
/// as error over allowance.
fn directional_ratio(f: impl Fn(&CovarianceSet) -> f64, t: &TaylorCoefficients, dir: &CovarianceSet) -> f64 {
    let h = GRADIENT_STEP;
    let fd = (f(&along(&t.origin, dir, h)) - f(&along(&t.origin, dir, -h))) / (2.0 * h);
    let an = t.evaluate(&along(&t.origin, dir, 1.0)) - t.value;
    (fd - an).abs() / (GRADIENT_REL_TOL * an.abs().max(GRADIENT_FLOOR))
}

/// First-order models of both outage probabilities against finite
/// differences along each block and the rate threshold.
pub fn taylor_gradients(points: usize, seed: u64) -> CheckResult {
    let mut g = rng(seed, 5);
    let mut ratios = Vec::new();
    let mut taken = 0;
    while taken < points {
        let ch = instances::channel(&mut g);
        let mut x = instances::covariances(&mut g, Dimensions::TWO_BY_ONE, 3.0);
        x.rate_threshold = g.gen_range(0.2..2.0);
        let z = g.gen_range(1.0..10.0);
        let eve = taylor_eve(&ch, &x);
        let exp = taylor_exposure(&ch, &x, z);
        let gaps = [
            emfsec_core::model::sop_spectrum(&ch, &x).profile.min_relative_gap(),
            exposure_spectrum(&ch, &x, z).profile.min_relative_gap(),
        ];
        if gaps.iter().any(|&gap| gap < GRADIENT_MIN_GAP) {
            continue;
        }
        taken += 1;
        for which in 0..4 {
            let mut d = CovarianceSet::zeros(Dimensions::TWO_BY_ONE);
            match which {
                0 => d.signal = instances::hermitian(&mut g, 2),
                1 => d.bs_noise = instances::hermitian(&mut g, 2),
                2 => d.ue_noise = instances::hermitian(&mut g, 1),
                _ => d.rate_threshold = 1.0,
            }
            ratios.push(directional_ratio(|c| secrecy_outage_prob(&ch, c), &eve, &d));
            if which < 3 {
                ratios.push(directional_ratio(|c| exposure_outage_prob(&ch, c, z), &exp, &d));
            }
        }
    }
    CheckResult::all(
        "taylor-gradients",
        &ratios,
        format!("step {GRADIENT_STEP}, relative tolerance {GRADIENT_REL_TOL}"),
    )
}

/// The concave bound never exceeds the rate and touches it at its own point.
pub fn fenchel_bound(pairs: usize, seed: u64) -> CheckResult {
    let mut g = rng(seed, 6);
    let mut ratios = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let ch = instances::channel(&mut g);
        let a = {
            let power = g.gen_range(0.1..10.0);
            instances::covariances(&mut g, Dimensions::TWO_BY_ONE, power)
        };
        let b = {
            let power = g.gen_range(0.1..10.0);
            instances::covariances(&mut g, Dimensions::TWO_BY_ONE, power)
        };
        let ru = rate_legitimate(&ch, &a);
        let loose = fenchel_lower_bound(&ch, &a, &FenchelPoint::at(&ch, &b));
        ratios.push((loose - ru).max(0.0) / FENCHEL_TOL);
        let tight = fenchel_lower_bound(&ch, &a, &FenchelPoint::at(&ch, &a));
        ratios.push((tight - ru).abs() / FENCHEL_TOL);
    }
    CheckResult::all("fenchel-bound", &ratios, format!("tolerance {FENCHEL_TOL}"))
}

fn water_filling(p: f64) -> ConcaveProgram {
    let mut prog = ConcaveProgram::new(4);
    prog.log_dets.push((
        1.0,
        AffineHermitian::constant(HermitianMatrix::scaled_identity(2, 0.1)).with_block(0, 2),
    ));
    prog.inequalities.push((vec![1.0, 1.0, 0.0, 0.0], p));
    prog.cones
        .push(AffineHermitian::constant(HermitianMatrix::zeros(2)).with_block(0, 2));
    prog
}

/// `max w ln(a + b x) + c x - gamma (x - x0)^2` over `0 <= x <= u`.
fn scalar_program(g: &mut ChaCha8Rng) -> (ConcaveProgram, f64) {
    let (w, a, b) = (g.gen_range(0.2..3.0), g.gen_range(0.05..1.0), g.gen_range(0.1..4.0));
    let (c, gamma, x0, u) = (
        g.gen_range(-1.0..1.0),
        g.gen_range(0.0..2.0),
        g.gen_range(0.0..5.0),
        g.gen_range(0.5..5.0),
    );
    let mut prog = ConcaveProgram::new(1);
    prog.linear = vec![c];
    prog.log_dets.push((
        w,
        AffineHermitian::constant(HermitianMatrix::scaled_identity(1, a))
            .with_term(0, HermitianMatrix::scaled_identity(1, b)),
    ));
    prog.proximal.push((0, gamma, x0));
    prog.inequalities.push((vec![1.0], u));
    prog.inequalities.push((vec![-1.0], 0.0));
    (prog, u)
}

/// KKT residuals of linearised design steps, the symmetric water-filling
/// instance and scalar programs against a dense grid scan.
pub fn subproblem_kkt(instances_n: usize, seed: u64) -> CheckResult {
    let mut g = rng(seed, 7);
    let mut ratios = Vec::new();
    let mut solved = 0;
    for _ in 0..instances_n {
        let ch = instances::channel(&mut g);
        let mut anchor = instances::covariances(&mut g, Dimensions::TWO_BY_ONE, 3.0);
        let Ok(r) = emfsec_core::model::rate_threshold_for_outage(&ch, &anchor, 0.05) else {
            continue;
        };
        anchor.rate_threshold = r;
        let z = g.gen_range(5.0..20.0);
        let spec = SubproblemSpec {
            fenchel: FenchelPoint::at(&ch, &anchor),
            eve: taylor_eve(&ch, &anchor),
            exposure: taylor_exposure(&ch, &anchor, z),
            epsilon: 0.05,
            delta: 0.05,
            bs_power: 10.0,
            ue_power: 10.0,
            penalties: Penalties::uniform(g.gen_range(0.5..4.0)),
            anchor,
            bs_noise_enabled: g.gen(),
            ue_noise_enabled: g.gen(),
        };
        let sol = solve_subproblem(&ch, &spec, DEFAULT_SUBPROBLEM_TOL);
        if sol.status == SolveStatus::Optimal {
            solved += 1;
            ratios.push(sol.kkt.max() / KKT_TOL);
        }
    }
    for p in [0.5, 3.0, 10.0] {
        let sol = water_filling(p).solve(&[0.0, 0.0, 0.3, -0.2], 1e-9);
        let q = unrealify(&sol.x);
        let err = q.sub(&HermitianMatrix::scaled_identity(2, p / 2.0)).frobenius_norm();
        ratios.push(if sol.status == SolveStatus::Optimal {
            err / WATER_FILLING_TOL
        } else {
            f64::INFINITY
        });
        ratios.push(sol.kkt.max() / KKT_TOL);
    }
    for _ in 0..instances_n.min(20) {
        let (prog, u) = scalar_program(&mut g);
        let sol = prog.solve(&[0.5 * u], DEFAULT_SUBPROBLEM_TOL);
        let n = 200_000;
        let best = (0..=n)
            .map(|i| prog.objective(&[u * i as f64 / n as f64]))
            .fold(f64::NEG_INFINITY, f64::max);
        ratios.push(if sol.status == SolveStatus::Optimal {
            (sol.objective - best).abs() / GRID_SCAN_TOL
        } else {
            f64::INFINITY
        });
        ratios.push(sol.kkt.max() / KKT_TOL);
    }
    CheckResult::all(
        "subproblem-kkt",
        &ratios,
        format!("{solved}/{instances_n} design steps optimal; KKT {KKT_TOL}, grid scan {GRID_SCAN_TOL}"),
    )
}

/// Closed-form and sampled constraint certificates of converged runs on
/// the reference scenario.
pub fn end_to_end(realizations: usize, grid_db: &[f64], samples: u64, seed: u64) -> CheckResult {
    let config = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    let mut ratios = Vec::new();
    let mut converged: u64 = 0;
    for i in 0..realizations {
        let ch: ChannelModel = config.channel(i).expect("reference scenario is valid");
        for &db in grid_db {
            let spec = config.outage_spec(db);
            for cfg in NoiseConfig::ALL {
                let r = optimize(&ch, &spec, cfg, &config.solver);
                if r.status != emfsec_core::sca::RunStatus::Converged {
                    continue;
                }
                converged += 1;
                let c = &r.covariances;
                let sop = r.certificates.sop;
                let exp = r.certificates.exposure;
                ratios.push(((1.0 - spec.epsilon - CERTIFICATE_TOL) - sop).max(0.0) / CERTIFICATE_TOL);
                ratios.push(((1.0 - spec.delta - CERTIFICATE_TOL) - exp).max(0.0) / CERTIFICATE_TOL);
                let ss = SampleSpec::new(samples, seed ^ ((i as u64) << 32) ^ converged);
                ratios.push(empirical_sop(&ch, c, &ss).sigmas_from(sop) / SIGMA_BOUND);
                ratios.push(empirical_exposure(&ch, c, spec.exposure_limit, &ss).sigmas_from(exp) / SIGMA_BOUND);
            }
        }
    }
    CheckResult::all(
        "end-to-end-certificates",
        &ratios,
        format!("{converged} converged runs, {samples} draws each"),
    )
}

/// Runs every check at the given level with the given series implementation.
pub fn run_validate(level: Level, seed: u64, series: SeriesFn) -> ValidationReport {
    let full = level == Level::Full;
    let pick = |fast: usize, full_n: usize| if full { full_n } else { fast };
    let draws = if full { 1_000_000 } else { 100_000 };
    let checks = vec![
        quadform_monte_carlo(pick(20, 200), draws, seed, series),
        hypoexponential_exact(pick(50, 200), seed, series),
        sop_monte_carlo(pick(10, 50), draws, seed),
        exposure_monte_carlo(pick(10, 50), draws, seed),
        taylor_gradients(pick(10, 50), seed),
        fenchel_bound(pick(200, 1000), seed),
        subproblem_kkt(pick(10, 40), seed),
        end_to_end(pick(1, 3), &[2.0, 14.0], 100_000, seed),
    ];
    ValidationReport {
        level,
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

/// The series with its last term dropped, for fault-injection runs.
pub fn truncated_series(m: u32, x: f64) -> f64 {
    if m <= 1 {
        return gamma_series(m, x) * 0.5;
    }
    gamma_series(m - 1, x)
}

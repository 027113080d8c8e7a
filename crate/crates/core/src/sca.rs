//! Successive convex approximation of the outage-constrained design.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_project, psd_sqrt_factor, ComplexMatrix, HermitianMatrix, C64};
use crate::model::{
    exposure_outage_prob, rate_legitimate, rate_threshold_for_outage, secrecy_outage_prob, secrecy_rate, taylor_eve,
    taylor_exposure, ChannelModel, CovarianceSet, FenchelPoint, OutageSpec,
};
use crate::subproblem::{solve_subproblem, Penalties, SolveStatus, SubproblemSpec, DEFAULT_SUBPROBLEM_TOL};

/// Which artificial-noise sources may transmit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub bs_noise: bool,
    pub ue_noise: bool,
}

impl NoiseConfig {
    pub const NONE: Self = Self {
        bs_noise: false,
        ue_noise: false,
    };
    pub const BS_ONLY: Self = Self {
        bs_noise: true,
        ue_noise: false,
    };
    pub const UE_ONLY: Self = Self {
        bs_noise: false,
        ue_noise: true,
    };
    pub const BOTH: Self = Self {
        bs_noise: true,
        ue_noise: true,
    };
    pub const ALL: [Self; 4] = [Self::NONE, Self::BS_ONLY, Self::UE_ONLY, Self::BOTH];

    pub fn name(&self) -> &'static str {
        match (self.bs_noise, self.ue_noise) {
            (false, false) => "none",
            (true, false) => "bs-only",
            (false, true) => "ue-only",
            (true, true) => "both",
        }
    }

    /// True when every source enabled here is also enabled in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        (!self.bs_noise || other.bs_noise) && (!self.ue_noise || other.ue_noise)
    }

    /// Zeroes the blocks this configuration disables.
    pub fn pin(&self, c: &CovarianceSet) -> CovarianceSet {
        let mut out = c.clone();
        if !self.bs_noise {
            out.bs_noise = HermitianMatrix::zeros(c.bs_noise.dim());
        }
        if !self.ue_noise {
            out.ue_noise = HermitianMatrix::zeros(c.ue_noise.dim());
        }
        out
    }
}

impl fmt::Display for NoiseConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown noise configuration `{s}`")))
    }
}

/// Growth rule of the proximal penalties.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub initial: Penalties,
    pub growth_factor: f64,
    /// Iterations between scheduled increases.
    pub growth_every: usize,
    /// Cap on every weight.
    pub max_weight: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            initial: Penalties::uniform(1.0),
            growth_factor: 2.0,
            growth_every: 5,
            max_weight: 1e6,
        }
    }
}

impl PenaltySchedule {
    fn grow(&self, p: &Penalties) -> Penalties {
        let cap = |w: f64| (w * self.growth_factor).min(self.max_weight);
        Penalties {
            rate: cap(p.rate),
            signal: cap(p.signal),
            bs_noise: cap(p.bs_noise),
            ue_noise: cap(p.ue_noise),
        }
    }
}

/// Loop controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaOptions {
    pub schedule: PenaltySchedule,
    pub max_iters: usize,
    /// Bound on the summed variable step that counts as converged.
    pub conv_tol: f64,
    pub solver_tol: f64,
    /// Consecutive infeasible subproblems tolerated before giving up.
    pub max_recoveries: usize,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            schedule: PenaltySchedule::default(),
            max_iters: 200,
            conv_tol: 1e-5,
            solver_tol: DEFAULT_SUBPROBLEM_TOL,
            max_recoveries: 5,
        }
    }
}

/// Slack allowed when certifying the outage constraints in closed form.
pub const CERTIFICATE_SLACK: f64 = 1e-9;

/// Closed-form constraint values at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    /// `Prob(R_E <= rate_threshold)`.
    pub sop: f64,
    /// `Prob(P_D <= exposure_limit)`.
    pub exposure: f64,
    pub bs_power: f64,
    pub ue_power: f64,
    pub satisfied: bool,
}

pub fn certify(ch: &ChannelModel, spec: &OutageSpec, c: &CovarianceSet) -> Certificates {
    let sop = secrecy_outage_prob(ch, c);
    let exposure = exposure_outage_prob(ch, c, spec.exposure_limit);
    let (bs_power, ue_power) = (c.bs_power(), c.ue_power());
    let satisfied = sop >= 1.0 - spec.epsilon - CERTIFICATE_SLACK
        && exposure >= 1.0 - spec.delta - CERTIFICATE_SLACK
        && bs_power <= spec.bs_power + 1e-9
        && ue_power <= spec.ue_power + 1e-9
        && c.rate_threshold >= 0.0;
    Certificates {
        sop,
        exposure,
        bs_power,
        ue_power,
        satisfied,
    }
}

/// Rate loss tolerated when returning a converged point over the best
/// certified iterate.
pub const CONVERGED_RATE_SLACK: f64 = 1e-6;

/// Outage secrecy rate `max(R_U - rate_threshold, 0)`.
pub fn outage_secrecy_rate(ch: &ChannelModel, c: &CovarianceSet) -> f64 {
    secrecy_rate(rate_legitimate(ch, c), c.rate_threshold)
}

/// Precoders whose outer products give the covariances.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Precoders {
    pub signal: ComplexMatrix,
    pub bs_noise: ComplexMatrix,
    pub ue_noise: ComplexMatrix,
}

pub fn recover_precoders(c: &CovarianceSet) -> Precoders {
    let f = |m: &HermitianMatrix| psd_sqrt_factor(m).expect("finite covariance");
    Precoders {
        signal: f(&c.signal),
        bs_noise: f(&c.bs_noise),
        ue_noise: f(&c.ue_noise),
    }
}

/// Direction of maximum gain toward the user.
fn mrt_direction(ch: &ChannelModel) -> Vec<C64> {
    let h = ch.h_u();
    let gram = HermitianMatrix::hermitian_part(&h.adjoint().matmul(h));
    let eig = gram.eig().expect("finite channel");
    eig.vectors.column(0)
}

/// Feasible starting point: maximum-ratio signal, weak isotropic noise,
/// uniformly scaled down until the exposure constraint holds, and the rate
/// threshold set where the secrecy outage constraint is tight.
pub fn initialize(ch: &ChannelModel, spec: &OutageSpec, cfg: NoiseConfig) -> CovarianceSet {
    let d = ch.dims();
    let bs_noise = if cfg.bs_noise {
        HermitianMatrix::scaled_identity(d.n_bs, 0.01 * spec.bs_power / d.n_bs as f64)
    } else {
        HermitianMatrix::zeros(d.n_bs)
    };
    let ue_noise = if cfg.ue_noise {
        HermitianMatrix::scaled_identity(d.n_ue_tx, 0.01 * spec.ue_power / d.n_ue_tx as f64)
    } else {
        HermitianMatrix::zeros(d.n_ue_tx)
    };
    let w = mrt_direction(ch);
    let full = CovarianceSet {
        signal: HermitianMatrix::outer(&w).scale(spec.bs_power - bs_noise.trace()),
        bs_noise,
        ue_noise,
        rate_threshold: 0.0,
    };
    let scaled = scale_to_exposure(ch, spec, &full);
    with_tight_rate_threshold(ch, spec, scaled)
}

/// Largest uniform down-scaling of `c` meeting the exposure constraint.
fn scale_to_exposure(ch: &ChannelModel, spec: &OutageSpec, c: &CovarianceSet) -> CovarianceSet {
    let ok = |s: f64| exposure_outage_prob(ch, &c.scale_powers(s), spec.exposure_limit) >= 1.0 - spec.delta;
    if ok(1.0) {
        return c.clone();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    c.scale_powers(lo)
}

/// Sets the rate threshold by bisection, falling back to the zero point.
fn with_tight_rate_threshold(ch: &ChannelModel, spec: &OutageSpec, c: CovarianceSet) -> CovarianceSet {
    match rate_threshold_for_outage(ch, &c, spec.epsilon) {
        Ok(r) => c.with_rate_threshold(r),
        Err(_) => CovarianceSet::zeros(ch.dims()),
    }
}

/// Turns an arbitrary point (for example another configuration's solution)
/// into a certified start for `cfg`, or `None` if that is not possible.
pub fn warm_start(ch: &ChannelModel, spec: &OutageSpec, cfg: NoiseConfig, c: &CovarianceSet) -> Option<CovarianceSet> {
    let pinned = cfg.pin(c);
    let pinned = CovarianceSet {
        signal: psd_project(&pinned.signal),
        bs_noise: psd_project(&pinned.bs_noise),
        ue_noise: psd_project(&pinned.ue_noise),
        rate_threshold: 0.0,
    };
    if !pinned.is_finite() || pinned.bs_power() > spec.bs_power + 1e-9 || pinned.ue_power() > spec.ue_power + 1e-9 {
        return None;
    }
    let start = with_tight_rate_threshold(ch, spec, scale_to_exposure(ch, spec, &pinned));
    certify(ch, spec, &start).satisfied.then_some(start)
}

/// One row of the iteration trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Surrogate objective of the subproblem.
    pub objective: f64,
    /// `R_U - rate_threshold` at the new point.
    pub true_objective: f64,
    pub step: f64,
    pub penalties: Penalties,
    pub subproblem: SolveStatus,
    pub certified: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    InfeasibleStart,
    /// Too many consecutive infeasible subproblems.
    Stalled,
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIterations => "max-iterations",
            Self::InfeasibleStart => "infeasible-start",
            Self::Stalled => "stalled",
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mutable state of the loop.
#[derive(Clone, Debug)]
pub struct ScaState {
    pub point: CovarianceSet,
    pub penalties: Penalties,
    pub iteration: usize,
    /// Consecutive infeasible subproblems.
    pub failures: usize,
    last_delta: Option<f64>,
    flips: usize,
    last_true_objective: f64,
    quiet_steps: usize,
}

impl ScaState {
    pub fn new(ch: &ChannelModel, start: CovarianceSet, schedule: &PenaltySchedule) -> Self {
        let obj = rate_legitimate(ch, &start) - start.rate_threshold;
        Self {
            point: start,
            penalties: schedule.initial,
            iteration: 0,
            failures: 0,
            last_delta: None,
            flips: 0,
            last_true_objective: obj,
            quiet_steps: 0,
        }
    }
}

/// Builds the convexified problem around `state.point`, solves it and moves
/// the operating point to its solution. On an infeasible subproblem the
/// point is kept and the penalties are doubled.
pub fn iterate_once(
    ch: &ChannelModel,
    spec: &OutageSpec,
    cfg: NoiseConfig,
    opts: &ScaOptions,
    state: &mut ScaState,
) -> IterationRecord {
    state.iteration += 1;
    let anchor = state.point.clone();
    let sub = SubproblemSpec {
        fenchel: FenchelPoint::at(ch, &anchor),
        eve: taylor_eve(ch, &anchor),
        exposure: taylor_exposure(ch, &anchor, spec.exposure_limit),
        epsilon: spec.epsilon,
        delta: spec.delta,
        bs_power: spec.bs_power,
        ue_power: spec.ue_power,
        penalties: state.penalties,
        anchor: anchor.clone(),
        bs_noise_enabled: cfg.bs_noise,
        ue_noise_enabled: cfg.ue_noise,
    };
    let sol = solve_subproblem(ch, &sub, opts.solver_tol);
    let penalties_used = state.penalties;
    if sol.status != SolveStatus::Optimal {
        state.failures += 1;
        state.penalties = opts.schedule.grow(&state.penalties);
        return IterationRecord {
            iteration: state.iteration,
            objective: sol.objective,
            true_objective: state.last_true_objective,
            step: 0.0,
            penalties: penalties_used,
            subproblem: sol.status,
            certified: false,
        };
    }
    state.failures = 0;
    let next = cfg.pin(&sol.covariances);
    let step = next.distance(&anchor);
    let true_objective = rate_legitimate(ch, &next) - next.rate_threshold;
    let delta = true_objective - state.last_true_objective;
    if let Some(prev) = state.last_delta {
        if prev * delta < 0.0 {
            state.flips += 1;
        } else {
            state.flips = 0;
        }
    }
    let scheduled = state.iteration.is_multiple_of(opts.schedule.growth_every);
    if scheduled || state.flips >= 2 {
        state.penalties = opts.schedule.grow(&state.penalties);
        state.flips = 0;
    }
    state.last_delta = Some(delta);
    state.last_true_objective = true_objective;
    state.quiet_steps = if step <= opts.conv_tol {
        state.quiet_steps + 1
    } else {
        0
    };
    state.point = next;
    IterationRecord {
        iteration: state.iteration,
        objective: sol.objective,
        true_objective,
        step,
        penalties: penalties_used,
        subproblem: sol.status,
        certified: certify(ch, spec, &state.point).satisfied,
    }
}

/// Outcome of a full run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub covariances: CovarianceSet,
    pub precoders: Precoders,
    /// Outage secrecy rate of the returned point.
    pub r_eps: f64,
    pub user_rate: f64,
    pub certificates: Certificates,
    pub status: RunStatus,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
}

/// Runs the loop from [`initialize`].
pub fn optimize(ch: &ChannelModel, spec: &OutageSpec, cfg: NoiseConfig, opts: &ScaOptions) -> SolveResult {
    optimize_from(ch, spec, cfg, opts, initialize(ch, spec, cfg))
}

/// Runs the loop from a given start and returns the best certified iterate.
pub fn optimize_from(
    ch: &ChannelModel,
    spec: &OutageSpec,
    cfg: NoiseConfig,
    opts: &ScaOptions,
    start: CovarianceSet,
) -> SolveResult {
    let start = cfg.pin(&start);
    let start_cert = certify(ch, spec, &start);
    if !start_cert.satisfied {
        return finish(ch, spec, start, RunStatus::InfeasibleStart, 0, Vec::new());
    }
    let mut best = start.clone();
    let mut best_rate = outage_secrecy_rate(ch, &start);
    let mut state = ScaState::new(ch, start, &opts.schedule);
    let mut trace = Vec::new();
    let mut status = RunStatus::MaxIterations;
    while state.iteration < opts.max_iters {
        let rec = iterate_once(ch, spec, cfg, opts, &mut state);
        let failed = rec.subproblem != SolveStatus::Optimal;
        let certified = rec.certified;
        trace.push(rec);
        if failed {
            if state.failures > opts.max_recoveries {
                status = RunStatus::Stalled;
                break;
            }
            state.point = best.clone();
            continue;
        }
        if certified {
            let r = outage_secrecy_rate(ch, &state.point);
            if r >= best_rate {
                best_rate = r;
                best = state.point.clone();
            }
        }
        if state.quiet_steps >= 2 {
            status = RunStatus::Converged;
            // Prefer the fixed point unless an earlier iterate was clearly better.
            if certified && outage_secrecy_rate(ch, &state.point) >= best_rate - CONVERGED_RATE_SLACK {
                best = state.point.clone();
            }
            break;
        }
    }
    let iterations = state.iteration;
    finish(ch, spec, best, status, iterations, trace)
}

fn finish(
    ch: &ChannelModel,
    spec: &OutageSpec,
    c: CovarianceSet,
    status: RunStatus,
    iterations: usize,
    trace: Vec<IterationRecord>,
) -> SolveResult {
    let user_rate = rate_legitimate(ch, &c);
    SolveResult {
        precoders: recover_precoders(&c),
        r_eps: secrecy_rate(user_rate, c.rate_threshold),
        user_rate,
        certificates: certify(ch, spec, &c),
        covariances: c,
        status,
        iterations,
        trace,
    }
}

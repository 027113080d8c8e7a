//! Exposure-limit sweeps, single runs and outage spot checks.

use std::fs;
use std::io;
use std::path::Path;

use emfsec_core::model::{exposure_outage_prob, secrecy_outage_prob};
use emfsec_core::montecarlo::{empirical_exposure, empirical_sop, Estimate, SampleSpec};
use emfsec_core::sca::{
    optimize, optimize_from, warm_start, NoiseConfig, RunStatus, ScaOptions, SolveResult, CERTIFICATE_SLACK,
};
use emfsec_core::{ChannelModel, ComplexMatrix, CovarianceSet, OutageSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{db_to_linear, ConfigError, ExperimentConfig};

/// One row of `records.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub p_d_max_db: f64,
    pub p_d_max: f64,
    pub noise_config: String,
    pub realization_index: usize,
    pub r_eps: f64,
    pub r_e_max: f64,
    pub p: f64,
    pub p_n: f64,
    pub p_bar_n: f64,
    pub iterations: usize,
    pub status: String,
    pub sop_certificate: f64,
    pub exposure_certificate: f64,
}

/// One row of `aggregate.csv`: means and standard errors over realizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub p_d_max_db: f64,
    pub p_d_max: f64,
    pub noise_config: String,
    pub realizations: usize,
    pub r_eps_mean: f64,
    pub r_eps_se: f64,
    pub r_e_max_mean: f64,
    pub r_e_max_se: f64,
    pub p_mean: f64,
    pub p_se: f64,
    pub p_n_mean: f64,
    pub p_n_se: f64,
    pub p_bar_n_mean: f64,
    pub p_bar_n_se: f64,
    pub certified: usize,
    pub converged: usize,
}

pub const RECORDS_FILE: &str = "records.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub aggregate: Vec<AggregateRecord>,
}

fn is_better(a: &SolveResult, b: &SolveResult) -> bool {
    match (a.certificates.satisfied, b.certificates.satisfied) {
        (true, false) => true,
        (false, true) => false,
        _ => a.r_eps > b.r_eps,
    }
}

/// `c` with its base-station covariances scaled up to the full budget.
fn fill_bs_power(c: &CovarianceSet, budget: f64) -> Option<CovarianceSet> {
    let used = c.bs_power();
    (used > 0.0 && used < budget).then(|| {
        let s = budget / used;
        CovarianceSet {
            signal: c.signal.scale(s),
            bs_noise: c.bs_noise.scale(s),
            ..c.clone()
        }
    })
}

/// Best of a fresh run and runs warm-started from each point in `starts`,
/// each also tried with its base-station power filled to the budget.
pub fn solve_multistart(
    ch: &ChannelModel,
    spec: &OutageSpec,
    cfg: NoiseConfig,
    opts: &ScaOptions,
    starts: &[&CovarianceSet],
) -> SolveResult {
    let mut best = optimize(ch, spec, cfg, opts);
    let candidates = starts
        .iter()
        .flat_map(|s| [Some((*s).clone()), fill_bs_power(&cfg.pin(s), spec.bs_power)]);
    for c in candidates.flatten() {
        if let Some(start) = warm_start(ch, spec, cfg, &c) {
            let r = optimize_from(ch, spec, cfg, opts, start);
            if is_better(&r, &best) {
                best = r;
            }
        }
    }
    best
}

fn record(p_d_max_db: f64, cfg: NoiseConfig, realization: usize, r: &SolveResult) -> SweepRecord {
    SweepRecord {
        p_d_max_db,
        p_d_max: db_to_linear(p_d_max_db),
        noise_config: cfg.name().into(),
        realization_index: realization,
        r_eps: r.r_eps,
        r_e_max: r.covariances.rate_threshold,
        p: r.covariances.signal.trace(),
        p_n: r.covariances.bs_noise.trace(),
        p_bar_n: r.covariances.ue_noise.trace(),
        iterations: r.iterations,
        status: r.status.name().into(),
        sop_certificate: r.certificates.sop,
        exposure_certificate: r.certificates.exposure,
    }
}

/// All cells of one realization. Grid points run in ascending order so each
/// can start from the previous point's solution, and configurations run from
/// fewer to more noise sources so each can start from its subsets' solutions.
fn run_realization(
    config: &ExperimentConfig,
    realization: usize,
) -> Result<Vec<(usize, usize, SweepRecord)>, ConfigError> {
    let ch = config.channel(realization)?;
    let mut grid: Vec<(usize, f64)> = config.p_d_max_grid_db.iter().copied().enumerate().collect();
    grid.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut configs: Vec<(usize, NoiseConfig)> = config.noise_configs.iter().copied().enumerate().collect();
    configs.sort_by_key(|(_, c)| u8::from(c.bs_noise) + u8::from(c.ue_noise));
    let mut previous: Vec<Option<CovarianceSet>> = vec![None; configs.len()];
    let mut out = Vec::new();
    for &(gi, db) in &grid {
        let spec = config.outage_spec(db);
        let mut here: Vec<(NoiseConfig, CovarianceSet)> = Vec::new();
        for (slot, &(ci, cfg)) in configs.iter().enumerate() {
            let mut starts: Vec<&CovarianceSet> = previous[slot].iter().collect();
            starts.extend(
                here.iter()
                    .filter(|(c, _)| c.is_subset_of(&cfg) && *c != cfg)
                    .map(|(_, x)| x),
            );
            let r = solve_multistart(&ch, &spec, cfg, &config.solver, &starts);
            out.push((gi, ci, record(db, cfg, realization, &r)));
            here.push((cfg, r.covariances.clone()));
            previous[slot] = Some(r.covariances);
        }
    }
    Ok(out)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn aggregate(records: &[SweepRecord], epsilon: f64, delta: f64) -> Vec<AggregateRecord> {
    let mut out: Vec<AggregateRecord> = Vec::new();
    for chunk in records.chunk_by(|a, b| a.p_d_max_db == b.p_d_max_db && a.noise_config == b.noise_config) {
        let col = |f: fn(&SweepRecord) -> f64| mean_se(&chunk.iter().map(f).collect::<Vec<_>>());
        let (r_eps_mean, r_eps_se) = col(|r| r.r_eps);
        let (r_e_max_mean, r_e_max_se) = col(|r| r.r_e_max);
        let (p_mean, p_se) = col(|r| r.p);
        let (p_n_mean, p_n_se) = col(|r| r.p_n);
        let (p_bar_n_mean, p_bar_n_se) = col(|r| r.p_bar_n);
        let first = &chunk[0];
        out.push(AggregateRecord {
            p_d_max_db: first.p_d_max_db,
            p_d_max: first.p_d_max,
            noise_config: first.noise_config.clone(),
            realizations: chunk.len(),
            r_eps_mean,
            r_eps_se,
            r_e_max_mean,
            r_e_max_se,
            p_mean,
            p_se,
            p_n_mean,
            p_n_se,
            p_bar_n_mean,
            p_bar_n_se,
            certified: chunk
                .iter()
                .filter(|r| {
                    r.sop_certificate >= 1.0 - epsilon - CERTIFICATE_SLACK
                        && r.exposure_certificate >= 1.0 - delta - CERTIFICATE_SLACK
                })
                .count(),
            converged: chunk.iter().filter(|r| r.status == RunStatus::Converged.name()).count(),
        });
    }
    out
}

/// Runs every (grid point, configuration, realization) cell. Realizations
/// run in parallel; records come back ordered by grid point as configured,
/// then configuration, then realization.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutput, ConfigError> {
    config.validate()?;
    let per: Vec<_> = (0..config.realizations)
        .into_par_iter()
        .map(|i| run_realization(config, i))
        .collect::<Result<_, _>>()?;
    let mut cells: Vec<(usize, usize, SweepRecord)> = per.into_iter().flatten().collect();
    cells.sort_by_key(|(g, c, r)| (*g, *c, r.realization_index));
    let records: Vec<SweepRecord> = cells.into_iter().map(|(_, _, r)| r).collect();
    let aggregate = aggregate(&records, config.epsilon, config.delta);
    Ok(SweepOutput { records, aggregate })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

/// Writes `records.csv` and `aggregate.csv` into `dir`.
pub fn write_sweep(dir: &Path, out: &SweepOutput) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join(RECORDS_FILE), &out.records)?;
    write_csv(&dir.join(AGGREGATE_FILE), &out.aggregate)
}

/// Result of the `single` command.
#[derive(Clone, Debug, Serialize)]
pub struct SingleRun {
    pub p_d_max_db: f64,
    pub noise_config: String,
    pub realization_index: usize,
    pub user_channel: ComplexMatrix,
    pub spec: OutageSpec,
    pub result: SolveResult,
}

/// One optimization from the fresh start with its full iteration trace.
pub fn run_single(
    config: &ExperimentConfig,
    p_d_max_db: f64,
    cfg: NoiseConfig,
    realization: usize,
) -> Result<SingleRun, ConfigError> {
    config.validate()?;
    if !p_d_max_db.is_finite() {
        return Err(ConfigError::Invalid("exposure limit must be a finite dB value".into()));
    }
    let ch = config.channel(realization)?;
    let spec = config.outage_spec(p_d_max_db);
    let result = optimize(&ch, &spec, cfg, &config.solver);
    Ok(SingleRun {
        p_d_max_db,
        noise_config: cfg.name().into(),
        realization_index: realization,
        user_channel: ch.h_u().clone(),
        spec,
        result,
    })
}

/// Closed-form outage probabilities of one point next to sampled ones.
#[derive(Clone, Debug, Serialize)]
pub struct OutageCheck {
    pub covariances: CovarianceSet,
    pub exposure_limit: f64,
    pub sop_closed_form: f64,
    pub sop_empirical: Estimate,
    pub sop_sigmas: f64,
    pub exposure_closed_form: f64,
    pub exposure_empirical: Estimate,
    pub exposure_sigmas: f64,
}

pub fn check_outage(ch: &ChannelModel, cov: &CovarianceSet, exposure_limit: f64, samples: &SampleSpec) -> OutageCheck {
    let sop_closed_form = secrecy_outage_prob(ch, cov);
    let exposure_closed_form = exposure_outage_prob(ch, cov, exposure_limit);
    let sop_empirical = empirical_sop(ch, cov, samples);
    let exposure_empirical = empirical_exposure(ch, cov, exposure_limit, samples);
    OutageCheck {
        covariances: cov.clone(),
        exposure_limit,
        sop_closed_form,
        sop_sigmas: sop_empirical.sigmas_from(sop_closed_form),
        sop_empirical,
        exposure_closed_form,
        exposure_sigmas: exposure_empirical.sigmas_from(exposure_closed_form),
        exposure_empirical,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use emfsec_core::{Dimensions, HermitianMatrix};

    #[test]
    fn filling_scales_base_station_blocks_only() {
        let c = CovarianceSet {
            signal: HermitianMatrix::scaled_identity(2, 1.0),
            bs_noise: HermitianMatrix::scaled_identity(2, 0.5),
            ue_noise: HermitianMatrix::scaled_identity(1, 0.3),
            rate_threshold: 0.7,
        };
        let f = fill_bs_power(&c, 9.0).unwrap();
        assert!((f.bs_power() - 9.0).abs() < 1e-12);
        assert!((f.signal.trace() / f.bs_noise.trace() - 2.0).abs() < 1e-12);
        assert_eq!(f.ue_noise, c.ue_noise);
        assert_eq!(f.rate_threshold, c.rate_threshold);
        assert!(fill_bs_power(&c, 3.0).is_none());
        assert!(fill_bs_power(&CovarianceSet::zeros(Dimensions::TWO_BY_ONE), 9.0).is_none());
    }

    #[test]
    fn mean_and_standard_error() {
        assert_eq!(mean_se(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tight_exposure_limits_without_noise_stay_finite() {
        let cfg = ExperimentConfig::default();
        for (db, realization) in [(-10.0, 0), (-6.0, 1), (-10.0, 7)] {
            let run = run_single(&cfg, db, NoiseConfig::NONE, realization).unwrap();
            let ch = cfg.channel(realization).unwrap();
            assert!(run.result.covariances.is_finite());
            assert!(run.result.covariances.rate_threshold <= ch.user_rate_bound(cfg.bs_power()) + 1e-9);
            assert!(run.result.r_eps >= 0.0);
        }
    }
}

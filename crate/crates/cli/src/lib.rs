//! Command-line harness: exposure sweeps, single runs, outage spot checks and
//! the validation suites.
//!
//! Exit codes: `0` success, `1` validation or runtime failure, `2` bad
//! configuration or usage.

pub mod config;
pub mod experiment;
pub mod instances;
pub mod validate;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use emfsec_core::montecarlo::SampleSpec;
use emfsec_core::quadform::gamma_series;
use emfsec_core::sca::NoiseConfig;
use emfsec_core::CovarianceSet;
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig};
use crate::validate::Level;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_BAD_CONFIG: i32 = 2;

/// Environment variable overriding the sweep output directory.
pub const OUTPUT_DIR_ENV: &str = "EMFSEC_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "emfsec",
    version,
    about = "Secure precoding under a probabilistic exposure limit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep the exposure limit over noise configurations and realizations.
    Sweep(SweepArgs),
    /// One optimization with its iteration trace, as JSON.
    Single(SingleArgs),
    /// Run the oracle suites; exits 1 if any check fails.
    Validate(ValidateArgs),
    /// Closed-form outage probabilities of one point next to sampled ones.
    Sop(SopArgs),
    /// Print the resolved configuration in the config file format.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set channel.g_u_max=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Comma-separated exposure limits in dB.
    #[arg(long, allow_hyphen_values = true)]
    pdmax_grid: Option<String>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Comma-separated subset of none, bs-only, ue-only, both.
    #[arg(long)]
    configs: Option<String>,
    /// Output directory for records.csv and aggregate.csv.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PointArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Exposure limit in dB.
    #[arg(long, allow_hyphen_values = true)]
    pdmax_db: f64,
    #[arg(long, default_value = "both")]
    noise_config: String,
    #[arg(long, default_value_t = 0)]
    realization: usize,
    /// Write JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SingleArgs {
    #[command(flatten)]
    point: PointArgs,
}

#[derive(Debug, Args)]
struct SopArgs {
    #[command(flatten)]
    point: PointArgs,
    /// Monte Carlo draws (defaults to `mc.samples`).
    #[arg(long)]
    samples: Option<u64>,
    /// JSON covariance set to check instead of the optimized point.
    #[arg(long)]
    covariances: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, default_value = "fast")]
    level: Level,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the incomplete-gamma series with a faulty one.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_BAD_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &args.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn noise_config(name: &str) -> Result<NoiseConfig, ConfigError> {
    name.parse().map_err(|e: emfsec_core::Error| ConfigError::Value {
        key: "noise-config".into(),
        value: name.into(),
        reason: e.to_string(),
    })
}

fn sweep(args: &SweepArgs) -> Result<i32, CliError> {
    let mut cfg = load(&args.common)?;
    if let Some(g) = &args.pdmax_grid {
        cfg.set("sweep.p_d_max_grid_db", g)?;
    }
    if let Some(n) = args.realizations {
        cfg.realizations = n;
    }
    if let Some(c) = &args.configs {
        cfg.set("sweep.noise_configs", c)?;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    let out = experiment::run_sweep(&cfg)?;
    experiment::write_sweep(&cfg.output_dir, &out)?;
    std::fs::write(cfg.output_dir.join("config.txt"), cfg.to_text())?;
    eprintln!(
        "wrote {} records and {} aggregate rows to {}",
        out.records.len(),
        out.aggregate.len(),
        cfg.output_dir.display()
    );
    Ok(EXIT_OK)
}

fn single(args: &SingleArgs) -> Result<i32, CliError> {
    let p = &args.point;
    let cfg = load(&p.common)?;
    let run = experiment::run_single(&cfg, p.pdmax_db, noise_config(&p.noise_config)?, p.realization)?;
    emit_json(&run, p.out.as_deref())?;
    Ok(EXIT_OK)
}

fn sop(args: &SopArgs) -> Result<i32, CliError> {
    let p = &args.point;
    let cfg = load(&p.common)?;
    cfg.validate()?;
    let ch = cfg.channel(p.realization)?;
    let cov: CovarianceSet = match &args.covariances {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?
        }
        None => {
            experiment::run_single(&cfg, p.pdmax_db, noise_config(&p.noise_config)?, p.realization)?
                .result
                .covariances
        }
    };
    let dims = ch.dims();
    if cov.signal.dim() != dims.n_bs || cov.bs_noise.dim() != dims.n_bs || cov.ue_noise.dim() != dims.n_ue_tx {
        return Err(ConfigError::Invalid("covariance dimensions do not match the configuration".into()).into());
    }
    let samples = SampleSpec::new(args.samples.unwrap_or(cfg.mc_samples), cfg.seed);
    let check = experiment::check_outage(&ch, &cov, config::db_to_linear(p.pdmax_db), &samples);
    emit_json(&check, p.out.as_deref())?;
    Ok(EXIT_OK)
}

fn run_validate(args: &ValidateArgs) -> Result<i32, CliError> {
    let series = if args.inject_fault {
        validate::truncated_series
    } else {
        gamma_series
    };
    let report = validate::run_validate(args.level, args.seed, series);
    for c in &report.checks {
        eprintln!("{:<26} {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.note);
    }
    emit_json(&report, args.out.as_deref())?;
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILURE })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Single(a) => single(a),
        Command::Validate(a) => run_validate(a),
        Command::Sop(a) => sop(a),
        Command::Config(a) => load(a).map_err(CliError::from).and_then(|c| {
            c.validate()?;
            print!("{}", c.to_text());
            Ok(EXIT_OK)
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    })
}

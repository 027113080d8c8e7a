//! Experiment configuration in a flat `key = value` format with dotted keys.
//!
//! ```text
//! # comments and blank lines are ignored
//! channel.g_u_max = 0.1
//! sweep.p_d_max_grid_db = -10, -6, -2, 2
//! sweep.noise_configs = none, both
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use emfsec_core::sca::{NoiseConfig, ScaOptions};
use emfsec_core::{ChannelDescription, ChannelModel, ComplexMatrix, Dimensions, HermitianMatrix, OutageSpec, C64};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Exposure grid used when none is configured, in dB.
pub const DEFAULT_GRID_DB: [f64; 8] = [-10.0, -6.0, -2.0, 2.0, 6.0, 10.0, 14.0, 18.0];
pub const DEFAULT_REALIZATIONS: usize = 20;
pub const DEFAULT_OUTPUT_DIR: &str = "emfsec-out";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Second-order channel statistics; covariances are multiples of the identity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelStats {
    pub g_e: f64,
    pub g_d: f64,
    pub g_bar_e: f64,
    pub g_bar_d: f64,
    /// Self-interference bound of the full-duplex user.
    pub g_u_max: f64,
    pub v_u: f64,
    pub v_e: f64,
}

impl Default for ChannelStats {
    fn default() -> Self {
        Self {
            g_e: 1.0,
            g_d: 1.0,
            g_bar_e: 1.0,
            g_bar_d: 1.0,
            g_u_max: 0.1,
            v_u: 0.1,
            v_e: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dims: Dimensions,
    pub channel: ChannelStats,
    pub p_max_db: f64,
    pub p_bar_max_db: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub p_d_max_grid_db: Vec<f64>,
    #[serde(serialize_with = "config_names")]
    pub noise_configs: Vec<NoiseConfig>,
    pub realizations: usize,
    pub seed: u64,
    pub solver: ScaOptions,
    /// Draws per Monte Carlo check in the `sop` command.
    pub mc_samples: u64,
    pub output_dir: PathBuf,
}

fn config_names<S: serde::Serializer>(v: &[NoiseConfig], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|c| c.name()))
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dims: Dimensions::TWO_BY_ONE,
            channel: ChannelStats::default(),
            p_max_db: 10.0,
            p_bar_max_db: 10.0,
            epsilon: 0.05,
            delta: 0.05,
            p_d_max_grid_db: DEFAULT_GRID_DB.to_vec(),
            noise_configs: NoiseConfig::ALL.to_vec(),
            realizations: DEFAULT_REALIZATIONS,
            seed: 1,
            solver: ScaOptions::default(),
            mc_samples: 100_000,
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
        }
    }
}

pub const KEYS: [&str; 28] = [
    "dims.n_bs",
    "dims.n_ue_tx",
    "dims.n_ue_rx",
    "channel.g_e",
    "channel.g_d",
    "channel.g_bar_e",
    "channel.g_bar_d",
    "channel.g_u_max",
    "channel.v_u",
    "channel.v_e",
    "power.p_max_db",
    "power.p_bar_max_db",
    "outage.epsilon",
    "outage.delta",
    "sweep.p_d_max_grid_db",
    "sweep.noise_configs",
    "sweep.realizations",
    "sweep.seed",
    "solver.max_iters",
    "solver.conv_tol",
    "solver.subproblem_tol",
    "solver.max_recoveries",
    "penalty.initial",
    "penalty.growth_factor",
    "penalty.growth_every",
    "penalty.max_weight",
    "output.dir",
    "mc.samples",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_text(&text)
    }

    /// Applies every `key = value` line of `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (key, value) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: kv.into(),
        })?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let s = &mut self.solver;
        match key {
            "dims.n_bs" => self.dims.n_bs = parse(key, value)?,
            "dims.n_ue_tx" => self.dims.n_ue_tx = parse(key, value)?,
            "dims.n_ue_rx" => self.dims.n_ue_rx = parse(key, value)?,
            "channel.g_e" => self.channel.g_e = parse(key, value)?,
            "channel.g_d" => self.channel.g_d = parse(key, value)?,
            "channel.g_bar_e" => self.channel.g_bar_e = parse(key, value)?,
            "channel.g_bar_d" => self.channel.g_bar_d = parse(key, value)?,
            "channel.g_u_max" => self.channel.g_u_max = parse(key, value)?,
            "channel.v_u" => self.channel.v_u = parse(key, value)?,
            "channel.v_e" => self.channel.v_e = parse(key, value)?,
            "power.p_max_db" => self.p_max_db = parse(key, value)?,
            "power.p_bar_max_db" => self.p_bar_max_db = parse(key, value)?,
            "outage.epsilon" => self.epsilon = parse(key, value)?,
            "outage.delta" => self.delta = parse(key, value)?,
            "sweep.p_d_max_grid_db" => self.p_d_max_grid_db = parse_list(key, value)?,
            "sweep.noise_configs" => self.noise_configs = parse_list(key, value)?,
            "sweep.realizations" => self.realizations = parse(key, value)?,
            "sweep.seed" => self.seed = parse(key, value)?,
            "solver.max_iters" => s.max_iters = parse(key, value)?,
            "solver.conv_tol" => s.conv_tol = parse(key, value)?,
            "solver.subproblem_tol" => s.solver_tol = parse(key, value)?,
            "solver.max_recoveries" => s.max_recoveries = parse(key, value)?,
            "penalty.initial" => s.schedule.initial = emfsec_core::subproblem::Penalties::uniform(parse(key, value)?),
            "penalty.growth_factor" => s.schedule.growth_factor = parse(key, value)?,
            "penalty.growth_every" => s.schedule.growth_every = parse(key, value)?,
            "penalty.max_weight" => s.schedule.max_weight = parse(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            "mc.samples" => self.mc_samples = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        let d = self.dims;
        if d.n_bs == 0 || d.n_ue_tx == 0 || d.n_ue_rx == 0 {
            return bad("antenna counts must be positive");
        }
        let c = &self.channel;
        for (name, v) in [
            ("g_e", c.g_e),
            ("g_d", c.g_d),
            ("g_bar_e", c.g_bar_e),
            ("g_bar_d", c.g_bar_d),
            ("g_u_max", c.g_u_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("channel.{name} must be finite and >= 0"));
            }
        }
        if !(c.v_u > 0.0 && c.v_u.is_finite() && c.v_e > 0.0 && c.v_e.is_finite()) {
            return bad("noise powers must be positive and finite");
        }
        if self.p_max_db.is_nan()
            || self.p_max_db == f64::INFINITY
            || self.p_bar_max_db.is_nan()
            || self.p_bar_max_db == f64::INFINITY
        {
            return bad("power budgets must be finite dB values or -inf");
        }
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.epsilon) || !unit(self.delta) {
            return bad("outage probabilities must lie in (0, 1)");
        }
        if self.p_d_max_grid_db.is_empty() || self.p_d_max_grid_db.iter().any(|x| !x.is_finite()) {
            return bad("the exposure grid must be a nonempty list of finite dB values");
        }
        if self.noise_configs.is_empty() {
            return bad("at least one noise configuration is required");
        }
        if self.realizations == 0 {
            return bad("realizations must be >= 1");
        }
        let s = &self.solver;
        if s.max_iters == 0 || !(s.conv_tol > 0.0) || !(1e-12..=1e-4).contains(&s.solver_tol) {
            return bad("solver settings out of range (subproblem_tol must lie in [1e-12, 1e-4])");
        }
        let p = &s.schedule;
        if !(p.initial.min() > 0.0)
            || !(p.growth_factor >= 1.0)
            || p.growth_every == 0
            || !(p.max_weight >= p.initial.min())
        {
            return bad("penalty schedule out of range");
        }
        if self.mc_samples == 0 {
            return bad("mc.samples must be positive");
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let s = &self.solver;
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let names = self
            .noise_configs
            .iter()
            .map(|c| c.name())
            .collect::<Vec<_>>()
            .join(", ");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("dims.n_bs", self.dims.n_bs.to_string());
        kv("dims.n_ue_tx", self.dims.n_ue_tx.to_string());
        kv("dims.n_ue_rx", self.dims.n_ue_rx.to_string());
        kv("channel.g_e", self.channel.g_e.to_string());
        kv("channel.g_d", self.channel.g_d.to_string());
        kv("channel.g_bar_e", self.channel.g_bar_e.to_string());
        kv("channel.g_bar_d", self.channel.g_bar_d.to_string());
        kv("channel.g_u_max", self.channel.g_u_max.to_string());
        kv("channel.v_u", self.channel.v_u.to_string());
        kv("channel.v_e", self.channel.v_e.to_string());
        kv("power.p_max_db", self.p_max_db.to_string());
        kv("power.p_bar_max_db", self.p_bar_max_db.to_string());
        kv("outage.epsilon", self.epsilon.to_string());
        kv("outage.delta", self.delta.to_string());
        kv("sweep.p_d_max_grid_db", list(&self.p_d_max_grid_db));
        kv("sweep.noise_configs", names);
        kv("sweep.realizations", self.realizations.to_string());
        kv("sweep.seed", self.seed.to_string());
        kv("solver.max_iters", s.max_iters.to_string());
        kv("solver.conv_tol", s.conv_tol.to_string());
        kv("solver.subproblem_tol", s.solver_tol.to_string());
        kv("solver.max_recoveries", s.max_recoveries.to_string());
        kv("penalty.initial", s.schedule.initial.min().to_string());
        kv("penalty.growth_factor", s.schedule.growth_factor.to_string());
        kv("penalty.growth_every", s.schedule.growth_every.to_string());
        kv("penalty.max_weight", s.schedule.max_weight.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        kv("mc.samples", self.mc_samples.to_string());
        out
    }

    pub fn bs_power(&self) -> f64 {
        db_to_linear(self.p_max_db)
    }

    pub fn ue_power(&self) -> f64 {
        db_to_linear(self.p_bar_max_db)
    }

    pub fn outage_spec(&self, p_d_max_db: f64) -> OutageSpec {
        OutageSpec {
            epsilon: self.epsilon,
            delta: self.delta,
            exposure_limit: db_to_linear(p_d_max_db),
            bs_power: self.bs_power(),
            ue_power: self.ue_power(),
        }
    }

    /// User channel of one realization, drawn from `CN(0, I)` on the
    /// realization's own stream of the seeded generator.
    pub fn user_channel(&self, realization: usize) -> ComplexMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(realization as u64);
        let mut uniform = || ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        ComplexMatrix::from_fn(self.dims.n_ue_rx, self.dims.n_bs, |_, _| {
            let (u, v) = (uniform(), uniform());
            C64::from_polar((-u.ln()).sqrt(), std::f64::consts::TAU * v)
        })
    }

    pub fn channel(&self, realization: usize) -> Result<ChannelModel, ConfigError> {
        let d = self.dims;
        let c = &self.channel;
        let eye = |n: usize, s: f64| HermitianMatrix::scaled_identity(n, s);
        ChannelModel::new(ChannelDescription {
            h_u: self.user_channel(realization),
            self_interference: c.g_u_max,
            user_noise: eye(d.n_ue_rx, c.v_u),
            eve_noise: c.v_e,
            eve_from_bs: eye(d.n_bs, c.g_e),
            eve_from_ue: eye(d.n_ue_tx, c.g_bar_e),
            exposure_from_bs: eye(d.n_bs, c.g_d),
            exposure_from_ue: eye(d.n_ue_tx, c.g_bar_d),
        })
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

//! Run configuration and named presets for the bundled experiments.

use serde::{Deserialize, Serialize};

use crate::adhdp::AdhdpConfig;
use crate::env::{CartPoleConfig, EnvConfig, ResetMode, SpacecraftConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricsParams;
use crate::sac::SacConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    Sac(SacConfig),
    Adhdp(AdhdpConfig),
}

impl AlgorithmConfig {
    pub fn id(&self) -> &'static str {
        match self {
            AlgorithmConfig::Sac(_) => "sac",
            AlgorithmConfig::Adhdp(_) => "adhdp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnapshotConfig {
    /// Steps between SAC snapshots; ADHDP records once per episode.
    pub cadence: u64,
    /// Size of the replay probe stored with each SAC snapshot.
    pub probe_size: usize,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        Self {
            cadence: 5000,
            probe_size: 64,
        }
    }
}

/// Where the final-stage probe comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalProbe {
    /// Deterministic rollout of the final policy, falling back to the
    /// snapshot's own probe when the rollout ends early.
    FinalRollout,
    /// The probe stored with the final snapshot.
    Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    /// Points per axis; odd so the origin is a grid point.
    pub grid_n: usize,
    pub margin: f64,
    /// Lower bound on each axis half-width; defaults to twice the sharpness radius.
    pub min_half_width: Option<f64>,
    pub final_probe: FinalProbe,
    pub probe_size: usize,
    /// Seed for the next-action draws inside the frozen targets.
    pub target_seed: u64,
    pub metrics: MetricsParams,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            grid_n: 51,
            margin: 1.2,
            min_half_width: None,
            final_probe: FinalProbe::FinalRollout,
            probe_size: 64,
            target_seed: 0,
            metrics: MetricsParams::default(),
        }
    }
}

impl LandscapeConfig {
    pub fn min_half_width(&self) -> f64 {
        self.min_half_width.unwrap_or(2.0 * self.metrics.eps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 11 || self.grid_n % 2 == 0 {
            return Err(Error::Config(format!("grid_n must be odd and >= 11, got {}", self.grid_n)));
        }
        if !(self.margin > 0.0) || !(self.min_half_width() > 0.0) {
            return Err(Error::Config("margin and min_half_width must be positive".into()));
        }
        if self.probe_size == 0 {
            return Err(Error::Config("probe_size must be >= 1".into()));
        }
        let m = &self.metrics;
        if !(m.eps > 0.0) || !(m.rho > 0.0) || m.n_angles < 16 || m.window_halfwidth == 0 {
            return Err(Error::Config("metrics need eps > 0, rho > 0, n_angles >= 16, window >= 1".into()));
        }
        if 2 * m.window_halfwidth + 1 > self.grid_n {
            return Err(Error::Config("Hessian window does not fit in the grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset the config was derived from, if any.
    #[serde(default)]
    pub preset: Option<String>,
    pub env: EnvConfig,
    pub algorithm: AlgorithmConfig,
    /// Master seed; copied into the algorithm config.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub snapshot: SnapshotConfig,
    #[serde(default)]
    pub landscape: LandscapeConfig,
    /// Length of the deterministic evaluation rollout after training.
    #[serde(default = "default_rollout_steps")]
    pub rollout_steps: usize,
}

fn default_rollout_steps() -> usize {
    500
}

pub const PRESETS: [&str; 4] = [
    "sac-spacecraft-convergent",
    "sac-spacecraft-divergent",
    "sac-cartpole",
    "adhdp-spacecraft",
];

fn spacecraft() -> EnvConfig {
    EnvConfig::Spacecraft(SpacecraftConfig {
        reset: ResetMode::Nominal,
        max_episode_steps: 500,
        ..Default::default()
    })
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (env, algorithm) = match name {
            "sac-spacecraft-convergent" => (spacecraft(), AlgorithmConfig::Sac(SacConfig::default())),
            "sac-spacecraft-divergent" => (
                spacecraft(),
                AlgorithmConfig::Sac(SacConfig {
                    lr: 0.2,
                    buffer_capacity: 500,
                    batch_size: 16,
                    gamma: 0.999,
                    tau: 0.999,
                    auto_temperature: false,
                    fixed_alpha: 1e-3,
                    grad_iters_per_step: 10,
                    ..Default::default()
                }),
            ),
            "sac-cartpole" => (
                EnvConfig::Cartpole(CartPoleConfig::default()),
                AlgorithmConfig::Sac(SacConfig {
                    total_steps: 50_000,
                    buffer_capacity: 100_000,
                    batch_size: 256,
                    learning_starts: 1000,
                    ..Default::default()
                }),
            ),
            "adhdp-spacecraft" => (
                EnvConfig::Spacecraft(SpacecraftConfig {
                    reset: ResetMode::Nominal,
                    max_episode_steps: 500,
                    omega_limit: Some(3.0),
                    ..Default::default()
                }),
                AlgorithmConfig::Adhdp(AdhdpConfig::default()),
            ),
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset {name:?}; available: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            preset: Some(name.to_string()),
            env,
            algorithm,
            seed: 0,
            snapshot: SnapshotConfig::default(),
            landscape: LandscapeConfig::default(),
            rollout_steps: default_rollout_steps(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c.resolved())
    }

    /// Copies the master seed into the algorithm config.
    pub fn resolved(mut self) -> Self {
        match &mut self.algorithm {
            AlgorithmConfig::Sac(c) => c.seed = self.seed,
            AlgorithmConfig::Adhdp(c) => c.seed = self.seed,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.algorithm {
            AlgorithmConfig::Sac(c) => c.validate()?,
            AlgorithmConfig::Adhdp(c) => c.validate()?,
        }
        self.env.build()?;
        if self.snapshot.cadence == 0 || self.snapshot.probe_size == 0 {
            return Err(Error::Config("snapshot cadence and probe_size must be >= 1".into()));
        }
        if self.rollout_steps == 0 {
            return Err(Error::Config("rollout_steps must be >= 1".into()));
        }
        self.landscape.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn sac(&self) -> Option<&SacConfig> {
        match &self.algorithm {
            AlgorithmConfig::Sac(c) => Some(c),
            AlgorithmConfig::Adhdp(_) => None,
        }
    }
}

//! Simulation environments seen by the agents through observations and
//! rewards only.

mod cartpole;
mod quaternion;
mod spacecraft;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cartpole::{
    cartpole_accel, cartpole_cost, cartpole_reset, cartpole_step, CartPoleConfig, CartPoleEnv,
    CartPoleParams, CartPoleState, CartPoleStep,
};
pub use quaternion::{quat_mul, Quaternion};
pub use spacecraft::{
    attitude_error, attitude_reward, attitude_step, spacecraft_reset, AttitudeState, AttitudeStep, ResetMode,
    SpacecraftConfig, SpacecraftEnv, SpacecraftParams,
};

use crate::error::Result;

pub type EnvRng = ChaCha8Rng;

/// Outcome of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Failure termination: the value of the next state is not bootstrapped.
    pub terminated: bool,
    /// Time-limit truncation: the episode ends but bootstrapping continues.
    pub truncated: bool,
    /// The integrator produced a non-finite state.
    pub diverged: bool,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated || self.diverged
    }
}

pub trait Environment: Send {
    fn id(&self) -> &'static str;
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn max_episode_steps(&self) -> usize;
    fn reset(&mut self, rng: &mut EnvRng) -> Vec<f64>;
    /// Reset to the environment's fixed evaluation start state.
    fn reset_eval(&mut self, rng: &mut EnvRng) -> Vec<f64>;
    /// Applies a normalised action in `[-1, 1]^d`.
    fn step(&mut self, action: &[f64]) -> EnvStep;
    fn observation(&self) -> Vec<f64>;
    fn trace_header(&self) -> &'static [&'static str];
    /// One rollout-trace row describing the state after the last step.
    fn trace_row(&self, t: f64, step: &EnvStep) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Spacecraft(SpacecraftConfig),
    Cartpole(CartPoleConfig),
}

impl EnvConfig {
    pub fn id(&self) -> &'static str {
        match self {
            EnvConfig::Spacecraft(_) => spacecraft::ENV_ID,
            EnvConfig::Cartpole(_) => cartpole::ENV_ID,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Spacecraft(c) => Box::new(SpacecraftEnv::new(c.clone())?),
            EnvConfig::Cartpole(c) => Box::new(CartPoleEnv::new(c.clone())?),
        })
    }
}

//! Online action-dependent heuristic dynamic programming.
//!
//! The critic estimates a discounted cost-to-go `J(s, a)` where the cost is the
//! negated environment reward. Each time step runs a short inner loop of
//! temporal-difference descent on the critic, then drives the critic output
//! toward zero cost through the actor.

use std::io::{Read, Write};

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{expect_magic, get_str, get_u32, get_u8, put_str, put_u32, put_u8};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::nn::{
    backward_batch, forward_batch, mlp_init, read_params, write_params, Activation, BackwardRequest, MlpSpec,
    ParamVector,
};
use crate::replay::{stream_rng, Transition};
use crate::rollout::Policy;

/// `[r_t + γ·J_t] − J_prev`.
pub fn td_error_online(r_t: f64, j_t: f64, j_prev: f64, gamma: f64) -> f64 {
    (r_t + gamma * j_t) - j_prev
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdhdpConfig {
    pub critic_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub gamma: f64,
    pub critic_iters: usize,
    /// Inner critic loop stops once `½e_c²` falls below this.
    pub critic_tolerance: f64,
    pub actor_iters: usize,
    /// Inner actor loop stops once `½J²` falls below this.
    pub actor_tolerance: f64,
    /// Standard deviation of Gaussian noise added to the actor's action.
    pub exploration_std: f64,
    pub episodes: u64,
    pub seed: u64,
}

impl Default for AdhdpConfig {
    fn default() -> Self {
        Self {
            critic_hidden: vec![32, 32],
            actor_hidden: vec![32, 32],
            lr_critic: 0.01,
            lr_actor: 0.005,
            gamma: 0.95,
            critic_iters: 10,
            critic_tolerance: 1e-6,
            actor_iters: 5,
            actor_tolerance: 1e-6,
            exploration_std: 0.05,
            episodes: 50,
            seed: 0,
        }
    }
}

impl AdhdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_critic >= 0.0 && self.lr_actor >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.critic_iters == 0 || self.actor_iters == 0 {
            return Err(Error::Config("inner iteration caps must be >= 1".into()));
        }
        if !(self.exploration_std >= 0.0) {
            return Err(Error::Config("exploration_std must be >= 0".into()));
        }
        if self.critic_hidden.contains(&0) || self.actor_hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be >= 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn critic_spec_for(sd: usize, ad: usize, hidden: &[usize]) -> Result<MlpSpec> {
    MlpSpec::with_hidden(sd + ad, hidden, 1, Activation::Tanh, Activation::Identity)
}

pub(crate) fn actor_spec_for(sd: usize, ad: usize, hidden: &[usize]) -> Result<MlpSpec> {
    MlpSpec::with_hidden(sd, hidden, ad, Activation::Tanh, Activation::Tanh)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepScalars {
    pub cost: f64,
    /// TD error before and after the critic's inner loop.
    pub td_error_initial: f64,
    pub td_error_final: f64,
    /// Critic output at the actor's action after the actor's inner loop.
    pub actor_error: f64,
    pub critic_iters: usize,
    pub actor_iters: usize,
}

#[derive(Debug, Clone)]
pub struct AdhdpAgent {
    pub config: AdhdpConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub critic_spec: MlpSpec,
    pub actor_spec: MlpSpec,
    pub critic: ParamVector,
    pub actor: ParamVector,
    pub diverged: bool,
    rng: ChaCha8Rng,
}

const STREAM_INIT: u64 = 20;
const STREAM_NOISE: u64 = 21;
const STREAM_ENV: u64 = 22;

impl AdhdpAgent {
    pub fn new(state_dim: usize, action_dim: usize, config: AdhdpConfig) -> Result<Self> {
        config.validate()?;
        let critic_spec = critic_spec_for(state_dim, action_dim, &config.critic_hidden)?;
        let actor_spec = actor_spec_for(state_dim, action_dim, &config.actor_hidden)?;
        let mut init = stream_rng(config.seed, STREAM_INIT);
        Ok(Self {
            critic: mlp_init(&critic_spec, init.next_u64()),
            actor: mlp_init(&actor_spec, init.next_u64()),
            rng: stream_rng(config.seed, STREAM_NOISE),
            critic_spec,
            actor_spec,
            state_dim,
            action_dim,
            config,
            diverged: false,
        })
    }

    pub fn action(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(forward_batch(&self.actor_spec, &self.actor.values, s, 1)?.into_output())
    }

    pub fn cost_to_go(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let mut x = s.to_vec();
        x.extend_from_slice(a);
        Ok(forward_batch(&self.critic_spec, &self.critic.values, &x, 1)?.output()[0])
    }

    /// Semi-gradient descent on `½e_c²` where `e_c = target − J(s, a)` and the
    /// target is held fixed. Returns the TD error after every iteration,
    /// starting with the initial one.
    pub fn critic_inner_loop(&mut self, s: &[f64], a: &[f64], target: f64) -> Result<Vec<f64>> {
        let mut x = s.to_vec();
        x.extend_from_slice(a);
        let mut errors = Vec::with_capacity(self.config.critic_iters + 1);
        for _ in 0..self.config.critic_iters {
            let cache = forward_batch(&self.critic_spec, &self.critic.values, &x, 1)?;
            let e = target - cache.output()[0];
            errors.push(e);
            if 0.5 * e * e < self.config.critic_tolerance {
                return Ok(errors);
            }
            let g = backward_batch(&self.critic_spec, &self.critic.values, &cache, &[-e], BackwardRequest { params: true, input: false })?
                .params
                .expect("requested");
            self.apply(true, &g);
        }
        errors.push(target - self.cost_to_go(s, a)?);
        Ok(errors)
    }

    /// Descent on `½J(s, actor(s))²` through the critic's action input.
    /// Returns the final critic output and the iteration count.
    pub fn actor_inner_loop(&mut self, s: &[f64]) -> Result<(f64, usize)> {
        let sd = self.state_dim;
        for it in 0..self.config.actor_iters {
            let actor_cache = forward_batch(&self.actor_spec, &self.actor.values, s, 1)?;
            let mut x = s.to_vec();
            x.extend_from_slice(actor_cache.output());
            let critic_cache = forward_batch(&self.critic_spec, &self.critic.values, &x, 1)?;
            let j = critic_cache.output()[0];
            if 0.5 * j * j < self.config.actor_tolerance {
                return Ok((j, it));
            }
            let dx = backward_batch(&self.critic_spec, &self.critic.values, &critic_cache, &[j], BackwardRequest { params: false, input: true })?
                .input
                .expect("requested");
            let g = backward_batch(&self.actor_spec, &self.actor.values, &actor_cache, &dx[sd..], BackwardRequest { params: true, input: false })?
                .params
                .expect("requested");
            self.apply(false, &g);
        }
        let a = self.action(s)?;
        Ok((self.cost_to_go(s, &a)?, self.config.actor_iters))
    }

    fn apply(&mut self, critic: bool, grad: &[f64]) {
        let (params, lr) = if critic {
            (&mut self.critic.values, self.config.lr_critic)
        } else {
            (&mut self.actor.values, self.config.lr_actor)
        };
        if grad.iter().any(|g| !g.is_finite()) {
            self.diverged = true;
            return;
        }
        let updated: Vec<f64> = params.iter().zip(grad).map(|(p, g)| p - lr * g).collect();
        if updated.iter().all(|v| v.is_finite()) {
            *params = updated;
        } else {
            self.diverged = true;
        }
    }

    /// One interaction step: act with exploration noise, observe, update the
    /// critic toward `cost + γ·J(s', actor(s'))` (cut on termination), then
    /// update the actor at `s`.
    pub fn step(&mut self, env: &mut dyn Environment, s: &[f64]) -> Result<(Transition, StepScalars, bool)> {
        let mut a = self.action(s)?;
        for v in &mut a {
            let noise: f64 = self.rng.sample(StandardNormal);
            *v = (*v + self.config.exploration_std * noise).clamp(-1.0, 1.0);
        }
        let st = env.step(&a);
        let cost = -st.reward;
        let j_next = if st.terminated {
            0.0
        } else {
            let a_next = self.action(&st.observation)?;
            self.cost_to_go(&st.observation, &a_next)?
        };
        let target = cost + self.config.gamma * j_next;
        let errors = self.critic_inner_loop(s, &a, target)?;
        let (actor_error, actor_iters) = self.actor_inner_loop(s)?;
        let scalars = StepScalars {
            cost,
            td_error_initial: errors[0],
            td_error_final: *errors.last().expect("non-empty"),
            actor_error,
            critic_iters: errors.len().saturating_sub(1).max(1),
            actor_iters,
        };
        let tr = Transition {
            s: s.to_vec(),
            a,
            r: st.reward,
            s_next: st.observation,
            terminated: st.terminated,
            truncated: st.truncated && !st.terminated,
        };
        Ok((tr, scalars, st.diverged))
    }
}

impl Policy for AdhdpAgent {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.action(state)
    }
}

/// Invoked once at the end of every episode.
pub trait AdhdpObserver {
    fn on_episode_end(&mut self, episode: u64, env_steps: u64, agent: &AdhdpAgent, episode_transitions: &[Transition]) -> Result<()>;
}

impl AdhdpObserver for () {
    fn on_episode_end(&mut self, _: u64, _: u64, _: &AdhdpAgent, _: &[Transition]) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdhdpEpisodeRow {
    pub episode: u64,
    pub steps: usize,
    pub total_reward: f64,
    pub mean_abs_td_error: f64,
    pub final_actor_error: f64,
    pub failed: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdhdpLog {
    pub episodes: Vec<AdhdpEpisodeRow>,
}

impl AdhdpLog {
    pub fn write_csv(&self, w: &mut impl Write, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "episode,steps,total_reward,mean_abs_td_error,final_actor_error,failed,diverged")?;
        for r in &self.episodes {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.episode,
                r.steps,
                r.total_reward,
                r.mean_abs_td_error,
                r.final_actor_error,
                r.failed as u8,
                r.diverged as u8
            )?;
        }
        Ok(())
    }
}

pub struct AdhdpRun {
    pub agent: AdhdpAgent,
    pub log: AdhdpLog,
    pub last_episode: Vec<Transition>,
}

/// Episodic training; each episode runs until the time limit or a state
/// limit ends it.
pub fn train_adhdp(env_config: &EnvConfig, config: &AdhdpConfig, observer: &mut dyn AdhdpObserver) -> Result<AdhdpRun> {
    let mut env = env_config.build()?;
    let mut agent = AdhdpAgent::new(env.observation_dim(), env.action_dim(), config.clone())?;
    let mut env_rng = stream_rng(config.seed, STREAM_ENV);
    let mut log = AdhdpLog::default();
    let mut last_episode = Vec::new();
    let mut env_steps = 0u64;
    for episode in 1..=config.episodes {
        let mut s = env.reset(&mut env_rng);
        let mut transitions = Vec::with_capacity(env.max_episode_steps());
        let mut row = AdhdpEpisodeRow {
            episode,
            steps: 0,
            total_reward: 0.0,
            mean_abs_td_error: 0.0,
            final_actor_error: f64::NAN,
            failed: false,
            diverged: false,
        };
        loop {
            let (tr, sc, diverged) = agent.step(env.as_mut(), &s)?;
            env_steps += 1;
            row.steps += 1;
            row.total_reward += tr.r;
            row.mean_abs_td_error += sc.td_error_initial.abs();
            row.final_actor_error = sc.actor_error;
            let done = tr.done();
            row.failed = tr.terminated;
            row.diverged |= diverged || agent.diverged;
            s = tr.s_next.clone();
            transitions.push(tr);
            if done {
                break;
            }
        }
        row.mean_abs_td_error /= row.steps as f64;
        log.episodes.push(row);
        observer.on_episode_end(episode, env_steps, &agent, &transitions)?;
        last_episode = transitions;
    }
    Ok(AdhdpRun {
        agent,
        log,
        last_episode,
    })
}

const CKPT_MAGIC: &[u8; 8] = b"ADHDPCK\0";
const CKPT_VERSION: u8 = 1;

pub fn write_checkpoint(w: &mut impl Write, agent: &AdhdpAgent) -> Result<()> {
    w.write_all(CKPT_MAGIC)?;
    put_u8(w, CKPT_VERSION)?;
    put_str(w, &serde_json::to_string(&agent.config)?)?;
    put_u32(w, agent.state_dim as u32)?;
    put_u32(w, agent.action_dim as u32)?;
    write_params(w, &agent.actor_spec, &agent.actor)?;
    write_params(w, &agent.critic_spec, &agent.critic)
}

/// Restores both networks; the exploration stream restarts from the seed.
pub fn read_checkpoint(r: &mut impl Read) -> Result<AdhdpAgent> {
    expect_magic(r, CKPT_MAGIC, "checkpoint")?;
    let v = get_u8(r)?;
    if v != CKPT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {v}")));
    }
    let config: AdhdpConfig = serde_json::from_str(&get_str(r)?)?;
    let sd = get_u32(r)? as usize;
    let ad = get_u32(r)? as usize;
    let mut agent = AdhdpAgent::new(sd, ad, config)?;
    for (spec, slot) in [(agent.actor_spec.clone(), &mut agent.actor), (agent.critic_spec.clone(), &mut agent.critic)] {
        let (got, p) = read_params(r)?;
        if got != spec {
            return Err(Error::format("checkpoint", "network shape differs from config"));
        }
        *slot = p;
    }
    Ok(agent)
}

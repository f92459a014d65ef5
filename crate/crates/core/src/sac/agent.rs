use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::policy::{
    actor_loss_grad, critic_loss_grad, policy_pass, soft_targets, squash, LogStdBounds, TargetNets,
};
use crate::error::{Error, Result};
use crate::nn::{forward_batch, mlp_init, Activation, AdamConfig, AdamOutcome, AdamState, MlpSpec, ParamVector};
use crate::replay::{stream_rng, Batch};
use crate::rollout::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps taken with uniform random actions before updates begin.
    pub learning_starts: usize,
    pub grad_iters_per_step: usize,
    pub auto_temperature: bool,
    /// Temperature when `auto_temperature` is off.
    pub fixed_alpha: f64,
    /// Starting temperature when `auto_temperature` is on.
    pub initial_alpha: f64,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
    pub total_steps: u64,
    pub seed: u64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub log_std_bounds: LogStdBounds,
    /// Deterministic evaluation episode every this many steps; 0 disables.
    pub eval_interval: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            learning_starts: 100,
            grad_iters_per_step: 1,
            auto_temperature: true,
            fixed_alpha: 0.2,
            initial_alpha: 1.0,
            target_entropy: None,
            total_steps: 200_000,
            seed: 0,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            log_std_bounds: LogStdBounds::default(),
            eval_interval: 5000,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.grad_iters_per_step == 0 {
            return bad("batch_size, buffer_capacity and grad_iters_per_step must be >= 1".into());
        }
        if self.auto_temperature && !(self.initial_alpha > 0.0) {
            return bad(format!("initial_alpha must be > 0, got {}", self.initial_alpha));
        }
        if !self.auto_temperature && !(self.fixed_alpha >= 0.0) {
            return bad(format!("fixed_alpha must be >= 0, got {}", self.fixed_alpha));
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden layer sizes must be >= 1".into());
        }
        if !(self.log_std_bounds.min < self.log_std_bounds.max) {
            return bad("log_std_bounds.min must be below max".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    /// Temperature used by this update.
    pub alpha: f64,
}

fn normal_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub(crate) fn actor_spec_for(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Result<MlpSpec> {
    MlpSpec::with_hidden(state_dim, hidden, 2 * action_dim, Activation::Relu, Activation::Identity)
}

pub(crate) fn critic_spec_for(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Result<MlpSpec> {
    MlpSpec::with_hidden(state_dim + action_dim, hidden, 1, Activation::Relu, Activation::Identity)
}

/// Soft actor-critic learner with twin critics and Polyak-averaged targets.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub actor_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    pub actor: ParamVector,
    pub critic1: ParamVector,
    pub critic2: ParamVector,
    pub target1: ParamVector,
    pub target2: ParamVector,
    pub log_alpha: f64,
    pub target_entropy: f64,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    alpha_opt: AdamState,
    rng: ChaCha8Rng,
    /// Set once any optimizer skipped a non-finite gradient.
    pub diverged: bool,
}

const STREAM_INIT: u64 = 10;
const STREAM_NOISE: u64 = 11;

impl SacAgent {
    pub fn new(state_dim: usize, action_dim: usize, config: SacConfig) -> Result<Self> {
        config.validate()?;
        let actor_spec = actor_spec_for(state_dim, action_dim, &config.actor_hidden)?;
        let critic_spec = critic_spec_for(state_dim, action_dim, &config.critic_hidden)?;
        let mut init = stream_rng(config.seed, STREAM_INIT);
        let actor = mlp_init(&actor_spec, init.next_u64());
        let critic1 = mlp_init(&critic_spec, init.next_u64());
        let critic2 = mlp_init(&critic_spec, init.next_u64());
        let adam = AdamConfig::with_lr(config.lr);
        Ok(Self {
            state_dim,
            action_dim,
            actor_opt: AdamState::new(actor.len(), adam),
            critic1_opt: AdamState::new(critic1.len(), adam),
            critic2_opt: AdamState::new(critic2.len(), adam),
            alpha_opt: AdamState::new(1, adam),
            target1: critic1.clone(),
            target2: critic2.clone(),
            log_alpha: config.initial_alpha.ln(),
            target_entropy: config.target_entropy.unwrap_or(-(action_dim as f64)),
            rng: stream_rng(config.seed, STREAM_NOISE),
            actor_spec,
            critic_spec,
            actor,
            critic1,
            critic2,
            config,
            diverged: false,
        })
    }

    pub fn alpha(&self) -> f64 {
        if self.config.auto_temperature {
            self.log_alpha.exp()
        } else {
            self.config.fixed_alpha
        }
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Action in `[-1, 1]^d` and its log-density under the squashed policy.
    pub fn sample_action(&mut self, s: &[f64], mode: ActionMode) -> Result<(Vec<f64>, f64)> {
        if s.len() != self.state_dim {
            return Err(Error::dim("state", self.state_dim, s.len()));
        }
        let noise = match mode {
            ActionMode::Stochastic => normal_noise(&mut self.rng, self.action_dim),
            ActionMode::Deterministic => vec![0.0; self.action_dim],
        };
        let head = forward_batch(&self.actor_spec, &self.actor.values, s, 1)?.into_output();
        let sample = squash(&head, &noise, self.action_dim, self.config.log_std_bounds)?;
        Ok((sample.action, sample.log_prob[0]))
    }

    fn target_nets(&self, alpha: f64) -> TargetNets<'_> {
        TargetNets {
            actor_spec: &self.actor_spec,
            critic_spec: &self.critic_spec,
            actor: &self.actor.values,
            target1: &self.target1.values,
            target2: &self.target2.values,
            alpha,
            gamma: self.config.gamma,
            bounds: self.config.log_std_bounds,
        }
    }

    /// Soft Bellman targets with one fresh next action per transition.
    pub fn sac_targets(&mut self, batch: &Batch) -> Result<Vec<f64>> {
        let noise = normal_noise(&mut self.rng, batch.size * self.action_dim);
        soft_targets(self.target_nets(self.alpha()), batch, &noise)
    }

    /// One Adam step on each critic against shared targets. Returns the
    /// pre-step losses.
    pub fn critic_update_with_targets(&mut self, batch: &Batch, y: &[f64]) -> Result<(f64, f64)> {
        let sa = batch.state_actions();
        let (l1, g1) = critic_loss_grad(&self.critic_spec, &self.critic1.values, &sa, y)?;
        let (l2, g2) = critic_loss_grad(&self.critic_spec, &self.critic2.values, &sa, y)?;
        let o1 = self.critic1_opt.step(&mut self.critic1.values, &g1)?;
        let o2 = self.critic2_opt.step(&mut self.critic2.values, &g2)?;
        self.note(o1);
        self.note(o2);
        Ok((l1, l2))
    }

    pub fn critic_update(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        let y = self.sac_targets(batch)?;
        self.critic_update_with_targets(batch, &y)
    }

    /// One Adam step on the actor through the current critics.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        let noise = normal_noise(&mut self.rng, batch.size * self.action_dim);
        let pass = policy_pass(&self.actor_spec, &self.actor.values, &batch.s, batch.size, &noise, self.config.log_std_bounds)?;
        self.apply_actor_step(&pass, &batch.s, self.alpha())
    }

    fn apply_actor_step(&mut self, pass: &super::policy::PolicyPass, states: &[f64], alpha: f64) -> Result<f64> {
        let obj = actor_loss_grad(
            pass,
            &self.actor_spec,
            &self.actor.values,
            &self.critic_spec,
            &self.critic1.values,
            &self.critic2.values,
            states,
            alpha,
        )?;
        let o = self.actor_opt.step(&mut self.actor.values, &obj.grad)?;
        self.note(o);
        Ok(obj.loss)
    }

    /// Adam step on `log α` with gradient `-mean(log π + target_entropy)`.
    /// A no-op in fixed-temperature mode. Returns the new temperature.
    pub fn temperature_update(&mut self, log_probs: &[f64]) -> Result<f64> {
        if !self.config.auto_temperature || log_probs.is_empty() {
            return Ok(self.alpha());
        }
        let mean = log_probs.iter().map(|lp| lp + self.target_entropy).sum::<f64>() / log_probs.len() as f64;
        let mut p = [self.log_alpha];
        let o = self.alpha_opt.step(&mut p, &[-mean])?;
        self.note(o);
        self.log_alpha = p[0];
        Ok(self.alpha())
    }

    /// `w̄ ← τ·w + (1 − τ)·w̄` for both target critics.
    pub fn soft_update(&mut self) {
        polyak_update(&mut self.target1.values, &self.critic1.values, self.config.tau);
        polyak_update(&mut self.target2.values, &self.critic2.values, self.config.tau);
    }

    /// Temperature, critic, actor and target updates for one mini-batch. The
    /// temperature adopted for the critic and actor losses is the one in force
    /// before this update's temperature step.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let alpha = self.alpha();
        let noise = normal_noise(&mut self.rng, batch.size * self.action_dim);
        let pass = policy_pass(&self.actor_spec, &self.actor.values, &batch.s, batch.size, &noise, self.config.log_std_bounds)?;
        self.temperature_update(&pass.sample.log_prob)?;
        let next_noise = normal_noise(&mut self.rng, batch.size * self.action_dim);
        let y = soft_targets(self.target_nets(alpha), batch, &next_noise)?;
        let (critic1_loss, critic2_loss) = self.critic_update_with_targets(batch, &y)?;
        let actor_loss = self.apply_actor_step(&pass, &batch.s, alpha)?;
        self.soft_update();
        Ok(UpdateStats {
            critic1_loss,
            critic2_loss,
            actor_loss,
            alpha,
        })
    }

    fn note(&mut self, outcome: AdamOutcome) {
        if outcome == AdamOutcome::SkippedNonFinite {
            self.diverged = true;
        }
    }
}

/// `target ← τ·source + (1 − τ)·target`; `τ = 1` copies exactly.
pub fn polyak_update(target: &mut [f64], source: &[f64], tau: f64) {
    if tau == 1.0 {
        target.copy_from_slice(source);
        return;
    }
    for (t, w) in target.iter_mut().zip(source) {
        *t = tau * w + (1.0 - tau) * *t;
    }
}

impl Policy for SacAgent {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        deterministic_action(&self.actor_spec, &self.actor.values, state)
    }
}

/// `tanh(mean)` of an actor head for a single state.
pub fn deterministic_action(actor_spec: &MlpSpec, actor: &[f64], state: &[f64]) -> Result<Vec<f64>> {
    let head = forward_batch(actor_spec, actor, state, 1)?.into_output();
    let ad = actor_spec.output_dim() / 2;
    Ok(head[..ad].iter().map(|m| m.tanh()).collect())
}

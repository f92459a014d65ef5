use std::io::{Read, Write};

use rand::Rng;

use super::agent::{ActionMode, SacAgent, SacConfig, UpdateStats};
use crate::codec::*;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{read_params, write_params};
use crate::replay::{stream_rng, ReplayBuffer, Transition};
use crate::rollout::rollout;

/// Synchronous hook invoked at step 0 and after every environment step.
pub trait SacObserver {
    fn on_step(&mut self, step: u64, agent: &SacAgent, buffer: &ReplayBuffer) -> Result<()>;
}

impl SacObserver for () {
    fn on_step(&mut self, _: u64, _: &SacAgent, _: &ReplayBuffer) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacLogRow {
    pub step: u64,
    /// Return of the episode that ended at this step.
    pub episode_return: Option<f64>,
    pub critic1_loss: Option<f64>,
    pub critic2_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub total_reward: f64,
    pub steps: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SacTrainingLog {
    pub rows: Vec<SacLogRow>,
    pub evaluations: Vec<EvalRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SacTrainingLog {
    pub fn episode_returns(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.episode_return).collect()
    }

    /// One row per environment step; empty fields where no value exists.
    pub fn write_csv(&self, w: &mut impl Write, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "step,episode_return,critic1_loss,critic2_loss,actor_loss,alpha")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.step,
                opt(r.episode_return),
                opt(r.critic1_loss),
                opt(r.critic2_loss),
                opt(r.actor_loss),
                r.alpha
            )?;
        }
        Ok(())
    }

    pub fn write_eval_csv(&self, w: &mut impl Write, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "step,total_reward,steps,failed")?;
        for e in &self.evaluations {
            writeln!(w, "{},{},{},{}", e.step, e.total_reward, e.steps, e.failed as u8)?;
        }
        Ok(())
    }
}

pub struct SacRun {
    pub agent: SacAgent,
    pub buffer: ReplayBuffer,
    pub log: SacTrainingLog,
}

const STREAM_ENV: u64 = 1;
const STREAM_LOOP: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Interacts with a freshly built environment for `config.total_steps` steps.
///
/// The first `learning_starts` actions are uniform random. After that, every
/// step samples the stochastic policy and, once more than `learning_starts`
/// transitions have been collected, runs `grad_iters_per_step` updates.
/// Failure terminations cut the bootstrap; time-limit truncations do not.
/// Transitions whose successor state is non-finite are discarded and the
/// episode is restarted.
pub fn train_sac(env_config: &EnvConfig, config: &SacConfig, observer: &mut dyn SacObserver) -> Result<SacRun> {
    let mut env = env_config.build()?;
    let mut eval_env = env_config.build()?;
    let (sd, ad) = (env.observation_dim(), env.action_dim());
    let mut agent = SacAgent::new(sd, ad, config.clone())?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, sd, ad)?;
    let mut env_rng = stream_rng(config.seed, STREAM_ENV);
    let mut loop_rng = stream_rng(config.seed, STREAM_LOOP);
    let mut eval_rng = stream_rng(config.seed, STREAM_EVAL);
    let mut log = SacTrainingLog::default();

    let mut s = env.reset(&mut env_rng);
    let mut episode_return = 0.0;
    observer.on_step(0, &agent, &buffer)?;
    for step in 1..=config.total_steps {
        let a = if step <= config.learning_starts as u64 {
            (0..ad).map(|_| loop_rng.random_range(-1.0..=1.0)).collect()
        } else {
            agent.sample_action(&s, ActionMode::Stochastic)?.0
        };
        let st = env.step(&a);
        episode_return += st.reward;
        if !st.diverged {
            buffer.push(&Transition {
                s: std::mem::take(&mut s),
                a,
                r: st.reward,
                s_next: st.observation.clone(),
                terminated: st.terminated,
                truncated: st.truncated && !st.terminated,
            })?;
        }
        let mut row = SacLogRow {
            step,
            episode_return: None,
            critic1_loss: None,
            critic2_loss: None,
            actor_loss: None,
            alpha: agent.alpha(),
        };
        if st.done() {
            row.episode_return = Some(episode_return);
            episode_return = 0.0;
            s = env.reset(&mut env_rng);
        } else {
            s = st.observation;
        }

        if step > config.learning_starts as u64 && !buffer.is_empty() {
            let mut last = UpdateStats::default();
            for _ in 0..config.grad_iters_per_step {
                let batch = buffer.sample(&mut loop_rng, config.batch_size)?;
                last = agent.update(&batch)?;
            }
            row.critic1_loss = Some(last.critic1_loss);
            row.critic2_loss = Some(last.critic2_loss);
            row.actor_loss = Some(last.actor_loss);
            row.alpha = agent.alpha();
        }
        log.rows.push(row);

        if config.eval_interval > 0 && step % config.eval_interval == 0 {
            let max = eval_env.max_episode_steps();
            let r = rollout(&agent, eval_env.as_mut(), &mut eval_rng, max)?;
            log.evaluations.push(EvalRecord {
                step,
                total_reward: r.total_reward,
                steps: r.steps(),
                failed: r.failed,
            });
        }
        observer.on_step(step, &agent, &buffer)?;
    }
    Ok(SacRun { agent, buffer, log })
}

const CKPT_MAGIC: &[u8; 8] = b"SACCKPT\0";
const CKPT_VERSION: u8 = 1;

/// Config echo as JSON followed by the five networks and `log α`.
pub fn write_checkpoint(w: &mut impl Write, agent: &SacAgent) -> Result<()> {
    w.write_all(CKPT_MAGIC)?;
    put_u8(w, CKPT_VERSION)?;
    put_str(w, &serde_json::to_string(&agent.config)?)?;
    put_u32(w, agent.state_dim as u32)?;
    put_u32(w, agent.action_dim as u32)?;
    write_params(w, &agent.actor_spec, &agent.actor)?;
    for p in [&agent.critic1, &agent.critic2, &agent.target1, &agent.target2] {
        write_params(w, &agent.critic_spec, p)?;
    }
    put_f64(w, agent.log_alpha)
}

/// Restores networks and temperature; optimizer moments start fresh.
pub fn read_checkpoint(r: &mut impl Read) -> Result<SacAgent> {
    expect_magic(r, CKPT_MAGIC, "checkpoint")?;
    let v = get_u8(r)?;
    if v != CKPT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {v}")));
    }
    let config: SacConfig = serde_json::from_str(&get_str(r)?)?;
    let sd = get_u32(r)? as usize;
    let ad = get_u32(r)? as usize;
    let mut agent = SacAgent::new(sd, ad, config)?;
    let mut next = |expected: &crate::nn::MlpSpec| -> Result<crate::nn::ParamVector> {
        let (spec, p) = read_params(r)?;
        if &spec != expected {
            return Err(Error::format("checkpoint", "network shape differs from config"));
        }
        Ok(p)
    };
    agent.actor = next(&agent.actor_spec.clone())?;
    let cs = agent.critic_spec.clone();
    agent.critic1 = next(&cs)?;
    agent.critic2 = next(&cs)?;
    agent.target1 = next(&cs)?;
    agent.target2 = next(&cs)?;
    agent.log_alpha = get_f64(r)?;
    Ok(agent)
}

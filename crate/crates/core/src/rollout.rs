//! Deterministic policy rollouts.

use crate::env::{EnvRng, Environment};
use crate::error::Result;
use crate::replay::Transition;

/// A deterministic state-to-action map with actions in `[-1, 1]`.
pub trait Policy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub trace_header: Vec<String>,
    pub trace: Vec<Vec<f64>>,
    pub total_reward: f64,
    /// Ended by a failure termination rather than the time limit.
    pub failed: bool,
    pub diverged: bool,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.transitions.len()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.transitions.is_empty() {
            f64::NAN
        } else {
            self.total_reward / self.transitions.len() as f64
        }
    }
}

/// Runs one evaluation episode from the environment's evaluation start state
/// until termination or `max_steps`.
pub fn rollout(
    policy: &dyn Policy,
    env: &mut dyn Environment,
    rng: &mut EnvRng,
    max_steps: usize,
) -> Result<Rollout> {
    let mut s = env.reset_eval(rng);
    let mut out = Rollout {
        transitions: Vec::new(),
        trace_header: env.trace_header().iter().map(|h| h.to_string()).collect(),
        trace: Vec::new(),
        total_reward: 0.0,
        failed: false,
        diverged: false,
    };
    for k in 0..max_steps {
        let a = policy.act(&s)?;
        let step = env.step(&a);
        out.total_reward += step.reward;
        out.trace.push(env.trace_row((k + 1) as f64 * env.dt(), &step));
        let truncated = step.truncated || k + 1 == max_steps;
        out.transitions.push(Transition {
            s: std::mem::take(&mut s),
            a,
            r: step.reward,
            s_next: step.observation.clone(),
            terminated: step.terminated,
            truncated: truncated && !step.terminated,
        });
        s = step.observation;
        if step.terminated {
            out.failed = true;
            out.diverged = step.diverged;
            break;
        }
        if step.truncated {
            break;
        }
    }
    Ok(out)
}

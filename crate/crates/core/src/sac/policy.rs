//! Tanh-squashed Gaussian policy, soft Bellman targets and the actor
//! objective, written against raw parameter slices so that frozen snapshots
//! and the live agent share one code path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{backward_batch, forward_batch, BackwardRequest, ForwardCache, MlpSpec};
use crate::replay::{concat_rows, Batch};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// `tanh` rounds to ±1 for `|u| > 19`; actions are kept strictly inside.
const ACTION_LIMIT: f64 = 1.0 - f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogStdBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for LogStdBounds {
    fn default() -> Self {
        Self {
            min: -20.0,
            max: 2.0,
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh(u)²)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// A batch of reparameterised draws `a = tanh(μ + σ·ξ)`.
#[derive(Debug, Clone)]
pub struct SquashedSample {
    pub batch: usize,
    pub action_dim: usize,
    pub mean: Vec<f64>,
    /// After clamping.
    pub log_std: Vec<f64>,
    /// Whether the raw head value lay strictly inside the clamp.
    pub log_std_free: Vec<bool>,
    pub noise: Vec<f64>,
    pub pre_tanh: Vec<f64>,
    pub action: Vec<f64>,
    /// Per row, including the tanh change-of-variables correction.
    pub log_prob: Vec<f64>,
}

/// Splits an actor head (rows of `[mean, log_std]`) and applies the noise.
pub fn squash(head: &[f64], noise: &[f64], action_dim: usize, bounds: LogStdBounds) -> Result<SquashedSample> {
    let batch = head.len() / (2 * action_dim);
    if head.len() != batch * 2 * action_dim {
        return Err(Error::dim("actor head", batch * 2 * action_dim, head.len()));
    }
    if noise.len() != batch * action_dim {
        return Err(Error::dim("policy noise", batch * action_dim, noise.len()));
    }
    let n = batch * action_dim;
    let mut s = SquashedSample {
        batch,
        action_dim,
        mean: Vec::with_capacity(n),
        log_std: Vec::with_capacity(n),
        log_std_free: Vec::with_capacity(n),
        noise: noise.to_vec(),
        pre_tanh: Vec::with_capacity(n),
        action: Vec::with_capacity(n),
        log_prob: Vec::with_capacity(batch),
    };
    for (row, xi_row) in head.chunks_exact(2 * action_dim).zip(noise.chunks_exact(action_dim)) {
        let (mu, raw_ls) = row.split_at(action_dim);
        let mut lp = 0.0;
        for j in 0..action_dim {
            let ls = raw_ls[j].clamp(bounds.min, bounds.max);
            let u = mu[j] + ls.exp() * xi_row[j];
            lp += -0.5 * xi_row[j] * xi_row[j] - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
            s.mean.push(mu[j]);
            s.log_std.push(ls);
            s.log_std_free.push(raw_ls[j] > bounds.min && raw_ls[j] < bounds.max);
            s.pre_tanh.push(u);
            s.action.push(u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT));
        }
        s.log_prob.push(lp);
    }
    Ok(s)
}

/// Actor forward pass plus squashing, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PolicyPass {
    pub cache: ForwardCache,
    pub sample: SquashedSample,
}

pub fn policy_pass(
    actor_spec: &MlpSpec,
    actor: &[f64],
    states: &[f64],
    batch: usize,
    noise: &[f64],
    bounds: LogStdBounds,
) -> Result<PolicyPass> {
    let cache = forward_batch(actor_spec, actor, states, batch)?;
    let action_dim = actor_spec.output_dim() / 2;
    let sample = squash(cache.output(), noise, action_dim, bounds)?;
    Ok(PolicyPass { cache, sample })
}

/// Networks and coefficients needed to compute soft Bellman targets.
#[derive(Debug, Clone, Copy)]
pub struct TargetNets<'a> {
    pub actor_spec: &'a MlpSpec,
    pub critic_spec: &'a MlpSpec,
    pub actor: &'a [f64],
    pub target1: &'a [f64],
    pub target2: &'a [f64],
    pub alpha: f64,
    pub gamma: f64,
    pub bounds: LogStdBounds,
}

/// `y = r + (1 - terminated)·γ·(min(Q̄₁, Q̄₂)(s', a') - α·log π(a'|s'))` with
/// one next action per row drawn with the given noise.
pub fn soft_targets(nets: TargetNets<'_>, batch: &Batch, noise: &[f64]) -> Result<Vec<f64>> {
    let n = batch.size;
    let pass = policy_pass(nets.actor_spec, nets.actor, &batch.s_next, n, noise, nets.bounds)?;
    let input = concat_rows(&batch.s_next, batch.state_dim, &pass.sample.action, batch.action_dim);
    let q1 = forward_batch(nets.critic_spec, nets.target1, &input, n)?.into_output();
    let q2 = forward_batch(nets.critic_spec, nets.target2, &input, n)?.into_output();
    Ok((0..n)
        .map(|i| {
            let soft = q1[i].min(q2[i]) - nets.alpha * pass.sample.log_prob[i];
            let mask = if batch.terminated[i] { 0.0 } else { 1.0 };
            batch.r[i] + mask * nets.gamma * soft
        })
        .collect())
}

/// Mean squared error `mean((Q(s, a) - y)²)` and its parameter gradient.
pub fn critic_loss_grad(spec: &MlpSpec, critic: &[f64], state_actions: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let cache = forward_batch(spec, critic, state_actions, n)?;
    let q = cache.output();
    let mut loss = 0.0;
    let upstream: Vec<f64> = q
        .iter()
        .zip(y)
        .map(|(q, y)| {
            let d = q - y;
            loss += d * d;
            2.0 * d / n as f64
        })
        .collect();
    let g = backward_batch(spec, critic, &cache, &upstream, BackwardRequest { params: true, input: false })?;
    Ok((loss / n as f64, g.params.expect("requested")))
}

#[derive(Debug, Clone)]
pub struct ActorObjective {
    /// `mean(α·log π(ã|s) - min(Q₁, Q₂)(s, ã))`
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Reparameterised actor loss through both critics for an existing pass.
pub fn actor_loss_grad(
    pass: &PolicyPass,
    actor_spec: &MlpSpec,
    actor: &[f64],
    critic_spec: &MlpSpec,
    critic1: &[f64],
    critic2: &[f64],
    states: &[f64],
    alpha: f64,
) -> Result<ActorObjective> {
    let sm = &pass.sample;
    let (n, ad) = (sm.batch, sm.action_dim);
    let sd = states.len() / n.max(1);
    let input = concat_rows(states, sd, &sm.action, ad);
    let c1 = forward_batch(critic_spec, critic1, &input, n)?;
    let c2 = forward_batch(critic_spec, critic2, &input, n)?;
    let (q1, q2) = (c1.output(), c2.output());
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut up1 = vec![0.0; n];
    let mut up2 = vec![0.0; n];
    for i in 0..n {
        if q1[i] <= q2[i] {
            up1[i] = -inv_n;
            loss += alpha * sm.log_prob[i] - q1[i];
        } else {
            up2[i] = -inv_n;
            loss += alpha * sm.log_prob[i] - q2[i];
        }
    }
    let req = BackwardRequest { params: false, input: true };
    let g1 = backward_batch(critic_spec, critic1, &c1, &up1, req)?.input.expect("requested");
    let g2 = backward_batch(critic_spec, critic2, &c2, &up2, req)?.input.expect("requested");

    let width = sd + ad;
    let mut head_grad = vec![0.0; n * 2 * ad];
    for i in 0..n {
        for j in 0..ad {
            let k = i * ad + j;
            let d_action = g1[i * width + sd + j] + g2[i * width + sd + j];
            let a = sm.action[k];
            let d_u = alpha * inv_n * 2.0 * a + d_action * (1.0 - a * a);
            head_grad[i * 2 * ad + j] = d_u;
            head_grad[i * 2 * ad + ad + j] = if sm.log_std_free[k] {
                d_u * sm.log_std[k].exp() * sm.noise[k] - alpha * inv_n
            } else {
                0.0
            };
        }
    }
    let grad = backward_batch(actor_spec, actor, &pass.cache, &head_grad, BackwardRequest { params: true, input: false })?
        .params
        .expect("requested");
    Ok(ActorObjective { loss: loss * inv_n, grad })
}

/// One-shot actor objective for fixed noise.
#[allow(clippy::too_many_arguments)]
pub fn actor_objective(
    actor_spec: &MlpSpec,
    actor: &[f64],
    critic_spec: &MlpSpec,
    critic1: &[f64],
    critic2: &[f64],
    states: &[f64],
    noise: &[f64],
    alpha: f64,
    bounds: LogStdBounds,
) -> Result<ActorObjective> {
    let n = noise.len() / (actor_spec.output_dim() / 2);
    let pass = policy_pass(actor_spec, actor, states, n, noise, bounds)?;
    actor_loss_grad(&pass, actor_spec, actor, critic_spec, critic1, critic2, states, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_log_jacobian_matches_naive_form() {
        for u in [-3.0, -0.5, 0.0, 0.1, 1.7, 4.0] {
            let naive = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - naive).abs() < 1e-12);
        }
        assert!(log_one_minus_tanh_sq(40.0).is_finite());
    }

    #[test]
    fn zero_noise_gives_tanh_mean() {
        let s = squash(&[0.3, -1.0], &[0.0], 1, LogStdBounds::default()).unwrap();
        assert_eq!(s.action[0], 0.3f64.tanh());
    }

    #[test]
    fn log_std_clamp_zeroes_its_gradient() {
        let s = squash(&[0.0, 5.0, 0.0, -1.0], &[0.5, 0.5], 1, LogStdBounds::default()).unwrap();
        assert_eq!(s.log_std[0], 2.0);
        assert_eq!(s.log_std_free, vec![false, true]);
    }
}

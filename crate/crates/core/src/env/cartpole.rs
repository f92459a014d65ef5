use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{EnvRng, EnvStep, Environment};
use crate::error::{Error, Result};

pub(super) const ENV_ID: &str = "cartpole";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    /// rad from upright
    pub theta: f64,
    pub theta_dot: f64,
    /// m
    pub x: f64,
    pub x_dot: f64,
}

impl CartPoleState {
    pub fn to_array(self) -> [f64; 4] {
        [self.theta, self.theta_dot, self.x, self.x_dot]
    }

    pub fn from_array(s: [f64; 4]) -> Self {
        Self {
            theta: s[0],
            theta_dot: s[1],
            x: s[2],
            x_dot: s[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPoleParams {
    pub m_c: f64,
    pub m: f64,
    /// Pole half-length, m.
    pub l: f64,
    /// Positive: the upright equilibrium is unstable.
    pub g: f64,
    pub f_max: f64,
    pub x_max: f64,
    pub theta_max: f64,
    pub dt: f64,
    pub w_theta: f64,
    pub w_theta_dot: f64,
    pub w_x: f64,
    pub w_x_dot: f64,
    pub w_u: f64,
    pub fail_penalty: f64,
    /// Half-width of the uniform reset distribution for every state component.
    pub reset_bound: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            m_c: 1.0,
            m: 0.1,
            l: 0.5,
            g: 9.8,
            f_max: 10.0,
            x_max: 2.4,
            theta_max: 12f64.to_radians(),
            dt: 0.02,
            w_theta: 5.0,
            w_theta_dot: 0.1,
            w_x: 1.0,
            w_x_dot: 0.1,
            w_u: 0.01,
            fail_penalty: -50.0,
            reset_bound: 0.05,
        }
    }
}

impl CartPoleParams {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("m_c", self.m_c),
            ("m", self.m),
            ("l", self.l),
            ("f_max", self.f_max),
            ("x_max", self.x_max),
            ("theta_max", self.theta_max),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.reset_bound >= 0.0) {
            return Err(Error::Config("reset_bound must be >= 0".into()));
        }
        Ok(())
    }
}

/// Pole and cart accelerations for an already-saturated force. `x_ddot` uses
/// the `theta_ddot` computed first.
pub fn cartpole_accel(s: &CartPoleState, force: f64, p: &CartPoleParams) -> (f64, f64) {
    let total = p.m_c + p.m;
    let (sin, cos) = s.theta.sin_cos();
    let pole_ml = p.m * p.l;
    let temp = (-force - pole_ml * s.theta_dot * s.theta_dot * sin) / total;
    let theta_ddot = (p.g * sin + cos * temp) / (p.l * (4.0 / 3.0 - p.m * cos * cos / total));
    let x_ddot = (force + pole_ml * (s.theta_dot * s.theta_dot * sin - theta_ddot * cos)) / total;
    (theta_ddot, x_ddot)
}

/// Quadratic running cost. Non-negative.
pub fn cartpole_cost(s: &CartPoleState, a: f64, p: &CartPoleParams) -> f64 {
    let xn = s.x / p.x_max;
    p.w_theta * s.theta * s.theta
        + p.w_theta_dot * s.theta_dot * s.theta_dot
        + p.w_x * xn * xn
        + p.w_x_dot * s.x_dot * s.x_dot
        + p.w_u * a * a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleStep {
    pub state: CartPoleState,
    pub reward: f64,
    pub done: bool,
    /// Force applied after clamping the action, N.
    pub force: f64,
    pub diverged: bool,
}

/// One explicit Euler step. The running cost is charged on the state the
/// action was taken in; a post-step limit breach replaces it with the failure
/// penalty and ends the episode.
pub fn cartpole_step(s: &CartPoleState, action: f64, p: &CartPoleParams) -> CartPoleStep {
    let finite_action = action.is_finite();
    let a = if finite_action { action.clamp(-1.0, 1.0) } else { 0.0 };
    let force = a * p.f_max;
    let (theta_ddot, x_ddot) = cartpole_accel(s, force, p);
    let next = CartPoleState {
        x: s.x + p.dt * s.x_dot,
        x_dot: s.x_dot + p.dt * x_ddot,
        theta: s.theta + p.dt * s.theta_dot,
        theta_dot: s.theta_dot + p.dt * theta_ddot,
    };
    let diverged = !finite_action || !next.is_finite();
    let failed = diverged || next.x.abs() > p.x_max || next.theta.abs() > p.theta_max;
    let reward = if failed {
        p.fail_penalty
    } else {
        -cartpole_cost(s, a, p)
    };
    CartPoleStep {
        state: next,
        reward,
        done: failed,
        force,
        diverged,
    }
}

fn sample_reset(p: &CartPoleParams, rng: &mut EnvRng) -> CartPoleState {
    let b = p.reset_bound;
    let mut draw = || if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
    CartPoleState {
        theta: draw(),
        theta_dot: draw(),
        x: draw(),
        x_dot: draw(),
    }
}

/// Each component uniform in `±reset_bound`, deterministic per seed.
pub fn cartpole_reset(p: &CartPoleParams, seed: u64) -> CartPoleState {
    sample_reset(p, &mut EnvRng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPoleConfig {
    #[serde(default)]
    pub params: CartPoleParams,
    pub max_episode_steps: usize,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        Self {
            params: CartPoleParams::default(),
            max_episode_steps: 500,
        }
    }
}

pub struct CartPoleEnv {
    config: CartPoleConfig,
    state: CartPoleState,
    last_action: f64,
    last_force: f64,
    steps: usize,
}

impl CartPoleEnv {
    pub fn new(config: CartPoleConfig) -> Result<Self> {
        config.params.validate()?;
        if config.max_episode_steps == 0 {
            return Err(Error::Config("max_episode_steps must be >= 1".into()));
        }
        Ok(Self {
            config,
            state: CartPoleState::default(),
            last_action: 0.0,
            last_force: 0.0,
            steps: 0,
        })
    }

    pub fn state(&self) -> &CartPoleState {
        &self.state
    }

    pub fn set_state(&mut self, state: CartPoleState) {
        self.state = state;
        self.steps = 0;
    }
}

impl Environment for CartPoleEnv {
    fn id(&self) -> &'static str {
        ENV_ID
    }

    fn observation_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn dt(&self) -> f64 {
        self.config.params.dt
    }

    fn max_episode_steps(&self) -> usize {
        self.config.max_episode_steps
    }

    fn reset(&mut self, rng: &mut EnvRng) -> Vec<f64> {
        let s = sample_reset(&self.config.params, rng);
        self.set_state(s);
        self.observation()
    }

    fn reset_eval(&mut self, rng: &mut EnvRng) -> Vec<f64> {
        self.reset(rng)
    }

    fn step(&mut self, action: &[f64]) -> EnvStep {
        let a = action.first().copied().unwrap_or(0.0);
        let out = cartpole_step(&self.state, a, &self.config.params);
        self.state = out.state;
        self.last_action = if a.is_finite() { a.clamp(-1.0, 1.0) } else { a };
        self.last_force = out.force;
        self.steps += 1;
        EnvStep {
            observation: self.observation(),
            reward: out.reward,
            terminated: out.done,
            truncated: !out.done && self.steps >= self.config.max_episode_steps,
            diverged: out.diverged,
        }
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_array().to_vec()
    }

    fn trace_header(&self) -> &'static [&'static str] {
        &["t", "theta", "theta_dot", "x", "x_dot", "action", "force", "reward", "done"]
    }

    fn trace_row(&self, t: f64, step: &EnvStep) -> Vec<f64> {
        let mut row = vec![t];
        row.extend(self.state.to_array());
        row.push(self.last_action);
        row.push(self.last_force);
        row.push(step.reward);
        row.push(if step.terminated { 1.0 } else { 0.0 });
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    fn p() -> CartPoleParams {
        CartPoleParams::default()
    }

    #[test]
    fn upright_rest_is_equilibrium() {
        let (a, b) = cartpole_accel(&CartPoleState::default(), 0.0, &p());
        assert_eq!((a, b), (0.0, 0.0));
        let out = cartpole_step(&CartPoleState::default(), 0.0, &p());
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
    }

    #[test]
    fn upright_push_matches_hand_substitution() {
        // θ = 0: θ̈ = (-F/M) / (l(4/3 - m/M)), ẍ = (F - m l θ̈)/M.
        let p = p();
        let f = 7.0;
        let big_m = 1.1;
        let theta_dd = (-f / big_m) / (0.5 * (4.0 / 3.0 - 0.1 / big_m));
        let x_dd = (f - 0.1 * 0.5 * theta_dd) / big_m;
        let (a, b) = cartpole_accel(&CartPoleState::default(), f, &p);
        assert!((a - theta_dd).abs() < 1e-12);
        assert!((b - x_dd).abs() < 1e-12);
    }

    #[test]
    fn upright_linearisation_is_unstable() {
        let p = p();
        let h = 1e-6;
        let f = |s: [f64; 4]| {
            let st = CartPoleState::from_array(s);
            let (tdd, xdd) = cartpole_accel(&st, 0.0, &p);
            [s[1], tdd, s[3], xdd]
        };
        let jac = Matrix4::from_fn(|r, c| {
            let mut plus = [0.0; 4];
            let mut minus = [0.0; 4];
            plus[c] = h;
            minus[c] = -h;
            (f(plus)[r] - f(minus)[r]) / (2.0 * h)
        });
        let eig = jac.complex_eigenvalues();
        let max_re = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let expected = (9.8f64 / (0.5 * (4.0 / 3.0 - 0.1 / 1.1))).sqrt();
        assert!(max_re > 0.0);
        assert!((max_re - expected).abs() < 1e-5, "{max_re} vs {expected}");
    }

    #[test]
    fn small_tilt_falls_without_control() {
        let p = p();
        let mut s = CartPoleState {
            theta: 0.01,
            ..Default::default()
        };
        let mut prev = s.theta.abs();
        for step in 0..300 {
            let out = cartpole_step(&s, 0.0, &p);
            if out.done {
                assert_eq!(out.reward, -50.0);
                assert!(out.state.theta.abs() > p.theta_max);
                return;
            }
            // θ̇ starts at zero, so the first Euler step leaves θ unchanged.
            assert!(out.state.theta.abs() >= prev, "non-monotone at {step}");
            prev = out.state.theta.abs();
            s = out.state;
        }
        panic!("pole never fell");
    }

    #[test]
    fn breach_gives_fail_penalty() {
        let s = CartPoleState {
            x: 2.39,
            x_dot: 1.0,
            ..Default::default()
        };
        let out = cartpole_step(&s, 0.0, &p());
        assert!(out.done);
        assert_eq!(out.reward, -50.0);
    }

    #[test]
    fn single_term_cost() {
        let s = CartPoleState {
            theta: 1.0,
            ..Default::default()
        };
        assert_eq!(cartpole_cost(&s, 0.0, &p()), 5.0);
    }

    #[test]
    fn reset_is_deterministic_bounded_and_centred() {
        let p = p();
        assert_eq!(cartpole_reset(&p, 11), cartpole_reset(&p, 11));
        let mut rng = EnvRng::seed_from_u64(5);
        let n = 10_000;
        let mut mean = [0.0; 4];
        for _ in 0..n {
            let s = sample_reset(&p, &mut rng).to_array();
            for (m, v) in mean.iter_mut().zip(s) {
                assert!(v.abs() <= 0.05);
                *m += v / n as f64;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.003), "{mean:?}");
    }

    #[test]
    fn env_reports_failure_as_termination_not_truncation() {
        let mut env = CartPoleEnv::new(CartPoleConfig {
            max_episode_steps: 2,
            ..Default::default()
        })
        .unwrap();
        env.set_state(CartPoleState::default());
        let a = env.step(&[0.0]);
        assert!(!a.done());
        let b = env.step(&[0.0]);
        assert!(b.truncated && !b.terminated);
        assert_eq!(env.trace_row(0.04, &b).len(), env.trace_header().len());
    }

    #[test]
    fn rejects_non_positive_constants() {
        let mut params = p();
        params.l = 0.0;
        assert!(CartPoleEnv::new(CartPoleConfig {
            params,
            max_episode_steps: 10
        })
        .is_err());
    }

    proptest! {
        #[test]
        fn cost_symmetric_and_non_negative(
            s in prop::array::uniform4(-3.0f64..3.0),
            a in -1.0f64..1.0,
        ) {
            let p = p();
            let st = CartPoleState::from_array(s);
            let neg = CartPoleState::from_array(s.map(|v| -v));
            let c = cartpole_cost(&st, a, &p);
            prop_assert!(c >= 0.0);
            prop_assert_eq!(c, cartpole_cost(&neg, -a, &p));
        }

        #[test]
        fn done_implies_fail_penalty(
            s in prop::array::uniform4(-0.3f64..0.3),
            a in -5.0f64..5.0,
        ) {
            let p = p();
            let out = cartpole_step(&CartPoleState::from_array(s), a, &p);
            prop_assert!(out.force.abs() <= p.f_max);
            if out.done {
                prop_assert_eq!(out.reward, p.fail_penalty);
            } else {
                prop_assert!(out.reward <= 0.0);
            }
        }
    }
}

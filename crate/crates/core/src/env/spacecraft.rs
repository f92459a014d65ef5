use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::quaternion::{quat_mul, Quaternion};
use super::{EnvRng, EnvStep, Environment};
use crate::error::{Error, Result};

pub(super) const ENV_ID: &str = "spacecraft";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttitudeState {
    pub q: Quaternion,
    /// Body angular velocity, rad/s.
    pub omega: [f64; 3],
}

impl AttitudeState {
    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.omega.iter().all(|w| w.is_finite())
    }
}

/// Rigid-body plant and reward weights. The inertia is only used by the
/// simulator; agents never see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacecraftParams {
    /// kg·m², symmetric positive definite.
    pub inertia: [[f64; 3]; 3],
    /// s
    pub dt: f64,
    /// Per-axis bound on the applied torque, N·m.
    pub torque_limit: f64,
    pub q_target: Quaternion,
    /// rad/s
    pub omega_target: [f64; 3],
    pub k_att: f64,
    pub k_rate: f64,
    pub k_torque: f64,
}

impl Default for SpacecraftParams {
    fn default() -> Self {
        Self {
            inertia: [[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]],
            dt: 0.02,
            torque_limit: 5.0,
            q_target: Quaternion::IDENTITY,
            omega_target: [0.0; 3],
            k_att: 10.0,
            k_rate: 1.0,
            k_torque: 0.1,
        }
    }
}

impl SpacecraftParams {
    fn validate(&self) -> Result<Inertia> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.torque_limit > 0.0) {
            return Err(Error::Config(format!(
                "torque_limit must be > 0, got {}",
                self.torque_limit
            )));
        }
        Inertia::new(self.inertia)
    }
}

#[derive(Debug, Clone, Copy)]
struct Inertia {
    j: Matrix3<f64>,
    j_inv: Matrix3<f64>,
}

impl Inertia {
    fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        let j = Matrix3::from_fn(|r, c| rows[r][c]);
        if (j - j.transpose()).abs().max() > 1e-12 * j.abs().max() {
            return Err(Error::Config("inertia must be symmetric".into()));
        }
        if j.cholesky().is_none() {
            return Err(Error::Config("inertia must be positive definite".into()));
        }
        let j_inv = j
            .try_inverse()
            .ok_or_else(|| Error::Config("inertia is singular".into()))?;
        Ok(Self { j, j_inv })
    }
}

/// How episodes start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResetMode {
    /// Euler angles (0.2, 0.2, 0.2) rad in the intrinsic Z-Y-X sequence and
    /// ω = [0.1, 0.2, -0.1] rad/s.
    Nominal,
    /// The fixed initial state with each Euler angle and rate component
    /// perturbed uniformly within the given bounds.
    SeededRandom { euler_bound: f64, omega_bound: f64 },
}

const INITIAL_EULER: [f64; 3] = [0.2, 0.2, 0.2];
const INITIAL_OMEGA: [f64; 3] = [0.1, 0.2, -0.1];

pub fn spacecraft_reset(mode: ResetMode, rng: &mut EnvRng) -> AttitudeState {
    let (euler, omega) = match mode {
        ResetMode::Nominal => (INITIAL_EULER, INITIAL_OMEGA),
        ResetMode::SeededRandom {
            euler_bound,
            omega_bound,
        } => {
            let mut e = INITIAL_EULER;
            let mut w = INITIAL_OMEGA;
            for v in &mut e {
                *v += sym_uniform(rng, euler_bound);
            }
            for v in &mut w {
                *v += sym_uniform(rng, omega_bound);
            }
            (e, w)
        }
    };
    AttitudeState {
        q: Quaternion::from_euler_zyx(euler[0], euler[1], euler[2]).normalized(),
        omega,
    }
}

fn sym_uniform(rng: &mut EnvRng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// `1 - q_e0²` for the error quaternion `q_e = q_target* ⊗ q`.
pub fn attitude_error(q: Quaternion, q_target: Quaternion) -> f64 {
    let q_err = quat_mul(q_target.conj(), q);
    1.0 - q_err.scalar() * q_err.scalar()
}

/// `-(k_att·e_att + k_rate·e_rate + k_torque·e_torque)`.
pub fn attitude_reward(state: &AttitudeState, torque: [f64; 3], params: &SpacecraftParams) -> f64 {
    let e_att = attitude_error(state.q, params.q_target);
    let e_rate: f64 = state
        .omega
        .iter()
        .zip(params.omega_target)
        .map(|(w, t)| (w - t) * (w - t))
        .sum();
    let e_torque: f64 = torque.iter().map(|u| u * u).sum();
    -(params.k_att * e_att + params.k_rate * e_rate + params.k_torque * e_torque)
}

fn derivative(
    q: Quaternion,
    omega: Vector3<f64>,
    torque: Vector3<f64>,
    inertia: &Inertia,
) -> (Quaternion, Vector3<f64>) {
    let q_dot = quat_mul(q, Quaternion::pure([omega.x, omega.y, omega.z])).scale(0.5);
    let omega_dot = inertia.j_inv * (torque - omega.cross(&(inertia.j * omega)));
    (q_dot, omega_dot)
}

fn rk4(state: &AttitudeState, torque: Vector3<f64>, dt: f64, inertia: &Inertia) -> AttitudeState {
    let q0 = state.q;
    let w0 = Vector3::from(state.omega);
    let (k1q, k1w) = derivative(q0, w0, torque, inertia);
    let (k2q, k2w) = derivative(
        q0.add(&k1q.scale(0.5 * dt)),
        w0 + k1w * (0.5 * dt),
        torque,
        inertia,
    );
    let (k3q, k3w) = derivative(
        q0.add(&k2q.scale(0.5 * dt)),
        w0 + k2w * (0.5 * dt),
        torque,
        inertia,
    );
    let (k4q, k4w) = derivative(q0.add(&k3q.scale(dt)), w0 + k3w * dt, torque, inertia);
    let q = q0.add(
        &k1q.add(&k2q.scale(2.0))
            .add(&k3q.scale(2.0))
            .add(&k4q)
            .scale(dt / 6.0),
    );
    let w = w0 + (k1w + k2w * 2.0 + k3w * 2.0 + k4w) * (dt / 6.0);
    AttitudeState {
        q: q.normalized(),
        omega: [w.x, w.y, w.z],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeStep {
    pub state: AttitudeState,
    pub reward: f64,
    /// Torque actually applied after saturation.
    pub applied_torque: [f64; 3],
    pub diverged: bool,
}

/// Saturates the requested torque per axis, integrates one step with RK4 and
/// renormalises the quaternion. The reward is evaluated on the post-step state
/// and the applied torque.
pub fn attitude_step(
    state: &AttitudeState,
    torque: [f64; 3],
    params: &SpacecraftParams,
) -> Result<AttitudeStep> {
    let inertia = params.validate()?;
    Ok(step_with(state, torque, params, &inertia))
}

fn step_with(
    state: &AttitudeState,
    torque: [f64; 3],
    params: &SpacecraftParams,
    inertia: &Inertia,
) -> AttitudeStep {
    let lim = params.torque_limit;
    let requested_finite = torque.iter().all(|u| u.is_finite());
    let applied = torque.map(|u| if u.is_finite() { u.clamp(-lim, lim) } else { 0.0 });
    let next = rk4(state, Vector3::from(applied), params.dt, inertia);
    let diverged = !requested_finite || !next.is_finite();
    AttitudeStep {
        reward: attitude_reward(&next, applied, params),
        state: next,
        applied_torque: applied,
        diverged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacecraftConfig {
    #[serde(default)]
    pub params: SpacecraftParams,
    pub reset: ResetMode,
    pub max_episode_steps: usize,
    /// Failure termination when `‖ω‖` exceeds this, rad/s.
    #[serde(default)]
    pub omega_limit: Option<f64>,
}

impl Default for SpacecraftConfig {
    fn default() -> Self {
        Self {
            params: SpacecraftParams::default(),
            reset: ResetMode::Nominal,
            max_episode_steps: 500,
            omega_limit: None,
        }
    }
}

pub struct SpacecraftEnv {
    config: SpacecraftConfig,
    inertia: Inertia,
    state: AttitudeState,
    last_torque: [f64; 3],
    steps: usize,
}

impl SpacecraftEnv {
    pub fn new(config: SpacecraftConfig) -> Result<Self> {
        let inertia = config.params.validate()?;
        if config.max_episode_steps == 0 {
            return Err(Error::Config("max_episode_steps must be >= 1".into()));
        }
        Ok(Self {
            config,
            inertia,
            state: AttitudeState {
                q: Quaternion::IDENTITY,
                omega: [0.0; 3],
            },
            last_torque: [0.0; 3],
            steps: 0,
        })
    }

    pub fn state(&self) -> &AttitudeState {
        &self.state
    }

    pub fn set_state(&mut self, state: AttitudeState) {
        self.state = state;
        self.steps = 0;
    }
}

impl Environment for SpacecraftEnv {
    fn id(&self) -> &'static str {
        ENV_ID
    }

    fn observation_dim(&self) -> usize {
        7
    }

    fn action_dim(&self) -> usize {
        3
    }

    fn dt(&self) -> f64 {
        self.config.params.dt
    }

    fn max_episode_steps(&self) -> usize {
        self.config.max_episode_steps
    }

    fn reset(&mut self, rng: &mut EnvRng) -> Vec<f64> {
        self.set_state(spacecraft_reset(self.config.reset, rng));
        self.last_torque = [0.0; 3];
        self.observation()
    }

    fn reset_eval(&mut self, rng: &mut EnvRng) -> Vec<f64> {
        self.set_state(spacecraft_reset(ResetMode::Nominal, rng));
        self.last_torque = [0.0; 3];
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> EnvStep {
        let lim = self.config.params.torque_limit;
        let torque: [f64; 3] = std::array::from_fn(|i| action.get(i).copied().unwrap_or(0.0) * lim);
        let out = step_with(&self.state, torque, &self.config.params, &self.inertia);
        self.state = out.state;
        self.last_torque = out.applied_torque;
        self.steps += 1;
        let rate = out.state.omega.iter().map(|w| w * w).sum::<f64>().sqrt();
        let over_limit = self.config.omega_limit.is_some_and(|l| rate > l);
        EnvStep {
            observation: self.observation(),
            reward: out.reward,
            terminated: over_limit || out.diverged,
            truncated: self.steps >= self.config.max_episode_steps,
            diverged: out.diverged,
        }
    }

    fn observation(&self) -> Vec<f64> {
        let s = &self.state;
        vec![s.q.0[0], s.q.0[1], s.q.0[2], s.q.0[3], s.omega[0], s.omega[1], s.omega[2]]
    }

    fn trace_header(&self) -> &'static [&'static str] {
        &["t", "q0", "q1", "q2", "q3", "w1", "w2", "w3", "u1", "u2", "u3", "reward"]
    }

    fn trace_row(&self, t: f64, step: &EnvStep) -> Vec<f64> {
        let mut row = vec![t];
        row.extend(self.observation());
        row.extend(self.last_torque);
        row.push(step.reward);
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn params() -> SpacecraftParams {
        SpacecraftParams::default()
    }

    fn momentum_and_energy(s: &AttitudeState, p: &SpacecraftParams) -> (f64, f64) {
        let j = Matrix3::from_fn(|r, c| p.inertia[r][c]);
        let w = Vector3::from(s.omega);
        let h = j * w;
        (h.norm(), 0.5 * w.dot(&h))
    }

    #[test]
    fn equilibrium_is_fixed_with_zero_reward() {
        let s = AttitudeState {
            q: Quaternion::IDENTITY,
            omega: [0.0; 3],
        };
        let out = attitude_step(&s, [0.0; 3], &params()).unwrap();
        assert_eq!(out.state, s);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn half_turn_costs_full_attitude_weight() {
        let s = AttitudeState {
            q: Quaternion([0.0, 1.0, 0.0, 0.0]),
            omega: [0.0; 3],
        };
        let out = attitude_step(&s, [0.0; 3], &params()).unwrap();
        assert_eq!(out.reward, -10.0);
    }

    #[test]
    fn rate_error_reward_by_hand() {
        let s = AttitudeState {
            q: Quaternion::IDENTITY,
            omega: [0.1, 0.2, -0.1],
        };
        let r = attitude_reward(&s, [0.0; 3], &params());
        assert!((r - -0.06).abs() < 1e-15);
    }

    #[test]
    fn torque_free_spin_conserves_momentum_and_energy() {
        let p = params();
        let mut s = AttitudeState {
            q: Quaternion::from_euler_zyx(0.3, -0.4, 1.1),
            omega: [0.4, -0.7, 0.9],
        };
        let (h0, e0) = momentum_and_energy(&s, &p);
        for _ in 0..500 {
            s = attitude_step(&s, [0.0; 3], &p).unwrap().state;
            assert!((s.q.norm() - 1.0).abs() < 1e-9);
        }
        let (h1, e1) = momentum_and_energy(&s, &p);
        assert!(((h1 - h0) / h0).abs() < 1e-6);
        assert!(((e1 - e0) / e0).abs() < 1e-6);
    }

    #[test]
    fn nominal_initial_state() {
        let mut rng = EnvRng::seed_from_u64(0);
        let s = spacecraft_reset(ResetMode::Nominal, &mut rng);
        assert_eq!(s.omega, [0.1, 0.2, -0.1]);
        assert!((s.q.norm() - 1.0).abs() < 1e-15);
        // q_z(0.2) ⊗ q_y(0.2) ⊗ q_x(0.2)
        let (sh, ch) = 0.1f64.sin_cos();
        let expected_q0 = ch * ch * ch + sh * sh * sh;
        assert!((s.q.0[0] - expected_q0).abs() < 1e-15);
    }

    #[test]
    fn seeded_random_reset_is_reproducible_and_bounded() {
        let mode = ResetMode::SeededRandom {
            euler_bound: 0.1,
            omega_bound: 0.05,
        };
        let a = spacecraft_reset(mode, &mut EnvRng::seed_from_u64(4));
        let b = spacecraft_reset(mode, &mut EnvRng::seed_from_u64(4));
        assert_eq!(a, b);
        for (w, w0) in a.omega.iter().zip(INITIAL_OMEGA) {
            assert!((w - w0).abs() <= 0.05);
        }
        assert!((a.q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inertia() {
        let mut p = params();
        p.inertia[0][1] = 0.5;
        assert!(attitude_step(&AttitudeState { q: Quaternion::IDENTITY, omega: [0.0; 3] }, [0.0; 3], &p).is_err());
        let mut p = params();
        p.inertia[2][2] = -1.0;
        assert!(SpacecraftEnv::new(SpacecraftConfig { params: p, ..Default::default() }).is_err());
    }

    #[test]
    fn non_finite_torque_flags_divergence() {
        let s = AttitudeState { q: Quaternion::IDENTITY, omega: [0.0; 3] };
        let out = attitude_step(&s, [f64::NAN, 0.0, 0.0], &params()).unwrap();
        assert!(out.diverged);
        assert!(out.applied_torque.iter().all(|u| u.is_finite()));
    }

    #[test]
    fn env_scales_normalised_action_and_truncates() {
        let mut env = SpacecraftEnv::new(SpacecraftConfig {
            max_episode_steps: 3,
            ..Default::default()
        })
        .unwrap();
        let mut rng = EnvRng::seed_from_u64(0);
        let obs = env.reset(&mut rng);
        assert_eq!(obs.len(), 7);
        let st = env.step(&[1.0, -0.5, 2.0]);
        assert_eq!(env.last_torque, [5.0, -2.5, 5.0]);
        assert!(!st.done());
        env.step(&[0.0; 3]);
        let last = env.step(&[0.0; 3]);
        assert!(last.truncated && !last.terminated);
        let row = env.trace_row(0.06, &last);
        assert_eq!(row.len(), env.trace_header().len());
    }

    proptest! {
        #[test]
        fn applied_torque_respects_limit_and_reward_nonpositive(
            u in prop::array::uniform3(-100.0f64..100.0),
            w in prop::array::uniform3(-2.0f64..2.0),
            e in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let p = params();
            let s = AttitudeState { q: Quaternion::from_euler_zyx(e[0], e[1], e[2]), omega: w };
            let out = attitude_step(&s, u, &p).unwrap();
            prop_assert!(out.applied_torque.iter().all(|x| x.abs() <= p.torque_limit));
            prop_assert!(out.reward <= 0.0);
            prop_assert!((out.state.q.norm() - 1.0).abs() < 1e-9);
        }
    }
}

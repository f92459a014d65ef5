//! Weight snapshots recorded during training, fixed probe batches and the
//! frozen Bellman targets that make the landscape objective stationary.

use std::io::{Cursor, Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adhdp::{AdhdpAgent, AdhdpObserver};
use crate::codec::{
    expect_magic, get_f64, get_f64s, get_str, get_u32, get_u64, get_u8, put_f64, put_f64s, put_str, put_u32,
    put_u64, put_u8,
};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{forward_batch, read_params, write_params, MlpSpec, ParamVector};
use crate::replay::{concat_rows, stream_rng, Batch, ReplayBuffer, Transition};
use crate::rollout::{rollout, Policy};
use crate::sac::policy::soft_targets;
use crate::sac::{LogStdBounds, SacAgent, SacObserver, TargetNets};

const STREAM_PROBE_ENV: u64 = 30;
const STREAM_PROBE_REPLAY: u64 = 31;
const STREAM_FREEZE: u64 = 32;

pub type Sha256Digest = [u8; 32];

pub fn hex(d: &Sha256Digest) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sac,
    Adhdp,
}

/// Facts shared by every bundle of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub algorithm: Algorithm,
    pub env_id: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub actor_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    pub dt: f64,
    pub gamma: f64,
    pub log_std_bounds: LogStdBounds,
    pub seed: u64,
    /// Recording interval in environment steps, or 0 for once per episode.
    pub cadence: u64,
}

/// Second critic and both target critics of a twin-critic agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinNets {
    pub critic2: ParamVector,
    pub target1: ParamVector,
    pub target2: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotBundle {
    /// Environment steps taken when the bundle was recorded.
    pub step: u64,
    /// Simulated time `step·dt`, s.
    pub sim_time: f64,
    pub alpha: f64,
    pub actor: ParamVector,
    /// The primary critic.
    pub critic1: ParamVector,
    pub twins: Option<TwinNets>,
    /// Probe captured alongside the weights for stage-local landscapes.
    pub probe: Option<ProbeBatch>,
    /// Every network value is finite.
    pub finite: bool,
}

impl SnapshotBundle {
    fn nets(&self) -> Vec<&ParamVector> {
        let mut v = vec![&self.actor, &self.critic1];
        if let Some(t) = &self.twins {
            v.extend([&t.critic2, &t.target1, &t.target2]);
        }
        v
    }

    fn compute_finite(&self) -> bool {
        self.alpha.is_finite() && self.nets().iter().all(|p| p.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Final,
    Step(u64),
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "final" {
            return Ok(Stage::Final);
        }
        s.parse()
            .map(Stage::Step)
            .map_err(|_| Error::InvalidArgument(format!("stage must be an integer step or \"final\", got {s:?}")))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Final => f.write_str("final"),
            Stage::Step(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotLog {
    pub meta: SnapshotMeta,
    bundles: Vec<SnapshotBundle>,
}

impl SnapshotLog {
    pub fn new(meta: SnapshotMeta) -> Self {
        Self {
            meta,
            bundles: Vec::new(),
        }
    }

    pub fn bundles(&self) -> &[SnapshotBundle] {
        &self.bundles
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn steps(&self) -> Vec<u64> {
        self.bundles.iter().map(|b| b.step).collect()
    }

    /// Appends a bundle; steps must strictly increase and shapes must match.
    pub fn record(&mut self, mut bundle: SnapshotBundle) -> Result<()> {
        if let Some(last) = self.bundles.last() {
            if bundle.step <= last.step {
                return Err(Error::InvalidArgument(format!(
                    "snapshot step {} does not follow {}",
                    bundle.step, last.step
                )));
            }
        }
        bundle.actor.check(&self.meta.actor_spec)?;
        bundle.critic1.check(&self.meta.critic_spec)?;
        if let Some(t) = &bundle.twins {
            for p in [&t.critic2, &t.target1, &t.target2] {
                p.check(&self.meta.critic_spec)?;
            }
        }
        bundle.finite = bundle.compute_finite();
        self.bundles.push(bundle);
        Ok(())
    }

    pub fn select(&self, stage: Stage) -> Result<&SnapshotBundle> {
        let found = match stage {
            Stage::Final => self.bundles.last(),
            Stage::Step(s) => self.bundles.iter().find(|b| b.step == s),
        };
        found.ok_or_else(|| Error::MissingStage {
            requested: stage.to_string(),
            available: self.steps(),
        })
    }

    /// Primary-critic weights in recording order.
    pub fn critic_trajectory(&self) -> Vec<&ParamVector> {
        self.bundles.iter().map(|b| &b.critic1).collect()
    }
}

const LOG_MAGIC: &[u8; 8] = b"SNAPLOG\0";
const INDEX_MAGIC: &[u8; 8] = b"SNAPIDX\0";
const LOG_VERSION: u8 = 1;
const FLAG_TWINS: u8 = 1;
const FLAG_PROBE: u8 = 2;
const FLAG_FINITE: u8 = 4;

/// ```text
/// "SNAPLOG\0" | version u8 | meta JSON (u32 length + UTF-8)
/// records: byte length u64 | record
/// record: step u64 | sim_time f64 | alpha f64 | flags u8
///         | actor PVEC | critic1 PVEC | [critic2, target1, target2 PVEC] | [probe]
/// index: count u32 | (step u64, record offset u64) × count
/// index offset u64 | "SNAPIDX\0"
/// ```
pub fn write_snapshot_log(w: &mut impl Write, log: &SnapshotLog) -> Result<()> {
    let mut out = Vec::new();
    out.write_all(LOG_MAGIC)?;
    put_u8(&mut out, LOG_VERSION)?;
    put_str(&mut out, &serde_json::to_string(&log.meta)?)?;
    let mut index = Vec::with_capacity(log.bundles.len());
    for b in &log.bundles {
        let mut rec = Vec::new();
        put_u64(&mut rec, b.step)?;
        put_f64(&mut rec, b.sim_time)?;
        put_f64(&mut rec, b.alpha)?;
        let flags = if b.twins.is_some() { FLAG_TWINS } else { 0 }
            | if b.probe.is_some() { FLAG_PROBE } else { 0 }
            | if b.finite { FLAG_FINITE } else { 0 };
        put_u8(&mut rec, flags)?;
        write_params(&mut rec, &log.meta.actor_spec, &b.actor)?;
        write_params(&mut rec, &log.meta.critic_spec, &b.critic1)?;
        if let Some(t) = &b.twins {
            for p in [&t.critic2, &t.target1, &t.target2] {
                write_params(&mut rec, &log.meta.critic_spec, p)?;
            }
        }
        if let Some(p) = &b.probe {
            write_probe(&mut rec, p)?;
        }
        index.push((b.step, out.len() as u64));
        put_u64(&mut out, rec.len() as u64)?;
        out.extend_from_slice(&rec);
    }
    let index_offset = out.len() as u64;
    put_u32(&mut out, index.len() as u32)?;
    for (step, off) in index {
        put_u64(&mut out, step)?;
        put_u64(&mut out, off)?;
    }
    put_u64(&mut out, index_offset)?;
    out.write_all(INDEX_MAGIC)?;
    w.write_all(&out)?;
    Ok(())
}

pub fn read_snapshot_log(r: &mut impl Read) -> Result<SnapshotLog> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[bytes.len() - 8..] != INDEX_MAGIC {
        return Err(Error::format("snapshot log", "missing index footer"));
    }
    let index_offset = u64::from_le_bytes(bytes[bytes.len() - 16..bytes.len() - 8].try_into().expect("8 bytes")) as usize;
    if index_offset > bytes.len() - 16 {
        return Err(Error::format("snapshot log", "index offset out of range"));
    }
    let mut idx = Cursor::new(&bytes[index_offset..bytes.len() - 16]);
    let count = get_u32(&mut idx)? as usize;
    let mut index = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        index.push((get_u64(&mut idx)?, get_u64(&mut idx)?));
    }

    let mut c = Cursor::new(&bytes[..index_offset]);
    expect_magic(&mut c, LOG_MAGIC, "snapshot log")?;
    let v = get_u8(&mut c)?;
    if v != LOG_VERSION {
        return Err(Error::format("snapshot log", format!("unsupported version {v}")));
    }
    let meta: SnapshotMeta = serde_json::from_str(&get_str(&mut c)?)?;
    let mut log = SnapshotLog::new(meta);
    for (step, off) in index {
        if c.position() != off {
            return Err(Error::format("snapshot log", "index does not match record layout"));
        }
        let len = get_u64(&mut c)?;
        let start = c.position();
        let b = read_bundle(&mut c, &log.meta)?;
        if c.position() - start != len || b.step != step {
            return Err(Error::format("snapshot log", format!("record for step {step} is inconsistent")));
        }
        let finite = b.finite;
        log.record(b)?;
        if log.bundles.last().expect("recorded").finite != finite {
            return Err(Error::format("snapshot log", "finiteness flag disagrees with values"));
        }
    }
    if c.position() as usize != index_offset {
        return Err(Error::format("snapshot log", "trailing bytes before index"));
    }
    Ok(log)
}

fn read_bundle(r: &mut impl Read, meta: &SnapshotMeta) -> Result<SnapshotBundle> {
    let step = get_u64(r)?;
    let sim_time = get_f64(r)?;
    let alpha = get_f64(r)?;
    let flags = get_u8(r)?;
    let mut net = |spec: &MlpSpec| -> Result<ParamVector> {
        let (got, p) = read_params(r)?;
        if &got != spec {
            return Err(Error::format("snapshot log", "network shape differs from header"));
        }
        Ok(p)
    };
    let actor = net(&meta.actor_spec)?;
    let critic1 = net(&meta.critic_spec)?;
    let twins = if flags & FLAG_TWINS != 0 {
        Some(TwinNets {
            critic2: net(&meta.critic_spec)?,
            target1: net(&meta.critic_spec)?,
            target2: net(&meta.critic_spec)?,
        })
    } else {
        None
    };
    let probe = if flags & FLAG_PROBE != 0 { Some(read_probe(r)?) } else { None };
    Ok(SnapshotBundle {
        step,
        sim_time,
        alpha,
        actor,
        critic1,
        twins,
        probe,
        finite: flags & FLAG_FINITE != 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSource {
    /// First transitions of a deterministic evaluation rollout.
    FinalRollout,
    /// Seeded distinct draws from the replay buffer.
    ReplaySample,
    /// Leading transitions of the most recent training episode.
    LastEpisode,
}

impl ProbeSource {
    fn code(self) -> u8 {
        match self {
            ProbeSource::FinalRollout => 0,
            ProbeSource::ReplaySample => 1,
            ProbeSource::LastEpisode => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => ProbeSource::FinalRollout,
            1 => ProbeSource::ReplaySample,
            2 => ProbeSource::LastEpisode,
            _ => return Err(Error::format("probe batch", format!("unknown source code {c}"))),
        })
    }
}

/// A fixed set of transitions on which the landscape is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBatch {
    env_id: String,
    state_dim: usize,
    action_dim: usize,
    source: ProbeSource,
    seed: u64,
    transitions: Vec<Transition>,
}

impl ProbeBatch {
    pub fn new(env_id: &str, source: ProbeSource, seed: u64, transitions: Vec<Transition>) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::InvalidArgument("probe batch must not be empty".into()))?;
        let (sd, ad) = (first.s.len(), first.a.len());
        for t in &transitions {
            if t.s.len() != sd || t.s_next.len() != sd || t.a.len() != ad {
                return Err(Error::dim("probe transition", sd, t.s.len()));
            }
        }
        Ok(Self {
            env_id: env_id.to_string(),
            state_dim: sd,
            action_dim: ad,
            source,
            seed,
            transitions,
        })
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn source(&self) -> ProbeSource {
        self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn to_batch(&self) -> Batch {
        Batch::from_transitions(&self.transitions).expect("validated at construction")
    }

    pub fn digest(&self) -> Sha256Digest {
        let mut buf = Vec::new();
        write_probe(&mut buf, self).expect("in-memory write");
        Sha256::digest(&buf).into()
    }
}

/// Deterministic-policy rollout from the evaluation start state, keeping the
/// first `size` transitions.
pub fn capture_rollout_probe(policy: &dyn Policy, env: &mut dyn Environment, size: usize, seed: u64) -> Result<ProbeBatch> {
    if size == 0 {
        return Err(Error::InvalidArgument("probe size must be >= 1".into()));
    }
    let ro = rollout(policy, env, &mut stream_rng(seed, STREAM_PROBE_ENV), size)?;
    if ro.transitions.len() < size {
        return Err(Error::RolloutTooShort {
            collected: ro.transitions.len(),
            requested: size,
        });
    }
    ProbeBatch::new(env.id(), ProbeSource::FinalRollout, seed, ro.transitions)
}

pub fn capture_replay_probe(buffer: &ReplayBuffer, env_id: &str, size: usize, seed: u64) -> Result<ProbeBatch> {
    if size == 0 {
        return Err(Error::InvalidArgument("probe size must be >= 1".into()));
    }
    let ts = buffer.sample_transitions(&mut stream_rng(seed, STREAM_PROBE_REPLAY), size)?;
    ProbeBatch::new(env_id, ProbeSource::ReplaySample, seed, ts)
}

/// The leading `min(size, len)` transitions of an episode.
pub fn episode_probe(episode: &[Transition], env_id: &str, size: usize, seed: u64) -> Result<ProbeBatch> {
    if size == 0 {
        return Err(Error::InvalidArgument("probe size must be >= 1".into()));
    }
    let n = size.min(episode.len());
    ProbeBatch::new(env_id, ProbeSource::LastEpisode, seed, episode[..n].to_vec())
}

const PROBE_MAGIC: &[u8; 8] = b"PROBE\0\0\0";
const PROBE_VERSION: u8 = 1;

/// ```text
/// "PROBE\0\0\0" | version u8 | env id (u32 length + UTF-8)
/// state_dim u32 | action_dim u32 | source u8 | seed u64 | count u32
/// rows: s f64×sd | a f64×ad | r f64 | s_next f64×sd | flags u8 (1 terminated, 2 truncated)
/// ```
pub fn write_probe(w: &mut impl Write, p: &ProbeBatch) -> Result<()> {
    w.write_all(PROBE_MAGIC)?;
    put_u8(w, PROBE_VERSION)?;
    put_str(w, &p.env_id)?;
    put_u32(w, p.state_dim as u32)?;
    put_u32(w, p.action_dim as u32)?;
    put_u8(w, p.source.code())?;
    put_u64(w, p.seed)?;
    put_u32(w, p.transitions.len() as u32)?;
    for t in &p.transitions {
        put_f64s(w, &t.s)?;
        put_f64s(w, &t.a)?;
        put_f64(w, t.r)?;
        put_f64s(w, &t.s_next)?;
        put_u8(w, t.terminated as u8 | (t.truncated as u8) << 1)?;
    }
    Ok(())
}

pub fn read_probe(r: &mut impl Read) -> Result<ProbeBatch> {
    expect_magic(r, PROBE_MAGIC, "probe batch")?;
    let v = get_u8(r)?;
    if v != PROBE_VERSION {
        return Err(Error::format("probe batch", format!("unsupported version {v}")));
    }
    let env_id = get_str(r)?;
    let sd = get_u32(r)? as usize;
    let ad = get_u32(r)? as usize;
    let source = ProbeSource::from_code(get_u8(r)?)?;
    let seed = get_u64(r)?;
    let n = get_u32(r)? as usize;
    let mut ts = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let s = get_f64s(r, sd)?;
        let a = get_f64s(r, ad)?;
        let rew = get_f64(r)?;
        let s_next = get_f64s(r, sd)?;
        let f = get_u8(r)?;
        ts.push(Transition {
            s,
            a,
            r: rew,
            s_next,
            terminated: f & 1 != 0,
            truncated: f & 2 != 0,
        });
    }
    ProbeBatch::new(&env_id, source, seed, ts)
}

/// Bellman targets precomputed once for a probe batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTargetSet {
    pub y: Vec<f64>,
    /// Step of the snapshot whose networks produced the targets.
    pub policy_step: u64,
    pub seed: u64,
    pub probe_digest: Sha256Digest,
}

impl FrozenTargetSet {
    pub fn digest(&self) -> Sha256Digest {
        let mut buf = Vec::new();
        write_targets(&mut buf, self).expect("in-memory write");
        Sha256::digest(&buf).into()
    }
}

/// Twin-critic targets use the bundle's actor, target critics and
/// temperature with one seeded next action per row. Single-critic targets
/// use the cost `−r` and the bundle's own critic at the actor's action.
pub fn freeze_targets(meta: &SnapshotMeta, bundle: &SnapshotBundle, probe: &ProbeBatch, gamma: f64, seed: u64) -> Result<FrozenTargetSet> {
    if probe.state_dim != meta.state_dim || probe.action_dim != meta.action_dim {
        return Err(Error::dim("probe batch state", meta.state_dim, probe.state_dim));
    }
    let batch = probe.to_batch();
    let y = match meta.algorithm {
        Algorithm::Sac => {
            let twins = bundle
                .twins
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("twin-critic targets need target networks".into()))?;
            let mut rng = stream_rng(seed, STREAM_FREEZE);
            let noise: Vec<f64> = (0..batch.size * batch.action_dim).map(|_| rng.sample(StandardNormal)).collect();
            let nets = TargetNets {
                actor_spec: &meta.actor_spec,
                critic_spec: &meta.critic_spec,
                actor: &bundle.actor.values,
                target1: &twins.target1.values,
                target2: &twins.target2.values,
                alpha: bundle.alpha,
                gamma,
                bounds: meta.log_std_bounds,
            };
            soft_targets(nets, &batch, &noise)?
        }
        Algorithm::Adhdp => {
            let n = batch.size;
            let a_next = forward_batch(&meta.actor_spec, &bundle.actor.values, &batch.s_next, n)?.into_output();
            let input = concat_rows(&batch.s_next, batch.state_dim, &a_next, batch.action_dim);
            let j = forward_batch(&meta.critic_spec, &bundle.critic1.values, &input, n)?.into_output();
            (0..n)
                .map(|i| {
                    let mask = if batch.terminated[i] { 0.0 } else { 1.0 };
                    -batch.r[i] + mask * gamma * j[i]
                })
                .collect()
        }
    };
    Ok(FrozenTargetSet {
        y,
        policy_step: bundle.step,
        seed,
        probe_digest: probe.digest(),
    })
}

const TARGETS_MAGIC: &[u8; 8] = b"TARGETS\0";
const TARGETS_VERSION: u8 = 1;

/// ```text
/// "TARGETS\0" | version u8 | policy_step u64 | seed u64
/// probe digest 32 bytes | count u32 | y f64 × count
/// ```
pub fn write_targets(w: &mut impl Write, t: &FrozenTargetSet) -> Result<()> {
    w.write_all(TARGETS_MAGIC)?;
    put_u8(w, TARGETS_VERSION)?;
    put_u64(w, t.policy_step)?;
    put_u64(w, t.seed)?;
    w.write_all(&t.probe_digest)?;
    put_u32(w, t.y.len() as u32)?;
    put_f64s(w, &t.y)
}

pub fn read_targets(r: &mut impl Read) -> Result<FrozenTargetSet> {
    expect_magic(r, TARGETS_MAGIC, "target set")?;
    let v = get_u8(r)?;
    if v != TARGETS_VERSION {
        return Err(Error::format("target set", format!("unsupported version {v}")));
    }
    let policy_step = get_u64(r)?;
    let seed = get_u64(r)?;
    let mut probe_digest = [0u8; 32];
    r.read_exact(&mut probe_digest)?;
    let n = get_u32(r)? as usize;
    Ok(FrozenTargetSet {
        y: get_f64s(r, n)?,
        policy_step,
        seed,
        probe_digest,
    })
}

/// Training observer that records bundles at a fixed step cadence (SAC) or
/// at every episode end (ADHDP).
#[derive(Debug, Clone)]
pub struct SnapshotRecorder {
    env_id: String,
    dt: f64,
    cadence: u64,
    final_step: Option<u64>,
    probe_size: usize,
    probe_seed: u64,
    log: Option<SnapshotLog>,
}

impl SnapshotRecorder {
    /// `final_step` is always recorded even when off cadence.
    pub fn new(env_id: &str, dt: f64, cadence: u64, final_step: Option<u64>, probe_size: usize, probe_seed: u64) -> Result<Self> {
        if cadence == 0 || probe_size == 0 {
            return Err(Error::Config("snapshot cadence and probe size must be >= 1".into()));
        }
        Ok(Self {
            env_id: env_id.to_string(),
            dt,
            cadence,
            final_step,
            probe_size,
            probe_seed,
            log: None,
        })
    }

    pub fn log(&self) -> Option<&SnapshotLog> {
        self.log.as_ref()
    }

    pub fn into_log(self) -> Option<SnapshotLog> {
        self.log
    }

    fn log_for(&mut self, make: impl FnOnce() -> SnapshotMeta) -> &mut SnapshotLog {
        self.log.get_or_insert_with(|| SnapshotLog::new(make()))
    }
}

pub fn sac_meta(agent: &SacAgent, env_id: &str, dt: f64, cadence: u64) -> SnapshotMeta {
    SnapshotMeta {
        algorithm: Algorithm::Sac,
        env_id: env_id.to_string(),
        state_dim: agent.state_dim,
        action_dim: agent.action_dim,
        actor_spec: agent.actor_spec.clone(),
        critic_spec: agent.critic_spec.clone(),
        dt,
        gamma: agent.config.gamma,
        log_std_bounds: agent.config.log_std_bounds,
        seed: agent.config.seed,
        cadence,
    }
}

pub fn sac_bundle(agent: &SacAgent, step: u64, dt: f64, probe: Option<ProbeBatch>) -> SnapshotBundle {
    let mut b = SnapshotBundle {
        step,
        sim_time: step as f64 * dt,
        alpha: agent.alpha(),
        actor: agent.actor.clone(),
        critic1: agent.critic1.clone(),
        twins: Some(TwinNets {
            critic2: agent.critic2.clone(),
            target1: agent.target1.clone(),
            target2: agent.target2.clone(),
        }),
        probe,
        finite: true,
    };
    b.finite = b.compute_finite();
    b
}

impl SacObserver for SnapshotRecorder {
    fn on_step(&mut self, step: u64, agent: &SacAgent, buffer: &ReplayBuffer) -> Result<()> {
        if step % self.cadence != 0 && Some(step) != self.final_step {
            return Ok(());
        }
        let probe = if buffer.len() >= self.probe_size {
            Some(capture_replay_probe(buffer, &self.env_id, self.probe_size, self.probe_seed ^ step)?)
        } else {
            None
        };
        let (env_id, dt, cadence) = (self.env_id.clone(), self.dt, self.cadence);
        let bundle = sac_bundle(agent, step, dt, probe);
        self.log_for(|| sac_meta(agent, &env_id, dt, cadence)).record(bundle)
    }
}

pub fn adhdp_meta(agent: &AdhdpAgent, env_id: &str, dt: f64) -> SnapshotMeta {
    SnapshotMeta {
        algorithm: Algorithm::Adhdp,
        env_id: env_id.to_string(),
        state_dim: agent.state_dim,
        action_dim: agent.action_dim,
        actor_spec: agent.actor_spec.clone(),
        critic_spec: agent.critic_spec.clone(),
        dt,
        gamma: agent.config.gamma,
        log_std_bounds: LogStdBounds::default(),
        seed: agent.config.seed,
        cadence: 0,
    }
}

impl AdhdpObserver for SnapshotRecorder {
    fn on_episode_end(&mut self, _episode: u64, env_steps: u64, agent: &AdhdpAgent, episode: &[Transition]) -> Result<()> {
        let probe = episode_probe(episode, &self.env_id, self.probe_size, self.probe_seed)?;
        let (env_id, dt) = (self.env_id.clone(), self.dt);
        let bundle = SnapshotBundle {
            step: env_steps,
            sim_time: env_steps as f64 * dt,
            alpha: 0.0,
            actor: agent.actor.clone(),
            critic1: agent.critic.clone(),
            twins: None,
            probe: Some(probe),
            finite: true,
        };
        self.log_for(|| adhdp_meta(agent, &env_id, dt)).record(bundle)
    }
}

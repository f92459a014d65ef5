//! End-to-end commands over a run directory: training, stage landscapes and
//! evaluation rollouts. Every artifact is a deterministic function of the
//! resolved config, so reruns reproduce files byte for byte.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adhdp::{self, train_adhdp};
use crate::config::{AlgorithmConfig, FinalProbe, LandscapeConfig, RunConfig};
use crate::env::{attitude_error, EnvConfig, Quaternion};
use crate::error::{Error, Result};
use crate::landscape::{
    default_grid_ranges, evaluate_grid, pca_basis, project_path, symmetric_axis, write_grid_csv, write_path_csv,
    GridSidecar, LandscapeGrid, PcaBasis,
};
use crate::metrics::{metrics_report, MetricsReport};
use crate::nn::{forward, MlpSpec, ParamVector};
use crate::replay::stream_rng;
use crate::rollout::{rollout, Policy, Rollout};
use crate::sac::{self, deterministic_action, train_sac};
use crate::snapshot::{
    capture_rollout_probe, freeze_targets, hex, read_snapshot_log, write_probe, write_snapshot_log, write_targets,
    Algorithm, ProbeBatch, SnapshotBundle, SnapshotLog, SnapshotRecorder, Stage,
};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub const CONFIG_FILE: &str = "config.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EVAL_LOG_FILE: &str = "eval_log.csv";
pub const SNAPSHOT_FILE: &str = "snapshots.snaplog";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const ROLLOUT_FILE: &str = "rollout.csv";
pub const SUMMARY_FILE: &str = "train_summary.json";
pub const LANDSCAPE_DIR: &str = "landscape";

const STREAM_EVAL: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub steps: usize,
    pub failed: bool,
    pub diverged: bool,
    pub total_reward: f64,
    pub mean_reward: f64,
    pub final_observation: Vec<f64>,
    /// Spacecraft only: `1 - q_e0²` and `‖ω‖` at the last state.
    pub attitude_error: Option<f64>,
    pub omega_norm: Option<f64>,
}

impl RolloutSummary {
    fn new(ro: &Rollout, env: &EnvConfig) -> Self {
        let last = ro.transitions.last().map(|t| t.s_next.clone()).unwrap_or_default();
        let (att, omega) = match env {
            EnvConfig::Spacecraft(c) if last.len() == 7 => {
                let q = Quaternion([last[0], last[1], last[2], last[3]]);
                let w = (last[4] * last[4] + last[5] * last[5] + last[6] * last[6]).sqrt();
                (Some(attitude_error(q, c.params.q_target)), Some(w))
            }
            _ => (None, None),
        };
        Self {
            steps: ro.steps(),
            failed: ro.failed,
            diverged: ro.diverged,
            total_reward: ro.total_reward,
            mean_reward: ro.mean_reward(),
            final_observation: last,
            attitude_error: att,
            omega_norm: omega,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub code_version: String,
    pub algorithm: String,
    pub env_id: String,
    pub snapshot_steps: Vec<u64>,
    pub final_rollout: RolloutSummary,
    /// Primary-critic weight norms at the first, last and largest snapshot.
    pub critic_norm_initial: f64,
    pub critic_norm_final: f64,
    pub critic_norm_max: f64,
    pub diverged_updates: bool,
}

fn comments(config: &RunConfig) -> Vec<String> {
    vec![
        format!("code_version: {CODE_VERSION}"),
        format!("config: {}", serde_json::to_string(config).expect("config serialises")),
    ]
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_rollout_csv(w: &mut impl Write, ro: &Rollout, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", ro.trace_header.join(","))?;
    for row in &ro.trace {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Trains the configured agent and writes the run directory.
pub fn train(config: &RunConfig, out: &Path) -> Result<TrainSummary> {
    config.validate()?;
    let config = config.clone().resolved();
    fs::create_dir_all(out)?;
    let notes = comments(&config);
    write_json(
        &out.join(CONFIG_FILE),
        &RunManifest {
            code_version: CODE_VERSION.to_string(),
            config: config.clone(),
        },
    )?;
    let env_probe = config.env.build()?;
    let (env_id, dt) = (env_probe.id(), env_probe.dt());

    let (log, policy, diverged): (SnapshotLog, Box<dyn Policy>, bool) = match &config.algorithm {
        AlgorithmConfig::Sac(sc) => {
            let mut rec = SnapshotRecorder::new(env_id, dt, config.snapshot.cadence, Some(sc.total_steps), config.snapshot.probe_size, config.seed)?;
            let run = train_sac(&config.env, sc, &mut rec)?;
            let mut w = create(&out.join(TRAIN_LOG_FILE))?;
            run.log.write_csv(&mut w, &notes)?;
            w.flush()?;
            let mut w = create(&out.join(EVAL_LOG_FILE))?;
            run.log.write_eval_csv(&mut w, &notes)?;
            w.flush()?;
            let mut w = create(&out.join(CHECKPOINT_FILE))?;
            sac::write_checkpoint(&mut w, &run.agent)?;
            w.flush()?;
            let diverged = run.agent.diverged;
            (rec.into_log().expect("step 0 is always recorded"), Box::new(run.agent), diverged)
        }
        AlgorithmConfig::Adhdp(ac) => {
            let mut rec = SnapshotRecorder::new(env_id, dt, 1, None, config.snapshot.probe_size, config.seed)?;
            let run = train_adhdp(&config.env, ac, &mut rec)?;
            let mut w = create(&out.join(TRAIN_LOG_FILE))?;
            run.log.write_csv(&mut w, &notes)?;
            w.flush()?;
            let mut w = create(&out.join(CHECKPOINT_FILE))?;
            adhdp::write_checkpoint(&mut w, &run.agent)?;
            w.flush()?;
            let diverged = run.agent.diverged;
            let log = rec
                .into_log()
                .ok_or_else(|| Error::Config("ADHDP training needs at least one episode".into()))?;
            (log, Box::new(run.agent), diverged)
        }
    };
    let mut w = create(&out.join(SNAPSHOT_FILE))?;
    write_snapshot_log(&mut w, &log)?;
    w.flush()?;

    let ro = final_rollout(policy.as_ref(), &config, out)?;
    let norms: Vec<f64> = log.bundles().iter().map(|b| b.critic1.norm()).collect();
    let summary = TrainSummary {
        code_version: CODE_VERSION.to_string(),
        algorithm: config.algorithm.id().to_string(),
        env_id: env_id.to_string(),
        snapshot_steps: log.steps(),
        final_rollout: RolloutSummary::new(&ro, &config.env),
        critic_norm_initial: norms[0],
        critic_norm_final: *norms.last().expect("non-empty"),
        critic_norm_max: norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        diverged_updates: diverged,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn final_rollout(policy: &dyn Policy, config: &RunConfig, out: &Path) -> Result<Rollout> {
    let mut env = config.env.build()?;
    let ro = rollout(policy, env.as_mut(), &mut stream_rng(config.seed, STREAM_EVAL), config.rollout_steps)?;
    let mut w = create(&out.join(ROLLOUT_FILE))?;
    write_rollout_csv(&mut w, &ro, &comments(config))?;
    w.flush()?;
    Ok(ro)
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest> {
    let path = run_dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    m.config.validate()?;
    Ok(m)
}

pub fn load_snapshots(run_dir: &Path) -> Result<SnapshotLog> {
    read_snapshot_log(&mut BufReader::new(File::open(run_dir.join(SNAPSHOT_FILE))?))
}

/// Loads the checkpoint and reruns the deterministic evaluation rollout.
pub fn rollout_run(run_dir: &Path, steps: Option<usize>) -> Result<RolloutSummary> {
    let mut config = load_manifest(run_dir)?.config;
    if let Some(s) = steps {
        config.rollout_steps = s;
    }
    let mut r = BufReader::new(File::open(run_dir.join(CHECKPOINT_FILE))?);
    let policy: Box<dyn Policy> = match config.algorithm {
        AlgorithmConfig::Sac(_) => Box::new(sac::read_checkpoint(&mut r)?),
        AlgorithmConfig::Adhdp(_) => Box::new(adhdp::read_checkpoint(&mut r)?),
    };
    let ro = final_rollout(policy.as_ref(), &config, run_dir)?;
    Ok(RolloutSummary::new(&ro, &config.env))
}

/// Deterministic policy of a recorded bundle.
struct BundlePolicy<'a> {
    algorithm: Algorithm,
    spec: &'a MlpSpec,
    actor: &'a ParamVector,
}

impl Policy for BundlePolicy<'_> {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        match self.algorithm {
            Algorithm::Sac => deterministic_action(self.spec, self.actor.as_slice(), state),
            Algorithm::Adhdp => forward(self.spec, self.actor, state),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeInfo {
    pub source: crate::snapshot::ProbeSource,
    pub size: usize,
    pub seed: u64,
    pub digest: String,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub policy_step: u64,
    pub seed: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageInfo {
    pub code_version: String,
    pub stage: String,
    pub step: u64,
    pub landscape: LandscapeConfig,
    pub grid: GridSidecar,
    pub probe: ProbeInfo,
    pub targets: TargetInfo,
    /// Probe and target digests matched before and after the sweep.
    pub digests_unchanged: bool,
    pub path_snapshots: usize,
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub stage: Stage,
    pub dir: PathBuf,
    pub basis: PcaBasis,
    pub grid: LandscapeGrid,
    pub report: MetricsReport,
    pub info: StageInfo,
}

fn stage_probe(
    log: &SnapshotLog,
    bundle: &SnapshotBundle,
    stage: Stage,
    config: &RunConfig,
    lc: &LandscapeConfig,
) -> Result<(ProbeBatch, Option<String>)> {
    let recorded = || {
        bundle.probe.clone().ok_or_else(|| {
            Error::InvalidArgument(format!("no probe batch was recorded at step {}", bundle.step))
        })
    };
    if stage != Stage::Final || lc.final_probe != FinalProbe::FinalRollout {
        return Ok((recorded()?, None));
    }
    let policy = BundlePolicy {
        algorithm: log.meta.algorithm,
        spec: &log.meta.actor_spec,
        actor: &bundle.actor,
    };
    let mut env = config.env.build()?;
    match capture_rollout_probe(&policy, env.as_mut(), lc.probe_size, config.seed) {
        Ok(p) => Ok((p, None)),
        Err(Error::RolloutTooShort { collected, requested }) => Ok((
            recorded()?,
            Some(format!(
                "final rollout ended after {collected} of {requested} steps; using the probe recorded with the snapshot"
            )),
        )),
        Err(e) => Err(e),
    }
}

/// Builds landscapes at the requested stages on one global PCA plane.
///
/// The plane directions come from every finite snapshot of the log; each
/// stage is centred on its own primary critic and uses its own probe and
/// frozen targets.
pub fn landscape(run_dir: &Path, stages: &[Stage], lc: &LandscapeConfig) -> Result<Vec<StageResult>> {
    lc.validate()?;
    let config = load_manifest(run_dir)?.config;
    let log = load_snapshots(run_dir)?;
    let bundles: Vec<&SnapshotBundle> = stages.iter().map(|&s| log.select(s)).collect::<Result<_>>()?;

    let finite: Vec<&SnapshotBundle> = log.bundles().iter().filter(|b| b.finite).collect();
    let trajectory: Vec<&ParamVector> = finite.iter().map(|b| &b.critic1).collect();
    let steps: Vec<u64> = finite.iter().map(|b| b.step).collect();
    let last = finite.last().ok_or_else(|| Error::InvalidArgument("no finite snapshots recorded".into()))?;
    let global = pca_basis(&trajectory, &last.critic1)?;

    let mut out = Vec::with_capacity(stages.len());
    for (&stage, bundle) in stages.iter().zip(bundles) {
        let basis = PcaBasis {
            center: bundle.critic1.clone(),
            ..global.clone()
        };
        let (probe, note) = stage_probe(&log, bundle, stage, &config, lc)?;
        let targets = freeze_targets(&log.meta, bundle, &probe, log.meta.gamma, lc.target_seed)?;
        let path = project_path(&trajectory, &steps, &basis)?;
        let (mut alphas, mut betas) = default_grid_ranges(&path, lc.margin, lc.grid_n)?;
        for axis in [&mut alphas, &mut betas] {
            if axis[axis.len() - 1] < lc.min_half_width() {
                *axis = symmetric_axis(lc.min_half_width(), lc.grid_n)?;
            }
        }
        let before = (probe.digest(), targets.digest());
        let grid = evaluate_grid(&basis, &probe, &targets, &log.meta.critic_spec, &alphas, &betas)?;
        let after = (probe.digest(), targets.digest());
        if before != after {
            return Err(Error::InvalidArgument("probe or targets changed during the sweep".into()));
        }
        let report = metrics_report(&grid, &lc.metrics, Some(basis.variance_ratios))?;

        let dir = run_dir.join(LANDSCAPE_DIR).join(format!("stage-{stage}"));
        fs::create_dir_all(&dir)?;
        let mut w = create(&dir.join("grid.csv"))?;
        write_grid_csv(&mut w, &grid)?;
        w.flush()?;
        let mut w = create(&dir.join("path.csv"))?;
        write_path_csv(&mut w, &path)?;
        w.flush()?;
        let mut w = create(&dir.join("probe.bin"))?;
        write_probe(&mut w, &probe)?;
        w.flush()?;
        let mut w = create(&dir.join("targets.bin"))?;
        write_targets(&mut w, &targets)?;
        w.flush()?;
        write_json(&dir.join("metrics.json"), &report)?;
        let info = StageInfo {
            code_version: CODE_VERSION.to_string(),
            stage: stage.to_string(),
            step: bundle.step,
            landscape: lc.clone(),
            grid: GridSidecar::new(&grid, &basis),
            probe: ProbeInfo {
                source: probe.source(),
                size: probe.len(),
                seed: probe.seed(),
                digest: hex(&before.0),
                note,
            },
            targets: TargetInfo {
                policy_step: targets.policy_step,
                seed: targets.seed,
                digest: hex(&before.1),
            },
            digests_unchanged: true,
            path_snapshots: path.points.len(),
        };
        write_json(&dir.join("grid.json"), &info)?;
        out.push(StageResult {
            stage,
            dir,
            basis,
            grid,
            report,
            info,
        });
    }
    Ok(out)
}

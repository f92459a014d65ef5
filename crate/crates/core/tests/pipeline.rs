use std::fs;
use std::path::Path;

use critic_landscape::config::RunConfig;
use critic_landscape::pipeline;
use critic_landscape::snapshot::{ProbeSource, Stage};

const TINY_ADHDP: &str = r#"{
  "env": {"kind": "spacecraft", "reset": {"mode": "nominal"}, "max_episode_steps": 40, "omega_limit": 3.0},
  "algorithm": {"kind": "adhdp", "episodes": 5, "critic_hidden": [8], "actor_hidden": [8]},
  "seed": 2,
  "landscape": {"grid_n": 11, "probe_size": 16, "metrics": {"n_angles": 64, "window_halfwidth": 2}},
  "rollout_steps": 30
}"#;

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn adhdp_run_records_every_episode_and_builds_landscapes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = RunConfig::from_json(TINY_ADHDP).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let summary = pipeline::train(&config, &a).unwrap();
    pipeline::train(&config, &b).unwrap();
    assert_eq!(files(&a), files(&b));
    assert_eq!(summary.algorithm, "adhdp");
    assert_eq!(summary.snapshot_steps.len(), 5);
    assert!(summary.snapshot_steps.windows(2).all(|w| w[0] < w[1]));
    assert!(summary.final_rollout.attitude_error.is_some());

    let log = pipeline::load_snapshots(&a).unwrap();
    assert!(log.bundles().iter().all(|b| b.probe.as_ref().unwrap().source() == ProbeSource::LastEpisode));

    let lc = pipeline::load_manifest(&a).unwrap().config.landscape;
    let second = Stage::Step(summary.snapshot_steps[1]);
    let out = pipeline::landscape(&a, &[second, Stage::Final], &lc).unwrap();
    assert_eq!(out[0].basis.variance_ratios, out[1].basis.variance_ratios);
    assert_eq!(out[0].info.probe.source, ProbeSource::LastEpisode);
    assert_eq!(out[0].grid.n_alpha(), 11);
    assert!(out.iter().all(|r| r.dir.join("metrics.json").exists()));
}

#[test]
fn final_probe_falls_back_when_the_rollout_ends_early() {
    // A tiny rate limit fails every rollout on its first step.
    let text = r#"{
      "env": {"kind": "spacecraft", "reset": {"mode": "nominal"}, "max_episode_steps": 50, "omega_limit": 1e-6},
      "algorithm": {"kind": "sac", "batch_size": 8, "learning_starts": 20, "total_steps": 300,
                     "actor_hidden": [8], "critic_hidden": [8], "eval_interval": 0},
      "snapshot": {"cadence": 100, "probe_size": 8},
      "landscape": {"grid_n": 11, "probe_size": 8, "metrics": {"n_angles": 64, "window_halfwidth": 2}},
      "rollout_steps": 10
    }"#;
    let tmp = tempfile::tempdir().unwrap();
    let summary = pipeline::train(&RunConfig::from_json(text).unwrap(), tmp.path()).unwrap();
    assert!(summary.final_rollout.failed);
    let lc = pipeline::load_manifest(tmp.path()).unwrap().config.landscape;
    let r = pipeline::landscape(tmp.path(), &[Stage::Final], &lc).unwrap().remove(0);
    assert_eq!(r.info.probe.source, ProbeSource::ReplaySample);
    assert!(r.info.probe.note.as_deref().unwrap().contains("final rollout ended"));
}

#[test]
fn rollout_command_reproduces_the_training_rollout() {
    let tmp = tempfile::tempdir().unwrap();
    let config = RunConfig::from_json(TINY_ADHDP).unwrap();
    let summary = pipeline::train(&config, tmp.path()).unwrap();
    let trace = fs::read(tmp.path().join(pipeline::ROLLOUT_FILE)).unwrap();
    let again = pipeline::rollout_run(tmp.path(), None).unwrap();
    assert_eq!(again, summary.final_rollout);
    assert_eq!(trace, fs::read(tmp.path().join(pipeline::ROLLOUT_FILE)).unwrap());
}

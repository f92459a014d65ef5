use critic_landscape::adhdp::{
    read_checkpoint, td_error_online, train_adhdp, write_checkpoint, AdhdpAgent, AdhdpConfig, AdhdpObserver,
};
use critic_landscape::env::{EnvConfig, SpacecraftConfig};
use critic_landscape::replay::{stream_rng, Transition};
use proptest::prelude::*;

fn env_config(max_steps: usize, omega_limit: Option<f64>) -> EnvConfig {
    EnvConfig::Spacecraft(SpacecraftConfig {
        max_episode_steps: max_steps,
        omega_limit,
        ..Default::default()
    })
}

fn small_config() -> AdhdpConfig {
    AdhdpConfig {
        critic_hidden: vec![8, 8],
        actor_hidden: vec![8],
        episodes: 4,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn td_error_examples() {
    assert_eq!(td_error_online(0.0, 1.3, 1.3, 1.0), 0.0);
    assert_eq!(td_error_online(1.0, 7.0, 0.0, 0.0), 1.0);
    assert!((td_error_online(-0.06, 2.0, 1.5, 0.95) - 0.34).abs() < 1e-12);
}

proptest! {
    #[test]
    fn td_error_is_the_formula(r in -1e3..1e3f64, jt in -1e3..1e3f64, jp in -1e3..1e3f64, g in 0.0..=1.0f64) {
        prop_assert_eq!(td_error_online(r, jt, jp, g), (r + g * jt) - jp);
    }
}

#[test]
fn zero_learning_rates_leave_weights_unchanged() {
    let config = AdhdpConfig {
        lr_critic: 0.0,
        lr_actor: 0.0,
        ..small_config()
    };
    let mut env = env_config(50, None).build().unwrap();
    let mut agent = AdhdpAgent::new(env.observation_dim(), env.action_dim(), config).unwrap();
    let (actor, critic) = (agent.actor.clone(), agent.critic.clone());
    let mut s = env.reset(&mut stream_rng(0, 0));
    for _ in 0..20 {
        let (tr, _, _) = agent.step(env.as_mut(), &s).unwrap();
        s = tr.s_next;
    }
    assert_eq!(agent.actor, actor);
    assert_eq!(agent.critic, critic);
}

#[test]
fn critic_inner_loop_does_not_increase_error() {
    let config = AdhdpConfig {
        critic_iters: 50,
        critic_tolerance: 0.0,
        lr_critic: 0.01,
        ..small_config()
    };
    let env = env_config(50, None).build().unwrap();
    let mut agent = AdhdpAgent::new(env.observation_dim(), env.action_dim(), config).unwrap();
    let s = env.observation();
    let a = vec![0.2, -0.1, 0.4];
    let j_prev = agent.cost_to_go(&s, &a).unwrap();
    let target = 1.2 + 0.95 * j_prev;
    let errors = agent.critic_inner_loop(&s, &a, target).unwrap();
    assert_eq!(errors.len(), 51);
    for w in errors.windows(2) {
        assert!(w[1].abs() <= w[0].abs(), "{errors:?}");
    }
    assert!(errors.last().unwrap().abs() < 0.5 * errors[0].abs());
}

#[test]
fn critic_inner_loop_stops_at_tolerance() {
    let config = AdhdpConfig {
        critic_iters: 1000,
        critic_tolerance: 1e-4,
        lr_critic: 0.05,
        ..small_config()
    };
    let env = env_config(50, None).build().unwrap();
    let mut agent = AdhdpAgent::new(env.observation_dim(), env.action_dim(), config).unwrap();
    let s = env.observation();
    let a = vec![0.0; 3];
    let target = agent.cost_to_go(&s, &a).unwrap() + 0.5;
    let errors = agent.critic_inner_loop(&s, &a, target).unwrap();
    assert!(errors.len() < 1000);
    let last = errors.last().unwrap();
    assert!(0.5 * last * last < 1e-4);
}

#[test]
fn actor_descends_the_critic() {
    let config = AdhdpConfig {
        actor_iters: 30,
        actor_tolerance: 0.0,
        lr_actor: 0.05,
        ..small_config()
    };
    let env = env_config(50, None).build().unwrap();
    let mut agent = AdhdpAgent::new(env.observation_dim(), env.action_dim(), config).unwrap();
    let s = env.observation();
    let before = agent.cost_to_go(&s, &agent.action(&s).unwrap()).unwrap();
    let (after, iters) = agent.actor_inner_loop(&s).unwrap();
    assert_eq!(iters, 30);
    assert!(after.abs() < before.abs(), "{before} -> {after}");
}

#[derive(Default)]
struct Recorder {
    episodes: Vec<(u64, u64, usize)>,
}

impl AdhdpObserver for Recorder {
    fn on_episode_end(&mut self, episode: u64, env_steps: u64, _: &AdhdpAgent, tr: &[Transition]) -> critic_landscape::Result<()> {
        self.episodes.push((episode, env_steps, tr.len()));
        Ok(())
    }
}

#[test]
fn one_record_and_one_row_per_episode() {
    let mut rec = Recorder::default();
    let run = train_adhdp(&env_config(30, None), &small_config(), &mut rec).unwrap();
    assert_eq!(rec.episodes.len(), 4);
    assert_eq!(run.log.episodes.len(), 4);
    for (k, (ep, steps, len)) in rec.episodes.iter().enumerate() {
        assert_eq!(*ep, k as u64 + 1);
        assert_eq!(*steps, 30 * (k as u64 + 1));
        assert_eq!(*len, 30);
    }
    assert_eq!(run.last_episode.len(), 30);
    assert!(run.last_episode.last().unwrap().truncated);
    let mut csv = Vec::new();
    run.log.write_csv(&mut csv, &["seed 5".into()]).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 6);
}

#[test]
fn episode_ends_on_state_limit() {
    // The initial rate norm is about 0.245 rad/s, so a tighter limit fails at once.
    let mut rec = Recorder::default();
    let run = train_adhdp(&env_config(100, Some(0.2)), &small_config(), &mut rec).unwrap();
    for row in &run.log.episodes {
        assert!(row.failed);
        assert_eq!(row.steps, 1);
    }
    assert!(run.last_episode[0].terminated);
}

#[test]
fn seeded_training_is_bitwise_reproducible() {
    let a = train_adhdp(&env_config(40, None), &small_config(), &mut ()).unwrap();
    let b = train_adhdp(&env_config(40, None), &small_config(), &mut ()).unwrap();
    assert_eq!(a.agent.critic, b.agent.critic);
    assert_eq!(a.agent.actor, b.agent.actor);
    for (x, y) in a.last_episode.iter().zip(&b.last_episode) {
        assert_eq!(x, y);
    }
    let c = train_adhdp(&env_config(40, None), &AdhdpConfig { seed: 6, ..small_config() }, &mut ()).unwrap();
    assert_ne!(a.agent.critic, c.agent.critic);
}

#[test]
fn checkpoint_roundtrip() {
    let run = train_adhdp(&env_config(20, None), &small_config(), &mut ()).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &run.agent).unwrap();
    let back = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back.critic, run.agent.critic);
    assert_eq!(back.actor, run.agent.actor);
    assert!(read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
}

#[test]
fn invalid_config_is_rejected() {
    assert!(AdhdpAgent::new(7, 3, AdhdpConfig { gamma: 1.5, ..small_config() }).is_err());
    assert!(AdhdpAgent::new(7, 3, AdhdpConfig { critic_iters: 0, ..small_config() }).is_err());
}

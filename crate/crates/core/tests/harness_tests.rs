use gagpo::credit::Estimator;
use gagpo::env::{EnvConfig, EnvName, Environment};
use gagpo::harness::{
    collect_rollout_group, collect_rollout_groups, initial_policy, train_run, TrainConfig, Trainer,
};
use gagpo::policy::step_features;
use gagpo::trajectory::{read_rollout_dump, write_rollout_dump, Termination};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(name: EnvName, seed: u64) -> TrainConfig {
    TrainConfig {
        env: EnvConfig::new(name),
        total_steps: 3,
        tasks_per_batch: 3,
        eval_every: 2,
        eval_episodes: 8,
        dump_every: 0,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn group_shares_its_start_and_old_logprobs_replay() {
    for name in [EnvName::Chain, EnvName::KeyDoor, EnvName::MiniShop] {
        let env = Environment::new(EnvConfig::new(name)).unwrap();
        let policy = initial_policy(&TrainConfig::default(), &env);
        let group = collect_rollout_group(&env, &policy, 17, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(group.size(), 8);
        let start = env.reset(17);
        for traj in &group.trajectories {
            assert_eq!(&traj.steps[0].state, start.observation());
            assert!(traj.len() <= env.budget());
            if traj.terminated_by == Termination::BudgetExhausted {
                assert_eq!(traj.len(), env.budget());
            }
            for (t, step) in traj.steps.iter().enumerate() {
                let f = step_features(env.vocab(), &step.state, t, env.budget());
                let again = policy.action_token_logprobs(&f, &step.action).unwrap();
                for (a, b) in again.iter().zip(&step.token_logprobs_old) {
                    assert!((a - b).abs() <= 1e-12, "{name:?}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn groups_do_not_depend_on_their_neighbours() {
    let env = Environment::new(EnvConfig::new(EnvName::KeyDoor)).unwrap();
    let policy = initial_policy(&TrainConfig::default(), &env);
    let mut rngs: Vec<ChaCha8Rng> = (0..3).map(ChaCha8Rng::seed_from_u64).collect();
    let together = collect_rollout_groups(&env, &policy, &[4, 5, 6], 4, &mut rngs).unwrap();
    let alone = collect_rollout_group(&env, &policy, 5, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(together[1], alone);
}

#[test]
fn step_metrics_account_for_every_step_and_token() {
    let mut trainer = Trainer::new(small(EnvName::MiniShop, 3)).unwrap();
    for _ in 0..2 {
        let out = trainer.train_step().unwrap();
        let steps: usize = out.groups.iter().map(|g| g.total_steps()).sum();
        let tokens: usize = out.groups.iter().flat_map(|g| &g.trajectories).map(|t| t.total_tokens()).sum();
        let trajs: Vec<_> = out.groups.iter().flat_map(|g| &g.trajectories).collect();
        let success = trajs.iter().filter(|t| t.succeeded()).count() as f64 / trajs.len() as f64;
        let m = &out.metrics;
        assert_eq!(m.num_steps, steps);
        assert_eq!(m.num_tokens, tokens);
        assert_eq!(trajs.len(), 3 * 8);
        assert_eq!(m.rollout.success_rate, success);
        assert_eq!(out.tables.iter().map(|t| t.num_steps()).sum::<usize>(), steps);
        assert!(m.entropy > 0.0 && m.update.loss.is_finite());
    }
    assert_eq!(trainer.step(), 2);
}

#[test]
fn rollout_dump_round_trips() {
    let mut trainer = Trainer::new(small(EnvName::KeyDoor, 1)).unwrap();
    let out = trainer.train_step().unwrap();
    let mut buf = Vec::new();
    write_rollout_dump(&mut buf, &out.groups).unwrap();
    assert_eq!(read_rollout_dump(buf.as_slice()).unwrap(), out.groups);
}

#[test]
fn td_only_trains_exactly_like_lambda_zero() {
    let mut a = small(EnvName::KeyDoor, 2);
    a.credit.estimator = Estimator::TdOnly;
    let mut b = small(EnvName::KeyDoor, 2);
    b.credit.lambda = 0.0;
    let (mut ta, mut tb) = (Trainer::new(a).unwrap(), Trainer::new(b).unwrap());
    for _ in 0..3 {
        assert_eq!(ta.train_step().unwrap().metrics, tb.train_step().unwrap().metrics);
    }
    assert_eq!(ta.policy().tensors(), tb.policy().tensors());
}

#[test]
fn seeds_change_the_run_and_repeat_it() {
    let a = train_run(&small(EnvName::Chain, 1), None).unwrap();
    let b = train_run(&small(EnvName::Chain, 1), None).unwrap();
    assert_eq!(a, b);
    let mut t1 = Trainer::new(small(EnvName::Chain, 1)).unwrap();
    let mut t2 = Trainer::new(small(EnvName::Chain, 2)).unwrap();
    assert_ne!(t1.train_step().unwrap().metrics, t2.train_step().unwrap().metrics);
}

#[test]
fn evaluation_runs_before_the_update_and_at_the_end() {
    let summary = train_run(&small(EnvName::Chain, 0), None).unwrap();
    let steps: Vec<u64> = summary.evaluations.iter().map(|p| p.step).collect();
    assert_eq!(steps, vec![0, 2, 3]);
    assert_eq!(summary.final_eval, summary.evaluations[2].result);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = TrainConfig::default();
    c.credit.lambda = 1.5;
    assert!(matches!(Trainer::new(c), Err(gagpo::Error::Config(_))));
    let c = TrainConfig {
        group_size: 1,
        ..TrainConfig::default()
    };
    assert!(matches!(Trainer::new(c), Err(gagpo::Error::Config(_))));
}

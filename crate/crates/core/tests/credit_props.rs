mod common;

use gagpo::credit::{
    build_step_groups, dump_statistics, estimate_advantages, gae_advantages, grouped_value_proxy,
    discounted_returns, advantage_statistics, group_size_statistics, normalize_advantages, read_advantage_dump,
    write_advantage_dump, CreditConfig, Estimator, NormMode,
};
use gagpo::trajectory::RolloutGroup;
use gagpo::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_group() -> impl Strategy<Value = RolloutGroup> {
    (any::<u64>(), 1usize..=8, 1usize..=15, 1usize..=6).prop_map(|(seed, k, len, states)| {
        common::random_group(&mut ChaCha8Rng::seed_from_u64(seed), k, len, states)
    })
}

fn arb_contrast_group() -> impl Strategy<Value = RolloutGroup> {
    (any::<u64>(), 2usize..=8, 1usize..=15, 1usize..=6).prop_map(|(seed, k, len, states)| {
        common::random_group(&mut ChaCha8Rng::seed_from_u64(seed), k, len, states)
    })
}

fn config(gamma: f64, lambda: f64) -> CreditConfig {
    CreditConfig {
        gamma,
        lambda,
        ..CreditConfig::default()
    }
}

proptest! {
    #[test]
    fn recursion_equals_closed_form(
        deltas in prop::collection::vec(-5.0f64..5.0, 1..30),
        gamma in 0.0f64..=1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let got = gae_advantages(&deltas, gamma, lambda);
        let want = common::gae_closed_form(&deltas, gamma, lambda);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn step_groups_partition_the_group(group in arb_group()) {
        let index = build_step_groups(&group);
        prop_assert_eq!(index.total_members(), group.total_steps());
        let mut seen = std::collections::BTreeSet::new();
        for (key, members) in index.iter() {
            prop_assert!(!members.is_empty());
            for &(i, t) in members {
                prop_assert_eq!(&group.trajectories[i].steps[t].state, key);
                prop_assert!(seen.insert((i, t)));
            }
        }
        prop_assert_eq!(seen.len(), group.total_steps());
    }

    #[test]
    fn value_proxy_is_the_group_mean(group in arb_group(), gamma in 0.0f64..=1.0) {
        let index = build_step_groups(&group);
        let returns: Vec<Vec<f64>> = group.trajectories.iter().map(|t| discounted_returns(t, gamma)).collect();
        let proxy = grouped_value_proxy(&index, &returns);
        let oracle = common::value_proxy(&group, gamma);
        for (traj, vs) in group.trajectories.iter().zip(&oracle) {
            for (s, v) in traj.steps.iter().zip(vs) {
                prop_assert!((proxy[&s.state] - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn telescoping_and_one_step_limits(group in arb_group(), gamma in 0.0f64..=1.0) {
        let values = common::value_proxy(&group, gamma);
        let mc = estimate_advantages(&group, &config(gamma, 1.0)).unwrap();
        for ((traj, row), v) in group.trajectories.iter().zip(&mc.steps).zip(&values) {
            let ret = common::returns(&traj.rewards().collect::<Vec<_>>(), gamma);
            for t in 0..traj.len() {
                prop_assert!((row[t].advantage_raw - (ret[t] - v[t])).abs() <= 1e-10);
            }
        }
        let td = estimate_advantages(&group, &config(gamma, 0.0)).unwrap();
        for c in td.iter() {
            prop_assert_eq!(c.advantage_raw, c.residual);
        }
    }

    #[test]
    fn td_only_is_lambda_zero(group in arb_group(), gamma in 0.0f64..=1.0, lambda in 0.0f64..=1.0) {
        let td = CreditConfig { estimator: Estimator::TdOnly, ..config(gamma, lambda) };
        prop_assert_eq!(
            estimate_advantages(&group, &td).unwrap(),
            estimate_advantages(&group, &config(gamma, 0.0)).unwrap()
        );
    }

    #[test]
    fn mc_step_is_return_minus_proxy(group in arb_group(), gamma in 0.0f64..=1.0) {
        let c = CreditConfig { estimator: Estimator::McStep, ..config(gamma, 0.3) };
        let table = estimate_advantages(&group, &c).unwrap();
        for cr in table.iter() {
            prop_assert_eq!(cr.advantage_raw, cr.return_hat - cr.value_proxy);
        }
    }

    #[test]
    fn trajectory_level_estimators(group in arb_contrast_group(), w in 0.0f64..2.0) {
        let episode: Vec<f64> = group.trajectories.iter().map(|t| t.rewards().sum()).collect();
        let (m, s) = common::pop_mean_std(&episode);
        let eps = CreditConfig::default().norm_epsilon;
        let k = episode.len() as f64;

        let grpo = estimate_advantages(&group, &CreditConfig { estimator: Estimator::GrpoTraj, ..CreditConfig::default() }).unwrap();
        let rloo = estimate_advantages(&group, &CreditConfig { estimator: Estimator::Rloo, ..CreditConfig::default() }).unwrap();
        let gagpo = estimate_advantages(&group, &CreditConfig::default()).unwrap();
        let broadcast = estimate_advantages(
            &group,
            &CreditConfig { estimator: Estimator::TrajBroadcast, broadcast_weight: w, ..CreditConfig::default() },
        )
        .unwrap();
        for i in 0..group.size() {
            let relative = (episode[i] - m) / (s + eps);
            let others = (episode.iter().sum::<f64>() - episode[i]) / (k - 1.0);
            for t in 0..group.trajectories[i].len() {
                prop_assert!((grpo.steps[i][t].advantage_raw - relative).abs() <= 1e-9);
                prop_assert!((rloo.steps[i][t].advantage_raw - (episode[i] - others)).abs() <= 1e-12);
                let want = gagpo.steps[i][t].advantage_raw + w * relative;
                prop_assert!((broadcast.steps[i][t].advantage_raw - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn group_normalization_moments(group in arb_group()) {
        let c = CreditConfig::default();
        let mut tables = vec![estimate_advantages(&group, &c).unwrap()];
        let (_, sigma) = common::pop_mean_std(&tables[0].raw());
        normalize_advantages(&mut tables, NormMode::Group, c.norm_epsilon);
        let (m, s) = common::pop_mean_std(&tables[0].normalized());
        prop_assert!(m.abs() <= 1e-9);
        prop_assert!((s - sigma / (sigma + c.norm_epsilon)).abs() <= 1e-6);
    }

    #[test]
    fn batch_normalization_pools_groups(a in arb_group(), b in arb_group()) {
        let c = CreditConfig::default();
        let mut tables = vec![estimate_advantages(&a, &c).unwrap(), estimate_advantages(&b, &c).unwrap()];
        let raw: Vec<f64> = tables.iter().flat_map(|t| t.raw()).collect();
        let (mu, sigma) = common::pop_mean_std(&raw);
        normalize_advantages(&mut tables, NormMode::Batch, c.norm_epsilon);
        let norm: Vec<f64> = tables.iter().flat_map(|t| t.normalized()).collect();
        for (x, n) in raw.iter().zip(&norm) {
            prop_assert!((n - (x - mu) / (sigma + c.norm_epsilon)).abs() <= 1e-9);
        }
    }

    #[test]
    fn no_normalization_copies_raw(group in arb_group()) {
        let mut tables = vec![estimate_advantages(&group, &CreditConfig::default()).unwrap()];
        normalize_advantages(&mut tables, NormMode::None, 1e-8);
        prop_assert_eq!(tables[0].raw(), tables[0].normalized());
    }

    #[test]
    fn scaling_rewards_leaves_normalized_advantages(group in arb_group(), c in 0.01f64..100.0) {
        let exact = CreditConfig { norm_epsilon: 0.0, ..CreditConfig::default() };
        let mut scaled = group.clone();
        for s in scaled.trajectories.iter_mut().flat_map(|t| &mut t.steps) {
            s.reward *= c;
        }
        let mut a = vec![estimate_advantages(&group, &exact).unwrap()];
        let mut b = vec![estimate_advantages(&scaled, &exact).unwrap()];
        let (_, sigma) = common::pop_mean_std(&a[0].raw());
        prop_assume!(sigma > 1e-6);
        normalize_advantages(&mut a, NormMode::Group, 0.0);
        normalize_advantages(&mut b, NormMode::Group, 0.0);
        for (x, y) in a[0].normalized().iter().zip(b[0].normalized()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn dump_round_trip_reproduces_statistics(groups in prop::collection::vec(arb_group(), 1..4)) {
        let c = CreditConfig::default();
        let mut tables: Vec<_> = groups.iter().map(|g| estimate_advantages(g, &c).unwrap()).collect();
        normalize_advantages(&mut tables, NormMode::Group, c.norm_epsilon);
        let mut buf = Vec::new();
        write_advantage_dump(&mut buf, 7, &groups, &tables).unwrap();
        let records = read_advantage_dump(buf.as_slice()).unwrap();
        let stats = dump_statistics(&records).unwrap();

        let norm: Vec<f64> = tables.iter().flat_map(|t| t.normalized()).collect();
        let indices: Vec<_> = groups.iter().map(build_step_groups).collect();
        prop_assert_eq!(stats.step, 7);
        prop_assert_eq!(stats.steps, norm.len());
        prop_assert_eq!(stats.advantages, advantage_statistics(&norm).unwrap());
        prop_assert_eq!(stats.group_sizes, group_size_statistics(&indices).unwrap());
    }
}

#[test]
fn contrast_estimators_need_two_trajectories() {
    let group = common::group_from_rewards(&[&["a", "b"]], &[&[0.0, 1.0]]);
    for e in [Estimator::GrpoTraj, Estimator::Rloo, Estimator::TrajBroadcast] {
        let c = CreditConfig { estimator: e, ..CreditConfig::default() };
        assert!(matches!(estimate_advantages(&group, &c), Err(Error::GroupTooSmall { got: 1, .. })), "{e:?}");
    }
    for e in [Estimator::Gagpo, Estimator::TdOnly, Estimator::McStep] {
        let c = CreditConfig { estimator: e, ..CreditConfig::default() };
        assert!(estimate_advantages(&group, &c).is_ok(), "{e:?}");
    }
}

#[test]
fn statistics_percentiles_match_oracle() {
    let xs = [3.0, -1.0, 0.5, 2.0, -2.5, 1.5, 0.0];
    let s = advantage_statistics(&xs).unwrap();
    let iqr = common::percentile(&xs, 0.75) - common::percentile(&xs, 0.25);
    assert_eq!(s.iqr, iqr);
    assert_eq!(s.frac_abs_gt_1, 4.0 / 7.0);
}

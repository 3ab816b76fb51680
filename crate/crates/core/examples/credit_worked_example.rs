//! Step-aligned credit on a two-trajectory group: both trajectories start in
//! `S0`, one reaches the goal through `S1`, the other stalls in `S2`.
//!
//!     cargo run --example credit_worked_example

use gagpo::credit::{build_step_groups, estimate_advantages, normalize_advantages, CreditConfig, Estimator, NormMode};
use gagpo::trajectory::{Action, RolloutGroup, StateKey, Step, Termination, Token, Trajectory};

fn trajectory(states: &[&str], rewards: &[f64]) -> gagpo::Result<Trajectory> {
    let steps = states
        .iter()
        .zip(rewards)
        .map(|(s, r)| Step::new(StateKey::new(*s), Action::new(vec![Token(0)], 1)?, *r, vec![-0.7]))
        .collect::<gagpo::Result<Vec<_>>>()?;
    Trajectory::new(steps, Termination::BudgetExhausted)
}

fn main() -> gagpo::Result<()> {
    let group = RolloutGroup::new(
        "example",
        vec![trajectory(&["S0", "S1"], &[0.0, 1.0])?, trajectory(&["S0", "S2"], &[0.0, 0.0])?],
    )?;
    let index = build_step_groups(&group);
    for (state, members) in index.iter() {
        println!("step group {:<3} members {members:?}", state.as_str());
    }

    for estimator in [Estimator::Gagpo, Estimator::TdOnly, Estimator::McStep, Estimator::GrpoTraj, Estimator::Rloo] {
        let config = CreditConfig {
            gamma: 1.0,
            lambda: 0.8,
            estimator,
            ..CreditConfig::default()
        };
        let mut tables = vec![estimate_advantages(&group, &config)?];
        normalize_advantages(&mut tables, NormMode::Group, config.norm_epsilon);
        println!("\n{}", estimator.as_str());
        println!("  i t  return  proxy  residual  raw      normalized");
        for (i, row) in tables[0].steps.iter().enumerate() {
            for (t, c) in row.iter().enumerate() {
                println!(
                    "  {i} {t}  {:>6.3}  {:>5.3}  {:>8.3}  {:>7.4}  {:>9.5}",
                    c.return_hat, c.value_proxy, c.residual, c.advantage_raw, c.advantage_norm
                );
            }
        }
    }
    Ok(())
}

//! Independent reference computations shared by the integration tests. These
//! use plain loops over the definitions and never call the library's credit
//! code.

#![allow(dead_code)]

use gagpo::trajectory::{Action, RolloutGroup, StateKey, Step, Termination, Token, Trajectory};
use rand::Rng;

/// A group of `k` trajectories over states `s0..s{n_states}`; every
/// trajectory starts in `s0`, so the first step is always shared.
pub fn random_group<R: Rng>(rng: &mut R, k: usize, max_len: usize, n_states: usize) -> RolloutGroup {
    let trajectories = (0..k)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            let steps = (0..len)
                .map(|t| {
                    let state = if t == 0 { 0 } else { rng.gen_range(0..n_states) };
                    let n = rng.gen_range(1..=3);
                    let tokens = (0..n).map(|_| Token(rng.gen_range(0..8))).collect();
                    let lps = (0..n).map(|_| -rng.gen_range(0.01..3.0)).collect();
                    Step::new(
                        StateKey::new(format!("s{state}")),
                        Action::new(tokens, 3).unwrap(),
                        rng.gen_range(-1.0..1.0),
                        lps,
                    )
                    .unwrap()
                })
                .collect();
            Trajectory::new(steps, Termination::BudgetExhausted).unwrap()
        })
        .collect();
    RolloutGroup::new("random", trajectories).unwrap()
}

pub fn group_from_rewards(states: &[&[&str]], rewards: &[&[f64]]) -> RolloutGroup {
    let trajectories = states
        .iter()
        .zip(rewards)
        .map(|(ss, rs)| {
            let steps = ss
                .iter()
                .zip(*rs)
                .map(|(s, r)| Step::new(StateKey::new(*s), Action::new(vec![Token(0)], 1).unwrap(), *r, vec![-0.5]).unwrap())
                .collect();
            Trajectory::new(steps, Termination::BudgetExhausted).unwrap()
        })
        .collect();
    RolloutGroup::new("hand", trajectories).unwrap()
}

/// R̂_t by the definition: Σ_{u ≥ t} γ^{u-t} r_u.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| (t..rewards.len()).map(|u| gamma.powi((u - t) as i32) * rewards[u]).sum())
        .collect()
}

/// V̄ of every step: mean of R̂ over all steps in the group whose state text
/// matches exactly.
pub fn value_proxy(group: &RolloutGroup, gamma: f64) -> Vec<Vec<f64>> {
    let all: Vec<(String, f64)> = group
        .trajectories
        .iter()
        .flat_map(|tr| {
            let rs: Vec<f64> = tr.steps.iter().map(|s| s.reward).collect();
            let ret = returns(&rs, gamma);
            tr.steps.iter().map(|s| s.state.as_str().to_string()).zip(ret).collect::<Vec<_>>()
        })
        .collect();
    group
        .trajectories
        .iter()
        .map(|tr| {
            tr.steps
                .iter()
                .map(|s| {
                    let same: Vec<f64> = all.iter().filter(|(k, _)| k == s.state.as_str()).map(|(_, r)| *r).collect();
                    same.iter().sum::<f64>() / same.len() as f64
                })
                .collect()
        })
        .collect()
}

/// δ_t = r_t + γ V(s_{t+1}) − V(s_t), with V = 0 past the last step.
pub fn residuals(rewards: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| {
            let next = values.get(t + 1).copied().unwrap_or(0.0);
            rewards[t] + gamma * next - values[t]
        })
        .collect()
}

/// Â_t = Σ_l (γλ)^l δ_{t+l}.
pub fn gae_closed_form(deltas: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    (0..deltas.len())
        .map(|t| (t..deltas.len()).map(|u| (gamma * lambda).powi((u - t) as i32) * deltas[u]).sum())
        .collect()
}

pub fn pop_mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

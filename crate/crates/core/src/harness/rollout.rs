//! Rollout collection under a frozen policy, and greedy evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvName, EnvState, Environment};
use crate::error::{Error, Result};
use crate::policy::{step_features, PolicyParams};
use crate::trajectory::{Action, RolloutGroup, Step, Termination, Trajectory};

struct Episode {
    state: EnvState,
    steps: Vec<Step>,
}

/// Task identifier written into dumps.
pub fn task_id(env: &Environment, task_seed: u64) -> String {
    format!("{}-{task_seed}", env.config().name)
}

/// Runs `k` episodes of each task in lockstep. Group `g` samples only from
/// `rngs[g]`, so its trajectories do not depend on the other groups.
pub fn collect_rollout_groups<R: Rng>(
    env: &Environment,
    policy: &PolicyParams,
    task_seeds: &[u64],
    k: usize,
    rngs: &mut [R],
) -> Result<Vec<RolloutGroup>> {
    if k == 0 {
        return Err(Error::Invalid("rollout group size must be >= 1".into()));
    }
    assert_eq!(task_seeds.len(), rngs.len(), "one generator per task");
    let budget = env.budget();
    let mut episodes: Vec<Episode> = task_seeds
        .iter()
        .flat_map(|&seed| {
            (0..k).map(move |_| Episode {
                state: env.reset(seed),
                steps: Vec::new(),
            })
        })
        .collect();
    loop {
        let open: Vec<usize> = (0..episodes.len()).filter(|&e| !episodes[e].state.done()).collect();
        if open.is_empty() {
            break;
        }
        let features: Vec<Vec<f64>> = open
            .iter()
            .map(|&e| {
                let s = &episodes[e].state;
                step_features(env.vocab(), s.observation(), s.steps_taken(), budget)
            })
            .collect();
        let owner: Vec<usize> = open.iter().map(|&e| e / k).collect();
        let sampled = policy.sample_actions_with(
            &features,
            env.max_action_len(),
            env.vocab().eoa(),
            rngs,
            &owner,
        )?;
        for (&e, (action, logprobs)) in open.iter().zip(sampled) {
            let ep = &mut episodes[e];
            let tr = env.step(&ep.state, &action)?;
            ep.steps.push(Step::new(
                ep.state.observation().clone(),
                action,
                tr.reward,
                logprobs,
            )?);
            ep.state = tr.state;
        }
    }
    let mut episodes = episodes.into_iter();
    task_seeds
        .iter()
        .map(|&seed| {
            let trajectories = episodes
                .by_ref()
                .take(k)
                .map(|ep| {
                    let end = ep.state.termination().expect("finished episode");
                    Trajectory::new(ep.steps, end)
                })
                .collect::<Result<Vec<_>>>()?;
            RolloutGroup::new(task_id(env, seed), trajectories)
        })
        .collect()
}

/// K episodes of a single task instance.
pub fn collect_rollout_group<R: Rng>(
    env: &Environment,
    policy: &PolicyParams,
    task_seed: u64,
    k: usize,
    rng: &mut R,
) -> Result<RolloutGroup> {
    let mut groups = collect_rollout_groups(env, policy, &[task_seed], k, std::slice::from_mut(rng))?;
    Ok(groups.pop().expect("one group"))
}

/// Chooses actions for a batch of live episodes.
pub trait Agent {
    fn act(&mut self, env: &Environment, states: &[&EnvState]) -> Result<Vec<Action>>;
}

/// Argmax token decoding under a fixed policy.
pub struct GreedyAgent<'a> {
    pub policy: &'a PolicyParams,
}

impl Agent for GreedyAgent<'_> {
    fn act(&mut self, env: &Environment, states: &[&EnvState]) -> Result<Vec<Action>> {
        let features: Vec<Vec<f64>> = states
            .iter()
            .map(|s| step_features(env.vocab(), s.observation(), s.steps_taken(), env.budget()))
            .collect();
        Ok(self
            .policy
            .greedy_actions(&features, env.max_action_len(), env.vocab().eoa())?
            .into_iter()
            .map(|(a, _)| a)
            .collect())
    }
}

/// Follows a shortest key-door solution, recomputed at every step.
pub struct ScriptedKeyDoorAgent;

impl Agent for ScriptedKeyDoorAgent {
    fn act(&mut self, env: &Environment, states: &[&EnvState]) -> Result<Vec<Action>> {
        states
            .iter()
            .map(|s| {
                let script = env
                    .keydoor_optimal_script(s)
                    .ok_or_else(|| Error::Invalid("scripted agent needs the keydoor env".into()))?;
                env.encode_action(&script[0])
            })
            .collect()
    }
}

/// Uniform choice among the legal commands.
pub struct RandomLegalAgent<R> {
    pub rng: R,
}

impl<R: Rng> Agent for RandomLegalAgent<R> {
    fn act(&mut self, env: &Environment, states: &[&EnvState]) -> Result<Vec<Action>> {
        states
            .iter()
            .map(|s| {
                let legal = env.legal_actions(s);
                legal
                    .choose(&mut self.rng)
                    .cloned()
                    .ok_or_else(|| Error::Invalid("no legal action".into()))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalResult {
    pub success_rate: f64,
    pub mean_score: f64,
    pub mean_episode_length: f64,
}

/// Score of a finished episode: the terminal purchase reward on the shop,
/// success indicator elsewhere.
pub fn episode_score(env: &Environment, state: &EnvState, terminal_reward: f64) -> f64 {
    match (env.config().name, state.termination()) {
        (EnvName::MiniShop, Some(Termination::Success | Termination::Completed)) => terminal_reward,
        (EnvName::MiniShop, _) => 0.0,
        _ => f64::from(u8::from(state.success())),
    }
}

/// Runs one episode per task seed with `agent`, all in lockstep.
pub fn evaluate<A: Agent + ?Sized>(env: &Environment, agent: &mut A, task_seeds: &[u64]) -> Result<EvalResult> {
    if task_seeds.is_empty() {
        return Err(Error::Invalid("evaluation needs at least one episode".into()));
    }
    let mut states: Vec<EnvState> = task_seeds.iter().map(|&s| env.reset(s)).collect();
    let mut last_reward = vec![0.0; states.len()];
    loop {
        let open: Vec<usize> = (0..states.len()).filter(|&i| !states[i].done()).collect();
        if open.is_empty() {
            break;
        }
        let refs: Vec<&EnvState> = open.iter().map(|&i| &states[i]).collect();
        let actions = agent.act(env, &refs)?;
        for (&i, a) in open.iter().zip(&actions) {
            let tr = env.step(&states[i], a)?;
            last_reward[i] = tr.reward;
            states[i] = tr.state;
        }
    }
    let n = states.len() as f64;
    let (mut success, mut score, mut length) = (0.0, 0.0, 0.0);
    for (s, r) in states.iter().zip(&last_reward) {
        success += f64::from(u8::from(s.success()));
        score += episode_score(env, s, *r);
        length += s.steps_taken() as f64;
    }
    Ok(EvalResult {
        success_rate: success / n,
        mean_score: score / n,
        mean_episode_length: length / n,
    })
}

/// Rollout-side counterpart of [`EvalResult`] over sampled trajectories.
pub fn rollout_result(env: &Environment, groups: &[RolloutGroup]) -> EvalResult {
    let (mut n, mut success, mut score, mut length) = (0.0, 0.0, 0.0, 0.0);
    for traj in groups.iter().flat_map(|g| &g.trajectories) {
        n += 1.0;
        let ok = traj.succeeded();
        success += f64::from(u8::from(ok));
        score += match env.config().name {
            EnvName::MiniShop if traj.terminated_by != Termination::BudgetExhausted => traj.terminal_reward(),
            EnvName::MiniShop => 0.0,
            _ => f64::from(u8::from(ok)),
        };
        length += traj.len() as f64;
    }
    EvalResult {
        success_rate: success / n,
        mean_score: score / n,
        mean_episode_length: length / n,
    }
}

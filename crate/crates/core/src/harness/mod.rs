//! Training loop: rollout grouping, credit assignment, clipped update, and
//! per-step metrics. Run directories, the (γ, λ) sweep and the ablation
//! matrix live in the submodules.

mod experiments;
mod plot;
mod rollout;
mod run;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::credit::{
    advantage_statistics, estimate_advantages, group_size_statistics, normalize_advantages,
    AdvantageStats, AdvantageTable, CreditConfig, GroupSizeStats, StepGroupIndex,
};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::optim::{apply_update, loss_and_gradients, AdamState, OptimConfig, UpdateBatch, UpdateReport};
use crate::policy::{step_features, PolicyConfig, PolicyParams};
use crate::trajectory::RolloutGroup;

pub use experiments::{
    ablation_matrix, ablation_variants, mean_std, sweep, write_ablation_csv, write_sweep_csv, AblationRow,
    AblationVariant, SweepCell,
};
pub use plot::{ema, write_metrics_svg, PLOT_SMOOTHING};
pub use rollout::{
    collect_rollout_group, collect_rollout_groups, episode_score, evaluate, rollout_result, task_id,
    Agent, EvalResult, GreedyAgent, RandomLegalAgent, ScriptedKeyDoorAgent,
};
pub use run::{read_metrics, run_id, train_run, EvalPoint, RunArtifacts, RunSummary};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub credit: CreditConfig,
    pub optim: OptimConfig,
    pub policy: PolicyConfig,
    /// Rollout group size K.
    pub group_size: usize,
    pub tasks_per_batch: usize,
    pub total_steps: u64,
    /// Greedy evaluation before every `eval_every`-th update; 0 disables.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Advantage and rollout dumps every `dump_every` steps; 0 disables.
    pub dump_every: u64,
    pub plot: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: EnvConfig::default(),
            credit: CreditConfig::default(),
            optim: OptimConfig::default(),
            policy: PolicyConfig::default(),
            group_size: 8,
            tasks_per_batch: 8,
            total_steps: 160,
            eval_every: 10,
            eval_episodes: 32,
            seed: 0,
            dump_every: 10,
            plot: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.credit.validate()?;
        self.optim.validate()?;
        if self.policy.hidden == 0 {
            return Err(Error::Config("policy.hidden must be >= 1".into()));
        }
        if !(self.policy.init_scale > 0.0 && self.policy.init_scale.is_finite()) {
            return Err(Error::Config("policy.init_scale must be > 0".into()));
        }
        if self.group_size < 2 {
            return Err(Error::Config("train.group_size must be >= 2".into()));
        }
        if !(1..=1 << 16).contains(&self.tasks_per_batch) {
            return Err(Error::Config("train.tasks_per_batch must be in 1..=65536".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("train.eval_episodes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything logged for one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepMetrics {
    pub step: u64,
    /// Outcome of the sampled training episodes.
    pub rollout: EvalResult,
    /// Greedy evaluation of the policy before this step's update.
    pub eval: Option<EvalResult>,
    pub entropy: f64,
    pub update: UpdateReport,
    pub advantages: AdvantageStats,
    pub group_sizes: GroupSizeStats,
    pub num_steps: usize,
    pub num_tokens: usize,
}

/// Metrics plus the raw material they were computed from.
pub struct StepOutput {
    pub metrics: StepMetrics,
    pub groups: Vec<RolloutGroup>,
    pub tables: Vec<AdvantageTable>,
}

const INIT_STREAM: u64 = u64::MAX;

/// Generator of task `task` at training step `step`.
pub fn group_rng(seed: u64, step: u64, task: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step << 16) | task as u64);
    rng
}

/// Held-out evaluation seeds; training seeds never set the top bit.
pub fn eval_task_seeds(episodes: usize) -> Vec<u64> {
    (0..episodes as u64).map(|i| (1 << 63) | i).collect()
}

/// Initial parameters for `config`, fixed by its seed.
pub fn initial_policy(config: &TrainConfig, env: &Environment) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(INIT_STREAM);
    let v = env.vocab().len();
    PolicyParams::new(v, v + 1, &config.policy, &mut rng)
}

pub struct Trainer {
    config: TrainConfig,
    env: Environment,
    policy: PolicyParams,
    reference: PolicyParams,
    adam: AdamState,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env = Environment::new(config.env.clone())?;
        let policy = initial_policy(&config, &env);
        Ok(Trainer {
            reference: policy.clone(),
            config,
            env,
            policy,
            adam: AdamState::new(),
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    /// Number of completed updates.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn evaluate(&self) -> Result<EvalResult> {
        evaluate(
            &self.env,
            &mut GreedyAgent { policy: &self.policy },
            &eval_task_seeds(self.config.eval_episodes),
        )
    }

    fn sample_batch(&self) -> Result<Vec<RolloutGroup>> {
        let c = &self.config;
        let mut rngs: Vec<ChaCha8Rng> = (0..c.tasks_per_batch)
            .map(|task| group_rng(c.seed, self.step, task))
            .collect();
        let seeds: Vec<u64> = rngs.iter_mut().map(|r| r.gen::<u64>() >> 1).collect();
        collect_rollout_groups(&self.env, &self.policy, &seeds, c.group_size, &mut rngs)
    }

    /// Rollouts, credit, one clipped update.
    pub fn train_step(&mut self) -> Result<StepOutput> {
        let c = &self.config;
        let eval = match c.eval_every {
            0 => None,
            every if self.step % every == 0 => Some(self.evaluate()?),
            _ => None,
        };
        let groups = self.sample_batch()?;
        let mut tables = groups
            .iter()
            .map(|g| estimate_advantages(g, &c.credit))
            .collect::<Result<Vec<_>>>()?;
        normalize_advantages(&mut tables, c.credit.norm_mode, c.credit.norm_epsilon);
        let indices: Vec<StepGroupIndex> = groups.iter().map(StepGroupIndex::build).collect();

        let vocab = self.env.vocab();
        let budget = self.env.budget();
        let mut batch = UpdateBatch::new(self.policy.feature_dim());
        let mut features = Vec::new();
        for (group, table) in groups.iter().zip(&tables) {
            for (traj, credit) in group.trajectories.iter().zip(&table.steps) {
                for (t, (step, cr)) in traj.steps.iter().zip(credit).enumerate() {
                    let f = step_features(vocab, &step.state, t, budget);
                    batch.push(&f, &step.action, &step.token_logprobs_old, cr.advantage_norm)?;
                    features.push(f);
                }
            }
        }
        let num_steps = batch.num_actions();
        let num_tokens = batch.old_logprobs().len();
        let normalized: Vec<f64> = tables.iter().flat_map(|t| t.normalized()).collect();
        debug_assert_eq!(normalized.len(), num_steps);
        let entropy = {
            let e = self.policy.first_token_entropy(&features)?;
            e.iter().sum::<f64>() / e.len() as f64
        };

        batch.score_reference(&self.reference)?;
        let (mut update, grads) = loss_and_gradients(&self.policy, &batch, &c.optim)?;
        update.gradient_norm = apply_update(&mut self.policy, &grads, &c.optim, &mut self.adam)?;

        let metrics = StepMetrics {
            step: self.step,
            rollout: rollout_result(&self.env, &groups),
            eval,
            entropy,
            update,
            advantages: advantage_statistics(&normalized)?,
            group_sizes: group_size_statistics(&indices)?,
            num_steps,
            num_tokens,
        };
        self.step += 1;
        Ok(StepOutput {
            metrics,
            groups,
            tables,
        })
    }
}

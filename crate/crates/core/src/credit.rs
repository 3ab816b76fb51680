//! Critic-free step-level credit assignment over a rollout group.
//!
//! Steps that share a state key across the K trajectories of one task form a
//! step group. The mean discounted return of a group is a non-parametric
//! value estimate `V̄(s)`. TD residuals against `V̄` are then accumulated
//! backward in time, GAE-style:
//!
//! ```text
//! R̂_t = Σ_{u≥t} γ^{u-t} r_u
//! V̄(s) = mean{ R̂ over occurrences of s }
//! δ_t = r_t + γ V̄(s_{t+1}) - V̄(s_t)        (V̄ after the last step is 0)
//! Â_t = δ_t + γλ Â_{t+1}
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trajectory::{RolloutGroup, StateKey, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Grouped value proxy + GAE recursion.
    Gagpo,
    /// GAE with λ forced to 0.
    TdOnly,
    /// `R̂_t - V̄(s_t)`.
    McStep,
    /// GAE plus a weighted episode-relative offset on every step.
    TrajBroadcast,
    /// Episode-relative advantage alone, on every step.
    GrpoTraj,
    /// Leave-one-out episode baseline, on every step.
    Rloo,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Gagpo,
        Estimator::TdOnly,
        Estimator::McStep,
        Estimator::TrajBroadcast,
        Estimator::GrpoTraj,
        Estimator::Rloo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Gagpo => "gagpo",
            Estimator::TdOnly => "td_only",
            Estimator::McStep => "mc_step",
            Estimator::TrajBroadcast => "traj_broadcast",
            Estimator::GrpoTraj => "grpo_traj",
            Estimator::Rloo => "rloo",
        }
    }

    fn needs_contrast(self) -> bool {
        matches!(
            self,
            Estimator::TrajBroadcast | Estimator::GrpoTraj | Estimator::Rloo
        )
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Statistics over all steps of one rollout group.
    Group,
    /// Statistics over all steps of the training batch.
    Batch,
    None,
}

impl NormMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NormMode::Group => "group",
            NormMode::Batch => "batch",
            NormMode::None => "none",
        }
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group" => Ok(NormMode::Group),
            "batch" => Ok(NormMode::Batch),
            "none" => Ok(NormMode::None),
            other => Err(Error::Config(format!("unknown norm mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CreditConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub norm_mode: NormMode,
    pub norm_epsilon: f64,
    pub estimator: Estimator,
    pub broadcast_weight: f64,
}

impl Default for CreditConfig {
    fn default() -> Self {
        CreditConfig {
            gamma: 0.95,
            lambda: 0.8,
            norm_mode: NormMode::Group,
            norm_epsilon: 1e-8,
            estimator: Estimator::Gagpo,
            broadcast_weight: 1.0,
        }
    }
}

impl CreditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "credit.gamma = {} outside [0,1]",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "credit.lambda = {} outside [0,1]",
                self.lambda
            )));
        }
        if !(self.norm_epsilon >= 0.0 && self.norm_epsilon.is_finite()) {
            return Err(Error::Config("credit.norm_epsilon must be >= 0".into()));
        }
        if !self.broadcast_weight.is_finite() {
            return Err(Error::Config("credit.broadcast_weight must be finite".into()));
        }
        Ok(())
    }

    /// λ actually used by the recursion.
    pub fn effective_lambda(&self) -> f64 {
        match self.estimator {
            Estimator::TdOnly => 0.0,
            _ => self.lambda,
        }
    }
}

/// `R̂_t = Σ_{u≥t} γ^{u-t} r_u`, by one backward pass.
pub fn discounted_returns(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let rewards: Vec<f64> = traj.rewards().collect();
    discounted_returns_of(&rewards, gamma)
}

pub fn discounted_returns_of(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Occurrences `(trajectory, time)` of each state key in one rollout group.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct StepGroupIndex {
    groups: BTreeMap<StateKey, Vec<(usize, usize)>>,
}

impl StepGroupIndex {
    pub fn build(group: &RolloutGroup) -> Self {
        let mut groups: BTreeMap<StateKey, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, traj) in group.trajectories.iter().enumerate() {
            for (t, step) in traj.steps.iter().enumerate() {
                groups.entry(step.state.clone()).or_default().push((i, t));
            }
        }
        StepGroupIndex { groups }
    }

    pub fn get(&self, key: &StateKey) -> Option<&[(usize, usize)]> {
        self.groups.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &[(usize, usize)])> {
        self.groups.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Number of distinct state keys.
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.values().map(Vec::len)
    }

    pub fn total_members(&self) -> usize {
        self.sizes().sum()
    }
}

pub fn build_step_groups(group: &RolloutGroup) -> StepGroupIndex {
    StepGroupIndex::build(group)
}

pub type ValueProxy = BTreeMap<StateKey, f64>;

/// `V̄(s)`: mean of `returns[i][t]` over the step group of `s`.
pub fn grouped_value_proxy(index: &StepGroupIndex, returns: &[Vec<f64>]) -> ValueProxy {
    index
        .iter()
        .map(|(key, members)| {
            let mut sum = 0.0;
            for &(i, t) in members {
                sum += returns[i][t];
            }
            (key.clone(), sum / members.len() as f64)
        })
        .collect()
}

/// `δ_t = r_t + γ V̄(s_{t+1}) - V̄(s_t)`, with zero value after the final
/// step regardless of how the episode ended.
pub fn td_residuals(traj: &Trajectory, proxy: &ValueProxy, gamma: f64) -> Result<Vec<f64>> {
    let values = traj
        .steps
        .iter()
        .map(|s| {
            proxy
                .get(&s.state)
                .copied()
                .ok_or_else(|| Error::MissingProxy(s.state.as_str().to_owned()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(residuals_from_values(traj, &values, gamma))
}

fn residuals_from_values(traj: &Trajectory, values: &[f64], gamma: f64) -> Vec<f64> {
    let n = values.len();
    traj.steps
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let next = if t + 1 < n { values[t + 1] } else { 0.0 };
            s.reward + gamma * next - values[t]
        })
        .collect()
}

/// `Â_t = δ_t + γλ Â_{t+1}`, `Â_{T+1} = 0`.
pub fn gae_advantages(residuals: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let decay = gamma * lambda;
    let mut out = vec![0.0; residuals.len()];
    let mut acc = 0.0;
    for (o, d) in out.iter_mut().zip(residuals).rev() {
        acc = d + decay * acc;
        *o = acc;
    }
    out
}

/// Everything computed for one step.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct StepCredit {
    pub return_hat: f64,
    pub value_proxy: f64,
    pub residual: f64,
    pub advantage_raw: f64,
    pub advantage_norm: f64,
}

/// Per-step credit for one rollout group, `steps[i][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageTable {
    pub task_id: String,
    pub steps: Vec<Vec<StepCredit>>,
}

impl AdvantageTable {
    pub fn iter(&self) -> impl Iterator<Item = &StepCredit> {
        self.steps.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut StepCredit> {
        self.steps.iter_mut().flatten()
    }

    pub fn num_steps(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn raw(&self) -> Vec<f64> {
        self.iter().map(|c| c.advantage_raw).collect()
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.iter().map(|c| c.advantage_norm).collect()
    }
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    (mean, (ss / n).sqrt())
}

/// Raw advantages of `group` under `config.estimator`. The normalized column
/// is a copy of the raw one until [`normalize_advantages`] runs.
pub fn estimate_advantages(group: &RolloutGroup, config: &CreditConfig) -> Result<AdvantageTable> {
    let k = group.size();
    if config.estimator.needs_contrast() && k < 2 {
        return Err(Error::GroupTooSmall {
            estimator: config.estimator.as_str(),
            got: k,
        });
    }
    let gamma = config.gamma;
    let index = StepGroupIndex::build(group);
    let returns: Vec<Vec<f64>> = group
        .trajectories
        .iter()
        .map(|t| discounted_returns(t, gamma))
        .collect();
    let proxy = grouped_value_proxy(&index, &returns);

    let episode: Vec<f64> = group.trajectories.iter().map(Trajectory::episode_return).collect();
    let relative = {
        let (mean, std) = mean_and_std(&episode);
        let eps = config.norm_epsilon;
        episode.iter().map(|r| (r - mean) / (std + eps)).collect::<Vec<_>>()
    };
    let total: f64 = episode.iter().sum();

    let mut steps = Vec::with_capacity(k);
    for (i, traj) in group.trajectories.iter().enumerate() {
        let values: Vec<f64> = traj.steps.iter().map(|s| proxy[&s.state]).collect();
        let residuals = residuals_from_values(traj, &values, gamma);
        let gae = gae_advantages(&residuals, gamma, config.effective_lambda());
        let raw: Vec<f64> = match config.estimator {
            Estimator::Gagpo | Estimator::TdOnly => gae,
            Estimator::McStep => returns[i].iter().zip(&values).map(|(r, v)| r - v).collect(),
            Estimator::TrajBroadcast => gae
                .iter()
                .map(|a| a + config.broadcast_weight * relative[i])
                .collect(),
            Estimator::GrpoTraj => vec![relative[i]; traj.len()],
            Estimator::Rloo => {
                let baseline = (total - episode[i]) / (k - 1) as f64;
                vec![episode[i] - baseline; traj.len()]
            }
        };
        steps.push(
            (0..traj.len())
                .map(|t| StepCredit {
                    return_hat: returns[i][t],
                    value_proxy: values[t],
                    residual: residuals[t],
                    advantage_raw: raw[t],
                    advantage_norm: raw[t],
                })
                .collect(),
        );
    }
    Ok(AdvantageTable {
        task_id: group.task_id.clone(),
        steps,
    })
}

/// `(x - μ) / (σ + ε)` with population σ.
pub fn standardize(values: &[f64], epsilon: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let (mean, std) = mean_and_std(values);
    values.iter().map(|v| (v - mean) / (std + epsilon)).collect()
}

/// Fills `advantage_norm` for every table of one training batch.
pub fn normalize_advantages(tables: &mut [AdvantageTable], mode: NormMode, epsilon: f64) {
    match mode {
        NormMode::None => {
            for table in tables.iter_mut() {
                for c in table.iter_mut() {
                    c.advantage_norm = c.advantage_raw;
                }
            }
        }
        NormMode::Group => {
            for table in tables.iter_mut() {
                let norm = standardize(&table.raw(), epsilon);
                for (c, a) in table.iter_mut().zip(norm) {
                    c.advantage_norm = a;
                }
            }
        }
        NormMode::Batch => {
            let all: Vec<f64> = tables.iter().flat_map(|t| t.raw()).collect();
            let norm = standardize(&all, epsilon);
            for (c, a) in tables.iter_mut().flat_map(|t| t.iter_mut()).zip(norm) {
                c.advantage_norm = a;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageStats {
    pub mean: f64,
    pub std: f64,
    pub iqr: f64,
    pub frac_abs_gt_1: f64,
}

/// Linear-interpolated percentile of sorted data, `q` in `[0,1]`.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn advantage_statistics(values: &[f64]) -> Result<AdvantageStats> {
    if values.is_empty() {
        return Err(Error::Invalid("advantage statistics of an empty set".into()));
    }
    let (mean, std) = mean_and_std(values);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = percentile_sorted(&sorted, 0.75) - percentile_sorted(&sorted, 0.25);
    let large = values.iter().filter(|v| v.abs() > 1.0).count();
    Ok(AdvantageStats {
        mean,
        std,
        iqr,
        frac_abs_gt_1: large as f64 / values.len() as f64,
    })
}

/// Step-weighted group-size summary: a step in a group of size g counts once.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSizeStats {
    pub mean_size: f64,
    pub pct_size_1: f64,
    pub pct_size_le_8: f64,
    pub pct_size_ge_16: f64,
}

/// Summary from the sizes of every step group (each listed once).
pub fn group_size_statistics_from_sizes<I: IntoIterator<Item = usize>>(sizes: I) -> Result<GroupSizeStats> {
    let (mut steps, mut weighted, mut one, mut le8, mut ge16) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for g in sizes {
        let g = g as u64;
        steps += g;
        weighted += g * g;
        if g == 1 {
            one += g;
        }
        if g <= 8 {
            le8 += g;
        }
        if g >= 16 {
            ge16 += g;
        }
    }
    if steps == 0 {
        return Err(Error::Invalid("group-size statistics of an empty index".into()));
    }
    let pct = |c: u64| 100.0 * c as f64 / steps as f64;
    Ok(GroupSizeStats {
        mean_size: weighted as f64 / steps as f64,
        pct_size_1: pct(one),
        pct_size_le_8: pct(le8),
        pct_size_ge_16: pct(ge16),
    })
}

/// Statistics pooled over the indices of every rollout group in a batch.
pub fn group_size_statistics(indices: &[StepGroupIndex]) -> Result<GroupSizeStats> {
    group_size_statistics_from_sizes(indices.iter().flat_map(|ix| ix.sizes()))
}

/// Short stable hash of a state key for dumps.
pub fn state_key_hash(key: &StateKey) -> String {
    let digest = Sha256::digest(key.as_str().as_bytes());
    hex::encode(&digest[..8])
}

/// One line of the advantage dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvantageRecord {
    pub step: u64,
    pub group: usize,
    pub task_id: String,
    pub i: usize,
    pub t: usize,
    pub state_key_hash: String,
    pub return_hat: f64,
    pub value_proxy: f64,
    pub residual: f64,
    pub advantage_raw: f64,
    pub advantage_norm: f64,
}

/// Writes one record per step, groups in batch order, then `i`, then `t`.
pub fn write_advantage_dump<W: Write>(
    mut out: W,
    step: u64,
    groups: &[RolloutGroup],
    tables: &[AdvantageTable],
) -> Result<()> {
    for (g, (group, table)) in groups.iter().zip(tables).enumerate() {
        for (i, (traj, credits)) in group.trajectories.iter().zip(&table.steps).enumerate() {
            for (t, (s, c)) in traj.steps.iter().zip(credits).enumerate() {
                let rec = AdvantageRecord {
                    step,
                    group: g,
                    task_id: group.task_id.clone(),
                    i,
                    t,
                    state_key_hash: state_key_hash(&s.state),
                    return_hat: c.return_hat,
                    value_proxy: c.value_proxy,
                    residual: c.residual,
                    advantage_raw: c.advantage_raw,
                    advantage_norm: c.advantage_norm,
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

pub fn read_advantage_dump<R: BufRead>(input: R) -> Result<Vec<AdvantageRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format("advantage dump", format!("line {}: {e}", n + 1)))?,
        );
    }
    if out.is_empty() {
        return Err(Error::format("advantage dump", "no records"));
    }
    Ok(out)
}

/// Statistics recomputed from dump records alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpStatistics {
    pub step: u64,
    pub steps: usize,
    pub advantages: AdvantageStats,
    pub group_sizes: GroupSizeStats,
}

/// Recomputes advantage and group-size statistics from dumped records. Group
/// sizes come from counting records per (group, state hash).
pub fn dump_statistics(records: &[AdvantageRecord]) -> Result<DumpStatistics> {
    let first = records
        .first()
        .ok_or_else(|| Error::format("advantage dump", "no records"))?;
    if records.iter().any(|r| r.step != first.step) {
        return Err(Error::format("advantage dump", "records from several training steps"));
    }
    let norm: Vec<f64> = records.iter().map(|r| r.advantage_norm).collect();
    let mut counts: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    for r in records {
        *counts.entry((r.group, r.state_key_hash.as_str())).or_default() += 1;
    }
    Ok(DumpStatistics {
        step: first.step,
        steps: records.len(),
        advantages: advantage_statistics(&norm)?,
        group_sizes: group_size_statistics_from_sizes(counts.into_values())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Action, Step, Termination, Token};
    use approx::assert_abs_diff_eq;

    fn traj(states: &[&str], rewards: &[f64]) -> Trajectory {
        let steps = states
            .iter()
            .zip(rewards)
            .map(|(s, r)| {
                Step::new(
                    StateKey::new(*s),
                    Action::new(vec![Token(2)], 1).unwrap(),
                    *r,
                    vec![-0.5],
                )
                .unwrap()
            })
            .collect();
        Trajectory::new(steps, Termination::BudgetExhausted).unwrap()
    }

    fn worked_example() -> RolloutGroup {
        RolloutGroup::new(
            "w",
            vec![traj(&["S0", "S1"], &[0.0, 1.0]), traj(&["S0", "S2"], &[0.0, 0.0])],
        )
        .unwrap()
    }

    #[test]
    fn returns_examples() {
        assert_eq!(discounted_returns_of(&[0.0, 0.0, 1.0], 0.5), vec![0.25, 0.5, 1.0]);
        assert_eq!(discounted_returns_of(&[0.0, 0.0, 1.0], 1.0), vec![1.0, 1.0, 1.0]);
        assert_eq!(discounted_returns_of(&[-0.3], 0.7), vec![-0.3]);
    }

    #[test]
    fn step_groups_of_worked_example() {
        let g = worked_example();
        let ix = build_step_groups(&g);
        assert_eq!(ix.get(&StateKey::new("S0")).unwrap(), &[(0, 0), (1, 0)]);
        assert_eq!(ix.get(&StateKey::new("S1")).unwrap().len(), 1);
        assert_eq!(ix.get(&StateKey::new("S2")).unwrap().len(), 1);
        assert_eq!(ix.total_members(), g.total_steps());

        let distinct = RolloutGroup::new("d", vec![traj(&["a", "b"], &[0.0, 0.0]), traj(&["c"], &[1.0])]).unwrap();
        assert!(build_step_groups(&distinct).sizes().all(|s| s == 1));
    }

    #[test]
    fn worked_example_pipeline() {
        let g = worked_example();
        let ix = build_step_groups(&g);
        let returns: Vec<_> = g.trajectories.iter().map(|t| discounted_returns(t, 1.0)).collect();
        assert_eq!(returns, vec![vec![1.0, 1.0], vec![0.0, 0.0]]);
        let v = grouped_value_proxy(&ix, &returns);
        assert_eq!(v[&StateKey::new("S0")], 0.5);
        assert_eq!(v[&StateKey::new("S1")], 1.0);
        assert_eq!(v[&StateKey::new("S2")], 0.0);
        assert_eq!(td_residuals(&g.trajectories[0], &v, 1.0).unwrap(), vec![0.5, 0.0]);
        assert_eq!(td_residuals(&g.trajectories[1], &v, 1.0).unwrap(), vec![-0.5, 0.0]);
        assert_eq!(gae_advantages(&[0.5, 0.0], 1.0, 0.8), vec![0.5, 0.0]);
        assert_eq!(gae_advantages(&[-0.5, 0.0], 1.0, 0.8), vec![-0.5, 0.0]);

        let cfg = CreditConfig {
            gamma: 1.0,
            ..Default::default()
        };
        let mut tables = vec![estimate_advantages(&g, &cfg).unwrap()];
        assert_eq!(tables[0].raw(), vec![0.5, 0.0, -0.5, 0.0]);
        normalize_advantages(&mut tables, NormMode::Group, 1e-8);
        let expect = [2f64.sqrt(), 0.0, -(2f64.sqrt()), 0.0];
        for (a, e) in tables[0].normalized().iter().zip(expect) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-6);
        }
    }

    #[test]
    fn missing_proxy_is_an_error() {
        let t = traj(&["x"], &[1.0]);
        assert!(matches!(td_residuals(&t, &ValueProxy::new(), 0.9), Err(Error::MissingProxy(_))));
    }

    #[test]
    fn bellman_consistent_proxy_has_zero_residuals() {
        let t = traj(&["a", "b", "c", "d"], &[0.1, -0.2, 0.0, 1.0]);
        let gamma = 0.9;
        let r = discounted_returns(&t, gamma);
        let proxy: ValueProxy = t.steps.iter().zip(&r).map(|(s, v)| (s.state.clone(), *v)).collect();
        for d in td_residuals(&t, &proxy, gamma).unwrap() {
            assert!(d.abs() < 1e-15);
        }
    }

    #[test]
    fn variant_examples() {
        let g = worked_example();
        let base = CreditConfig { gamma: 1.0, ..Default::default() };
        let mc = estimate_advantages(&g, &CreditConfig { estimator: Estimator::McStep, ..base.clone() }).unwrap();
        assert_eq!(mc.steps[0][0].advantage_raw, 0.5);

        let rloo = estimate_advantages(&g, &CreditConfig { estimator: Estimator::Rloo, ..base.clone() }).unwrap();
        assert_eq!(rloo.raw(), vec![1.0, 1.0, -1.0, -1.0]);

        let td = estimate_advantages(&g, &CreditConfig { estimator: Estimator::TdOnly, ..base.clone() }).unwrap();
        let l0 = estimate_advantages(&g, &CreditConfig { lambda: 0.0, ..base.clone() }).unwrap();
        assert_eq!(td, l0);

        let grpo = estimate_advantages(&g, &CreditConfig { estimator: Estimator::GrpoTraj, norm_epsilon: 0.0, ..base.clone() }).unwrap();
        assert_eq!(grpo.raw(), vec![1.0, 1.0, -1.0, -1.0]);

        let bc = estimate_advantages(
            &g,
            &CreditConfig { estimator: Estimator::TrajBroadcast, norm_epsilon: 0.0, broadcast_weight: 0.5, ..base.clone() },
        )
        .unwrap();
        assert_eq!(bc.raw(), vec![1.0, 0.5, -1.0, -0.5]);

        let single = RolloutGroup::new("s", vec![traj(&["a"], &[1.0])]).unwrap();
        for e in [Estimator::Rloo, Estimator::GrpoTraj, Estimator::TrajBroadcast] {
            let cfg = CreditConfig { estimator: e, ..base.clone() };
            assert!(matches!(estimate_advantages(&single, &cfg), Err(Error::GroupTooSmall { .. })));
        }
        assert!(estimate_advantages(&single, &base).is_ok());
    }

    #[test]
    fn identical_trajectories_carry_no_contrast() {
        let t = traj(&["a", "b", "c"], &[0.0, 0.0, 1.0]);
        let g = RolloutGroup::new("same", vec![t.clone(), t.clone(), t]).unwrap();
        let cfg = CreditConfig { gamma: 1.0, ..Default::default() };
        let mut tables = vec![estimate_advantages(&g, &cfg).unwrap()];
        assert!(tables[0].raw().iter().all(|a| *a == 0.0));
        normalize_advantages(&mut tables, NormMode::Group, 1e-8);
        assert!(tables[0].normalized().iter().all(|a| *a == 0.0));
    }

    #[test]
    fn normalization_modes() {
        let g1 = worked_example();
        let g2 = RolloutGroup::new("b", vec![traj(&["x", "y"], &[0.0, 3.0]), traj(&["x"], &[0.0])]).unwrap();
        let cfg = CreditConfig { gamma: 1.0, ..Default::default() };
        let raw = vec![estimate_advantages(&g1, &cfg).unwrap(), estimate_advantages(&g2, &cfg).unwrap()];

        let mut none = raw.clone();
        normalize_advantages(&mut none, NormMode::None, 1e-8);
        for t in &none {
            assert_eq!(t.raw(), t.normalized());
        }

        let mut batch = raw.clone();
        normalize_advantages(&mut batch, NormMode::Batch, 0.0);
        let all: Vec<f64> = batch.iter().flat_map(|t| t.normalized()).collect();
        let (m, s) = mean_and_std(&all);
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn statistics_examples() {
        let s = advantage_statistics(&[-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.iqr, 2.0);
        assert_eq!(s.frac_abs_gt_1, 0.4);
        assert_eq!(s.mean, 0.0);
        let c = advantage_statistics(&[0.7; 9]).unwrap();
        assert_eq!((c.iqr, c.frac_abs_gt_1), (0.0, 0.0));
        assert!(advantage_statistics(&[]).is_err());
        // interpolation between ranks: [1,2,3,4] → q25 = 1.75, q75 = 3.25
        assert_eq!(advantage_statistics(&[4.0, 1.0, 3.0, 2.0]).unwrap().iqr, 1.5);
    }

    #[test]
    fn group_size_examples() {
        let s = group_size_statistics_from_sizes([2, 2]).unwrap();
        assert_eq!((s.mean_size, s.pct_size_1, s.pct_size_le_8, s.pct_size_ge_16), (2.0, 0.0, 100.0, 0.0));
        let s = group_size_statistics_from_sizes([1, 1, 1]).unwrap();
        assert_eq!(s.pct_size_1, 100.0);
        // one group of 16, one singleton: mean = (256 + 1) / 17
        let s = group_size_statistics_from_sizes([16, 1]).unwrap();
        assert_eq!(s.mean_size, 257.0 / 17.0);
        assert_eq!(s.pct_size_ge_16, 100.0 * 16.0 / 17.0);
        assert!(group_size_statistics_from_sizes([]).is_err());
    }

    #[test]
    fn dump_statistics_match_direct_computation() {
        let g = vec![worked_example(), RolloutGroup::new("b", vec![traj(&["S0", "y"], &[0.0, 3.0]), traj(&["S0"], &[0.0])]).unwrap()];
        let cfg = CreditConfig::default();
        let mut tables: Vec<_> = g.iter().map(|x| estimate_advantages(x, &cfg).unwrap()).collect();
        normalize_advantages(&mut tables, NormMode::Group, 1e-8);
        let mut buf = Vec::new();
        write_advantage_dump(&mut buf, 3, &g, &tables).unwrap();
        let recs = read_advantage_dump(buf.as_slice()).unwrap();
        assert_eq!(recs.len(), 7);
        let stats = dump_statistics(&recs).unwrap();
        let direct: Vec<f64> = tables.iter().flat_map(|t| t.normalized()).collect();
        assert_eq!(stats.advantages, advantage_statistics(&direct).unwrap());
        let ix: Vec<_> = g.iter().map(build_step_groups).collect();
        assert_eq!(stats.group_sizes, group_size_statistics(&ix).unwrap());
        assert_eq!(stats.step, 3);
        assert!(read_advantage_dump("".as_bytes()).is_err());
        assert!(read_advantage_dump("{\"step\":1}".as_bytes()).is_err());
    }
}

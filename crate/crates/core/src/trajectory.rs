//! Rollout data: state keys, token-sequence actions, trajectories and rollout
//! groups, plus the JSON-lines trajectory dump.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a fixed vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u32);

impl Token {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Canonical textual state used for step grouping. Two keys are equal iff
/// their texts are byte-identical.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateKey(String);

impl StateKey {
    pub fn new(text: impl Into<String>) -> Self {
        StateKey(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Maps an environment observation to its grouping key. No normalization of
/// any kind is applied.
pub fn canonical_state_key(observation: &str) -> StateKey {
    StateKey(observation.to_owned())
}

/// A non-empty token sequence emitted in one environment step.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action {
    tokens: Vec<Token>,
}

impl Action {
    /// Builds an action, checking `1 <= len <= max_len`.
    pub fn new(tokens: Vec<Token>, max_len: usize) -> Result<Self> {
        if tokens.is_empty() || tokens.len() > max_len {
            return Err(Error::Invalid(format!(
                "action length {} outside 1..={max_len}",
                tokens.len()
            )));
        }
        Ok(Action { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: StateKey,
    pub action: Action,
    pub reward: f64,
    /// Per-token log-probabilities under the sampling policy.
    pub token_logprobs_old: Vec<f64>,
}

impl Step {
    pub fn new(
        state: StateKey,
        action: Action,
        reward: f64,
        token_logprobs_old: Vec<f64>,
    ) -> Result<Self> {
        if token_logprobs_old.len() != action.len() {
            return Err(Error::LengthMismatch {
                left: token_logprobs_old.len(),
                right: action.len(),
            });
        }
        if let Some(lp) = token_logprobs_old.iter().find(|lp| !(**lp <= 0.0)) {
            return Err(Error::Invalid(format!("log-probability {lp} is not <= 0")));
        }
        if !reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        Ok(Step {
            state,
            action,
            reward,
            token_logprobs_old,
        })
    }
}

/// How an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Success,
    /// The task ended on the agent's own terminal action without full success
    /// (an imperfect purchase in the shopping environment).
    Completed,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub terminated_by: Termination,
}

impl Trajectory {
    pub fn new(steps: Vec<Step>, terminated_by: Termination) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Invalid("trajectory has no steps".into()));
        }
        Ok(Trajectory {
            steps,
            terminated_by,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    /// Undiscounted sum of rewards.
    pub fn episode_return(&self) -> f64 {
        self.rewards().sum()
    }

    /// Final-step reward; the task score in partial-credit environments.
    pub fn terminal_reward(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.reward)
    }

    pub fn total_tokens(&self) -> usize {
        self.steps.iter().map(|s| s.action.len()).sum()
    }

    pub fn succeeded(&self) -> bool {
        self.terminated_by == Termination::Success
    }
}

/// K trajectories sampled for one task instance.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutGroup {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
}

impl RolloutGroup {
    pub fn new(task_id: impl Into<String>, trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Invalid("rollout group is empty".into()));
        }
        Ok(RolloutGroup {
            task_id: task_id.into(),
            trajectories,
        })
    }

    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    state: String,
    action_token_ids: Vec<u32>,
    reward: f64,
    token_logprobs_old: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    task_id: String,
    trajectory_index: usize,
    steps: Vec<StepRecord>,
    terminated_by: Termination,
}

/// Writes one JSON object per trajectory.
pub fn write_rollout_dump<W: Write>(mut out: W, groups: &[RolloutGroup]) -> Result<()> {
    for group in groups {
        for (index, traj) in group.trajectories.iter().enumerate() {
            let record = TrajectoryRecord {
                task_id: group.task_id.clone(),
                trajectory_index: index,
                steps: traj
                    .steps
                    .iter()
                    .map(|s| StepRecord {
                        state: s.state.as_str().to_owned(),
                        action_token_ids: s.action.tokens().iter().map(|t| t.0).collect(),
                        reward: s.reward,
                        token_logprobs_old: s.token_logprobs_old.clone(),
                    })
                    .collect(),
                terminated_by: traj.terminated_by,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Reads a trajectory dump back into rollout groups. Consecutive records with
/// the same task id and increasing trajectory index form one group.
pub fn read_rollout_dump<R: BufRead>(input: R) -> Result<Vec<RolloutGroup>> {
    let mut groups: Vec<RolloutGroup> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format("trajectory dump", format!("line {}: {e}", lineno + 1)))?;
        let steps = record
            .steps
            .into_iter()
            .map(|s| {
                let action = Action::new(
                    s.action_token_ids.into_iter().map(Token).collect(),
                    usize::MAX,
                )?;
                Step::new(StateKey(s.state), action, s.reward, s.token_logprobs_old)
            })
            .collect::<Result<Vec<_>>>()?;
        let traj = Trajectory::new(steps, record.terminated_by)?;
        match groups.last_mut() {
            Some(g) if g.task_id == record.task_id && record.trajectory_index == g.size() => {
                g.trajectories.push(traj)
            }
            _ if record.trajectory_index == 0 => {
                groups.push(RolloutGroup::new(record.task_id, vec![traj])?)
            }
            _ => {
                return Err(Error::format(
                    "trajectory dump",
                    format!(
                        "line {}: trajectory index {} out of sequence",
                        lineno + 1,
                        record.trajectory_index
                    ),
                ))
            }
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn state_key_is_identity_on_text() {
        let key = canonical_state_key("room: A, key: no");
        assert_eq!(key.as_str(), "room: A, key: no");
        assert_eq!(canonical_state_key("abc"), canonical_state_key("abc"));
        assert_ne!(canonical_state_key("abc"), canonical_state_key("abd"));
        // no whitespace folding
        assert_ne!(canonical_state_key("a b"), canonical_state_key("a  b"));
    }

    #[test]
    fn action_length_bounds() {
        assert!(Action::new(vec![], 3).is_err());
        assert!(Action::new(vec![Token(1); 4], 3).is_err());
        assert_eq!(Action::new(vec![Token(1); 3], 3).unwrap().len(), 3);
    }

    #[test]
    fn step_checks_logprobs() {
        let a = Action::new(vec![Token(0), Token(1)], 2).unwrap();
        let s = StateKey::new("s");
        assert!(Step::new(s.clone(), a.clone(), 0.0, vec![-0.1]).is_err());
        assert!(Step::new(s.clone(), a.clone(), 0.0, vec![-0.1, 0.2]).is_err());
        assert!(Step::new(s.clone(), a.clone(), 0.0, vec![-0.1, f64::NAN]).is_err());
        assert!(Step::new(s, a, 0.0, vec![-0.1, 0.0]).is_ok());
    }

    #[test]
    fn out_of_sequence_dump_is_rejected() {
        let line = r#"{"task_id":"t","trajectory_index":1,"steps":[{"state":"s","action_token_ids":[2],"reward":0.0,"token_logprobs_old":[-1.0]}],"terminated_by":"success"}"#;
        assert!(read_rollout_dump(line.as_bytes()).is_err());
        assert!(read_rollout_dump("{not json".as_bytes()).is_err());
    }

    fn arb_step() -> impl Strategy<Value = Step> {
        (
            "[a-z |:]{0,12}",
            prop::collection::vec((0u32..50, -30.0f64..=0.0), 1..5),
            -2.0f64..2.0,
        )
            .prop_map(|(state, toks, reward)| {
                let (ids, lps): (Vec<_>, Vec<_>) = toks.into_iter().unzip();
                Step::new(
                    StateKey::new(state),
                    Action::new(ids.into_iter().map(Token).collect(), 8).unwrap(),
                    reward,
                    lps,
                )
                .unwrap()
            })
    }

    fn arb_group() -> impl Strategy<Value = RolloutGroup> {
        let traj = (
            prop::collection::vec(arb_step(), 1..6),
            prop_oneof![
                Just(Termination::Success),
                Just(Termination::Completed),
                Just(Termination::BudgetExhausted)
            ],
        )
            .prop_map(|(steps, term)| Trajectory::new(steps, term).unwrap());
        ("[a-z0-9:]{1,8}", prop::collection::vec(traj, 1..5))
            .prop_map(|(id, trajs)| RolloutGroup::new(id, trajs).unwrap())
    }

    proptest! {
        #[test]
        fn dump_round_trip_is_exact(groups in prop::collection::vec(arb_group(), 1..4)) {
            let mut buf = Vec::new();
            write_rollout_dump(&mut buf, &groups).unwrap();
            let back = read_rollout_dump(buf.as_slice()).unwrap();
            prop_assert_eq!(&groups, &back);
            for g in &back {
                for t in &g.trajectories {
                    let lps: usize = t.steps.iter().map(|s| s.token_logprobs_old.len()).sum();
                    prop_assert_eq!(lps, t.total_tokens());
                }
            }
        }
    }
}

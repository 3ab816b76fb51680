//! N-node chain: start at node 0, reach node N-1. Moving left at node 0 is a
//! legal no-op.

use super::{EnvConfig, Outcome, World};
use crate::trajectory::Termination;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(super) struct ChainWorld {
    length: usize,
    position: usize,
}

pub(super) fn vocab_words(config: &EnvConfig) -> Vec<String> {
    let mut words: Vec<String> = ["left", "right", "reach", "|", "at", "invalid"]
        .into_iter()
        .map(String::from)
        .collect();
    words.extend((0..config.chain_length).map(node_word));
    words
}

fn node_word(i: usize) -> String {
    format!("n{i}")
}

impl ChainWorld {
    pub(super) fn new(config: &EnvConfig) -> Self {
        ChainWorld {
            length: config.chain_length,
            position: 0,
        }
    }

    pub(super) fn observe(&self) -> String {
        format!(
            "reach {} | at {}",
            node_word(self.length - 1),
            node_word(self.position)
        )
    }

    pub(super) fn commands(&self) -> Vec<String> {
        vec!["left".into(), "right".into()]
    }

    pub(super) fn apply(&self, command: &str) -> Outcome {
        let position = match command {
            "left" => self.position.saturating_sub(1),
            "right" => self.position + 1,
            other => unreachable!("illegal chain command {other:?}"),
        };
        let world = ChainWorld {
            length: self.length,
            position,
        };
        let goal = position == self.length - 1;
        Outcome {
            world: World::Chain(world),
            reward: if goal { 1.0 } else { 0.0 },
            terminal: goal.then_some(Termination::Success),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::env::{EnvConfig, EnvName, Environment};

    #[test]
    fn actions_are_left_and_right() {
        let e = Environment::new(EnvConfig::new(EnvName::Chain)).unwrap();
        let s = e.reset(0);
        assert_eq!(e.legal_action_texts(&s), vec!["left", "right"]);
        assert_eq!(s.observation().as_str(), "reach n9 | at n0");
        let right = e.encode_action("right").unwrap();
        assert_eq!(right.len(), 1);
        let mut s = s;
        for i in 1..10 {
            let tr = e.step(&s, &right).unwrap();
            assert_eq!(tr.done, i == 9);
            assert_eq!(tr.reward, if i == 9 { 1.0 } else { 0.0 });
            s = tr.state;
        }
        assert!(s.success());
    }
}

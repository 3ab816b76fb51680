//! Deterministic text environments with sparse, delayed rewards and
//! token-sequence actions.
//!
//! Every environment shares the same outer contract:
//! * non-terminal valid steps pay exactly 0;
//! * an action that does not parse to a legal command pays
//!   `-invalid_action_penalty`, leaves the world unchanged and appends
//!   [`INVALID_NOTICE`] to the observation;
//! * the episode ends on a terminal command or when the interaction budget
//!   is used up (invalid actions count against the budget).

mod chain;
mod keydoor;
mod minishop;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use vocab::{Vocab, EOA, UNK};

use crate::error::{Error, Result};
use crate::trajectory::{canonical_state_key, Action, StateKey, Termination, Token};

/// Appended to the observation after an invalid action.
pub const INVALID_NOTICE: &str = "| invalid";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    Chain,
    KeyDoor,
    MiniShop,
}

impl EnvName {
    pub fn default_budget(self) -> usize {
        match self {
            EnvName::Chain => 15,
            EnvName::KeyDoor => 50,
            EnvName::MiniShop => 15,
        }
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(EnvName::Chain),
            "keydoor" => Ok(EnvName::KeyDoor),
            "minishop" => Ok(EnvName::MiniShop),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected chain, keydoor or minishop)"
            ))),
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvName::Chain => "chain",
            EnvName::KeyDoor => "keydoor",
            EnvName::MiniShop => "minishop",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub name: EnvName,
    pub interaction_budget: usize,
    pub invalid_action_penalty: f64,
    /// Side length of the key-door grid.
    pub grid_size: usize,
    /// Number of nodes in the chain.
    pub chain_length: usize,
    /// Catalog items per product type in the shop.
    pub items_per_type: usize,
}

impl EnvConfig {
    pub fn new(name: EnvName) -> Self {
        EnvConfig {
            name,
            interaction_budget: name.default_budget(),
            invalid_action_penalty: 0.1,
            grid_size: 4,
            chain_length: 10,
            items_per_type: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.interaction_budget < 2 {
            return Err(Error::Config("env.budget must be >= 2".into()));
        }
        if !(self.invalid_action_penalty >= 0.0 && self.invalid_action_penalty.is_finite()) {
            return Err(Error::Config("env.invalid_penalty must be >= 0".into()));
        }
        if !(2..=9).contains(&self.grid_size) {
            return Err(Error::Config("env.grid_size must be in 2..=9".into()));
        }
        if self.chain_length < 2 {
            return Err(Error::Config("env.chain_length must be >= 2".into()));
        }
        if !(1..=minishop::MAX_ITEMS_PER_TYPE).contains(&self.items_per_type) {
            return Err(Error::Config(format!(
                "env.items_per_type must be in 1..={}",
                minishop::MAX_ITEMS_PER_TYPE
            )));
        }
        Ok(())
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::new(EnvName::KeyDoor)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum World {
    Chain(chain::ChainWorld),
    KeyDoor(keydoor::KeyDoorWorld),
    MiniShop(minishop::ShopWorld),
}

/// Result of applying a legal command.
struct Outcome {
    world: World,
    reward: f64,
    terminal: Option<Termination>,
}

impl World {
    fn observe(&self) -> String {
        match self {
            World::Chain(w) => w.observe(),
            World::KeyDoor(w) => w.observe(),
            World::MiniShop(w) => w.observe(),
        }
    }

    fn commands(&self) -> Vec<String> {
        match self {
            World::Chain(w) => w.commands(),
            World::KeyDoor(w) => w.commands(),
            World::MiniShop(w) => w.commands(),
        }
    }

    /// Well-formed commands. Those outside [`World::commands`] are no-ops.
    fn accepts(&self, command: &str) -> bool {
        match self {
            World::KeyDoor(_) => keydoor::COMMANDS.contains(&command),
            _ => self.commands().iter().any(|c| c == command),
        }
    }

    /// `command` must satisfy [`World::accepts`].
    fn apply(&self, command: &str) -> Outcome {
        match self {
            World::Chain(w) => w.apply(command),
            World::KeyDoor(w) => w.apply(command),
            World::MiniShop(w) => w.apply(command),
        }
    }
}

/// Snapshot of one episode in progress.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    world: World,
    observation: StateKey,
    steps_taken: usize,
    done: bool,
    termination: Option<Termination>,
}

impl EnvState {
    pub fn observation(&self) -> &StateKey {
        &self.observation
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn success(&self) -> bool {
        self.termination == Some(Termination::Success)
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    /// Interaction steps consumed so far.
    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

/// An environment definition: configuration plus its token vocabulary.
#[derive(Clone, Debug)]
pub struct Environment {
    config: EnvConfig,
    vocab: Vocab,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::from_words(vocab_words(&config).iter().map(String::as_str));
        Ok(Environment { config, vocab })
    }

    /// Uses an externally supplied vocabulary, which must contain every word
    /// the environment can emit or accept.
    pub fn with_vocab(config: EnvConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if let Some(missing) = vocab_words(&config).iter().find(|w| !vocab.contains(w)) {
            return Err(Error::Config(format!(
                "vocabulary lacks token {missing:?} required by {}",
                config.name
            )));
        }
        Ok(Environment { config, vocab })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn budget(&self) -> usize {
        self.config.interaction_budget
    }

    /// Maximum action length `n` in tokens, including a trailing `<eoa>`.
    pub fn max_action_len(&self) -> usize {
        match self.config.name {
            EnvName::Chain => 1,
            EnvName::KeyDoor | EnvName::MiniShop => 2,
        }
    }

    pub fn reset(&self, task_seed: u64) -> EnvState {
        let world = match self.config.name {
            EnvName::Chain => World::Chain(chain::ChainWorld::new(&self.config)),
            EnvName::KeyDoor => World::KeyDoor(keydoor::KeyDoorWorld::new(&self.config, task_seed)),
            EnvName::MiniShop => {
                World::MiniShop(minishop::ShopWorld::new(&self.config, task_seed))
            }
        };
        EnvState {
            observation: canonical_state_key(&world.observe()),
            world,
            steps_taken: 0,
            done: false,
            termination: None,
        }
    }

    /// Turns a token sequence into command text. `None` when the sequence
    /// contains `<unk>`, or `<eoa>` anywhere but the last position.
    fn decode(&self, action: &Action) -> Option<String> {
        let mut tokens = action.tokens();
        if tokens.last() == Some(&self.vocab.eoa()) {
            tokens = &tokens[..tokens.len() - 1];
        }
        if tokens.is_empty() {
            return None;
        }
        let mut words = Vec::with_capacity(tokens.len());
        for &t in tokens {
            if t == self.vocab.eoa() || t == self.vocab.unk() {
                return None;
            }
            words.push(self.vocab.word(t)?);
        }
        Some(words.join(" "))
    }

    pub fn step(&self, state: &EnvState, action: &Action) -> Result<Transition> {
        if state.done {
            return Err(Error::EpisodeFinished);
        }
        let steps_taken = state.steps_taken + 1;
        let command = self
            .decode(action)
            .filter(|c| state.world.accepts(c));
        let (world, reward, terminal, observation) = match command {
            Some(c) => {
                let out = state.world.apply(&c);
                let obs = out.world.observe();
                (out.world, out.reward, out.terminal, obs)
            }
            None => {
                let obs = format!("{} {INVALID_NOTICE}", state.world.observe());
                (
                    state.world.clone(),
                    -self.config.invalid_action_penalty,
                    None,
                    obs,
                )
            }
        };
        let termination = terminal.or_else(|| {
            (steps_taken >= self.config.interaction_budget).then_some(Termination::BudgetExhausted)
        });
        let done = termination.is_some();
        Ok(Transition {
            state: EnvState {
                world,
                observation: canonical_state_key(&observation),
                steps_taken,
                done,
                termination,
            },
            reward,
            done,
        })
    }

    /// Commands that change the world in `state`, e.g. `"go north"`.
    pub fn legal_action_texts(&self, state: &EnvState) -> Vec<String> {
        if state.done {
            return Vec::new();
        }
        state.world.commands()
    }

    /// Legal actions as the token sequences a policy would emit them.
    pub fn legal_actions(&self, state: &EnvState) -> Vec<Action> {
        self.legal_action_texts(state)
            .iter()
            .map(|t| self.encode_action(t).expect("legal commands are in the vocabulary"))
            .collect()
    }

    /// Encodes command text, appending `<eoa>` when shorter than the maximum
    /// action length.
    pub fn encode_action(&self, text: &str) -> Result<Action> {
        let mut tokens = Vec::new();
        for w in text.split_whitespace() {
            tokens.push(
                self.vocab
                    .get(w)
                    .ok_or_else(|| Error::Invalid(format!("word {w:?} not in vocabulary")))?,
            );
        }
        if tokens.len() < self.max_action_len() {
            tokens.push(self.vocab.eoa());
        }
        Action::new(tokens, self.max_action_len())
    }

    pub fn action_text(&self, action: &Action) -> String {
        action
            .tokens()
            .iter()
            .map(|&t: &Token| self.vocab.word(t).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn vocab_words(config: &EnvConfig) -> Vec<String> {
    match config.name {
        EnvName::Chain => chain::vocab_words(config),
        EnvName::KeyDoor => keydoor::vocab_words(),
        EnvName::MiniShop => minishop::vocab_words(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn env(name: EnvName) -> Environment {
        Environment::new(EnvConfig::new(name)).unwrap()
    }

    #[test]
    fn unknown_env_name() {
        assert!("gridworld".parse::<EnvName>().is_err());
        assert_eq!("minishop".parse::<EnvName>().unwrap(), EnvName::MiniShop);
    }

    #[test]
    fn reset_is_deterministic() {
        for name in [EnvName::Chain, EnvName::KeyDoor, EnvName::MiniShop] {
            let e = env(name);
            assert_eq!(e.reset(0), e.reset(0));
        }
        let e = env(EnvName::KeyDoor);
        let distinct: std::collections::HashSet<_> =
            (0..20).map(|s| e.reset(s).observation().clone()).collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn gibberish_action_is_penalized() {
        for name in [EnvName::Chain, EnvName::KeyDoor, EnvName::MiniShop] {
            let e = env(name);
            let s0 = e.reset(3);
            let junk = Action::new(vec![e.vocab().unk(); e.max_action_len()], 2).unwrap();
            let tr = e.step(&s0, &junk).unwrap();
            assert_eq!(tr.reward, -0.1);
            assert!(!tr.done);
            assert_eq!(
                tr.state.observation().as_str(),
                format!("{} {INVALID_NOTICE}", s0.observation())
            );
            assert_eq!(tr.state.world, s0.world);
            // A second invalid action keeps the same observation.
            let tr2 = e.step(&tr.state, &junk).unwrap();
            assert_eq!(tr2.state.observation(), tr.state.observation());
        }
    }

    #[test]
    fn eoa_only_in_final_position() {
        let e = env(EnvName::KeyDoor);
        let s0 = e.reset(0);
        let legal = e.legal_actions(&s0);
        let eoa = e.vocab().eoa();
        let bad = Action::new(vec![eoa, legal[0].tokens()[0]], 2).unwrap();
        assert!(e.step(&s0, &bad).unwrap().reward < 0.0);
        let only = Action::new(vec![eoa], 2).unwrap();
        assert!(e.step(&s0, &only).unwrap().reward < 0.0);
    }

    #[test]
    fn step_after_done_fails() {
        let e = Environment::new(EnvConfig {
            interaction_budget: 2,
            ..EnvConfig::new(EnvName::Chain)
        })
        .unwrap();
        let left = e.encode_action("left").unwrap();
        let s1 = e.step(&e.reset(0), &left).unwrap().state;
        let t2 = e.step(&s1, &left).unwrap();
        assert!(t2.done);
        assert_eq!(t2.state.termination(), Some(Termination::BudgetExhausted));
        assert!(matches!(e.step(&t2.state, &left), Err(Error::EpisodeFinished)));
        assert!(e.legal_action_texts(&t2.state).is_empty());
    }

    #[test]
    fn every_legal_action_is_valid_and_rewards_are_sparse() {
        for name in [EnvName::Chain, EnvName::KeyDoor, EnvName::MiniShop] {
            let e = env(name);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for seed in 0..30 {
                let mut s = e.reset(seed);
                while !s.done() {
                    let legal = e.legal_actions(&s);
                    assert!(!legal.is_empty());
                    for a in &legal {
                        let tr = e.step(&s, a).unwrap();
                        assert!(!tr.state.observation().as_str().ends_with(INVALID_NOTICE));
                        if tr.state.termination() != Some(Termination::Success)
                            && tr.state.termination() != Some(Termination::Completed)
                        {
                            assert_eq!(tr.reward, 0.0);
                        } else {
                            assert!(tr.reward >= 0.0 && tr.reward <= 1.0);
                        }
                    }
                    let a = &legal[rng.gen_range(0..legal.len())];
                    let tr = e.step(&s, a).unwrap();
                    assert!(tr.state.steps_taken() <= e.budget());
                    if tr.state.success() && name != EnvName::MiniShop {
                        assert_eq!(tr.reward, 1.0);
                    }
                    s = tr.state;
                }
            }
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let e = env(EnvName::MiniShop);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let script: Vec<Action> = (0..15)
            .map(|_| {
                let n = e.vocab().len() as u32;
                Action::new(
                    vec![Token(rng.gen_range(0..n)), Token(rng.gen_range(0..n))],
                    2,
                )
                .unwrap()
            })
            .collect();
        let run = || {
            let mut s = e.reset(9);
            let mut out = vec![];
            for a in &script {
                if s.done() {
                    break;
                }
                let tr = e.step(&s, a).unwrap();
                out.push((tr.state.observation().clone(), tr.reward.to_bits()));
                s = tr.state;
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn external_vocab_must_cover_env() {
        let e = env(EnvName::KeyDoor);
        assert!(Environment::with_vocab(e.config().clone(), e.vocab().clone()).is_ok());
        let small = Vocab::from_words(["go", "north"]);
        assert!(Environment::with_vocab(e.config().clone(), small).is_err());
    }
}

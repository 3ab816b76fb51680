//! Plays one episode of each environment and prints the transcript, then
//! scores scripted and random agents over many tasks.
//!
//!     cargo run --example play_environments

use gagpo::env::{EnvConfig, EnvName, Environment};
use gagpo::harness::{evaluate, RandomLegalAgent, ScriptedKeyDoorAgent};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gagpo::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for name in [EnvName::Chain, EnvName::KeyDoor, EnvName::MiniShop] {
        let env = Environment::new(EnvConfig::new(name))?;
        println!("== {name} (budget {}, vocabulary {})", env.budget(), env.vocab().len());
        let mut state = env.reset(3);
        while !state.done() {
            let command = match env.keydoor_optimal_script(&state) {
                Some(script) => script[0].clone(),
                None => env.legal_action_texts(&state).choose(&mut rng).cloned().expect("legal move"),
            };
            let tr = env.step(&state, &env.encode_action(&command)?)?;
            println!("  {:<50} > {command:<16} reward {:+.2}", state.observation().as_str(), tr.reward);
            state = tr.state;
        }
        println!("  ended: {:?} after {} steps\n", state.termination(), state.steps_taken());
    }

    let seeds: Vec<u64> = (0..1000).collect();
    for name in [EnvName::Chain, EnvName::KeyDoor, EnvName::MiniShop] {
        let env = Environment::new(EnvConfig::new(name))?;
        let random = evaluate(&env, &mut RandomLegalAgent { rng: ChaCha8Rng::seed_from_u64(1) }, &seeds)?;
        println!(
            "{name:<9} random legal agent: success {:.3}  score {:.3}  length {:.1}",
            random.success_rate, random.mean_score, random.mean_episode_length
        );
    }
    let env = Environment::new(EnvConfig::new(EnvName::KeyDoor))?;
    let scripted = evaluate(&env, &mut ScriptedKeyDoorAgent, &seeds)?;
    println!(
        "keydoor   scripted agent:     success {:.3}  length {:.2}",
        scripted.success_rate, scripted.mean_episode_length
    );
    Ok(())
}

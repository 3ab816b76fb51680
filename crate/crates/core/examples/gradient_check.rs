//! Compares the analytic gradient of the clipped, KL-regularized loss with
//! central finite differences on a batch of random actions.
//!
//!     cargo run --release --example gradient_check -- [coordinates]

use gagpo::env::{EnvConfig, EnvName, Environment};
use gagpo::harness::{initial_policy, TrainConfig};
use gagpo::optim::{loss_and_gradients, loss_value, OptimConfig, RatioMode, UpdateBatch};
use gagpo::policy::step_features;
use gagpo::trajectory::{Action, Token};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gagpo::Result<()> {
    let coords: usize = std::env::args().nth(1).map_or(Ok(20), |s| s.parse()).expect("coordinates");
    let env = Environment::new(EnvConfig::new(EnvName::MiniShop))?;
    let policy = initial_policy(&TrainConfig::default(), &env);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut reference = policy.clone();
    for t in reference.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
    }

    let mut batch = UpdateBatch::new(policy.feature_dim());
    for i in 0..32u64 {
        let state = env.reset(i);
        let f = step_features(env.vocab(), state.observation(), (i % 5) as usize, env.budget());
        let len = rng.gen_range(1..=env.max_action_len());
        let tokens = (0..len).map(|_| Token(rng.gen_range(0..env.vocab().len() as u32))).collect();
        let action = Action::new(tokens, env.max_action_len())?;
        let shift = rng.gen_range(-0.4..0.4);
        let old: Vec<f64> = policy.action_token_logprobs(&f, &action)?.iter().map(|lp| lp - shift).collect();
        batch.push(&f, &action, &old, rng.gen_range(-2.0..2.0))?;
    }
    batch.score_reference(&reference)?;

    for mode in [RatioMode::Sequence, RatioMode::Token] {
        let config = OptimConfig {
            ratio_mode: mode,
            ..OptimConfig::default()
        };
        let (report, grads) = loss_and_gradients(&policy, &batch, &config)?;
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut checked = 0;
        while checked < coords {
            let ti = rng.gen_range(0..grads.len());
            let j = rng.gen_range(0..grads[ti].len());
            let analytic = grads[ti].data()[j];
            if analytic == 0.0 {
                continue;
            }
            let mut plus = policy.clone();
            plus.tensors_mut()[ti].data_mut()[j] += h;
            let mut minus = policy.clone();
            minus.tensors_mut()[ti].data_mut()[j] -= h;
            let numeric = (loss_value(&plus, &batch, &config)?.loss - loss_value(&minus, &batch, &config)?.loss) / (2.0 * h);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
            checked += 1;
        }
        println!(
            "{:<8} loss {:+.5}  clipped {:.2}  max relative error {worst:.2e} over {coords} coordinates",
            mode.as_str(),
            report.loss,
            report.clipped_fraction
        );
    }
    Ok(())
}

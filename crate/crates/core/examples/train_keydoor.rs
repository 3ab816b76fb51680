//! Trains the default configuration on the 4x4 key-door grid and prints the
//! greedy evaluation curve.
//!
//!     cargo run --release --example train_keydoor -- [seed] [steps]

use std::time::Instant;

use gagpo::harness::{TrainConfig, Trainer};

fn main() -> gagpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(Ok(0), |s| s.parse()).expect("seed");
    let steps: u64 = args.next().map_or(Ok(200), |s| s.parse()).expect("steps");
    let config = TrainConfig {
        seed,
        total_steps: steps,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config)?;
    let start = Instant::now();
    for _ in 0..steps {
        let m = trainer.train_step()?.metrics;
        if let Some(e) = m.eval {
            println!(
                "step {:>4}  eval success {:.3}  rollout success {:.3}  len {:>5.1}  entropy {:.3}  |g| {:.3}  group size {:.1}",
                m.step,
                e.success_rate,
                m.rollout.success_rate,
                m.rollout.mean_episode_length,
                m.entropy,
                m.update.gradient_norm,
                m.group_sizes.mean_size
            );
        }
    }
    let e = trainer.evaluate()?;
    println!(
        "final  eval success {:.3}  after {} updates in {:.1?}",
        e.success_rate,
        trainer.step(),
        start.elapsed()
    );
    Ok(())
}

//! Trains on the shopping task, where a purchase earns partial credit for
//! the attributes it matches, and prints greedy score and success.
//!
//!     cargo run --release --example train_minishop -- [seed] [steps] [key=value ...]

use gagpo::config::parse_config;

fn main() -> gagpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().unwrap_or_else(|| "0".into());
    let steps = args.next().unwrap_or_else(|| "160".into());
    let mut overrides = vec![
        "env.name=minishop".to_string(),
        format!("train.seed={seed}"),
        format!("train.total_steps={steps}"),
        "train.dump_every=0".to_string(),
    ];
    overrides.extend(args);
    let config = parse_config(None, &overrides)?;
    let summary = gagpo::harness::train_run(&config, None)?;
    for p in &summary.evaluations {
        println!(
            "step {:>4}  score {:.3}  success {:.3}  length {:.1}",
            p.step, p.result.mean_score, p.result.success_rate, p.result.mean_episode_length
        );
    }
    Ok(())
}

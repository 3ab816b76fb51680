//! Writes a run directory, recomputes statistics from its advantage dumps,
//! compares them with the logged metrics, and re-evaluates both checkpoints.
//!
//!     cargo run --release --example run_and_verify -- [dir]

use std::fs::File;
use std::io::BufReader;

use gagpo::credit::{dump_statistics, read_advantage_dump};
use gagpo::env::Environment;
use gagpo::harness::{eval_task_seeds, evaluate, read_metrics, train_run, GreedyAgent, RunArtifacts, TrainConfig};
use gagpo::policy::PolicyParams;

fn main() -> gagpo::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "runs/verify".into());
    let config = TrainConfig {
        total_steps: 40,
        dump_every: 10,
        plot: true,
        ..TrainConfig::default()
    };
    let summary = train_run(&config, Some(dir.as_ref()))?;
    let art = RunArtifacts::new(&dir);
    println!("run {} in {dir}", summary.run_id);

    let metrics = read_metrics(&art.metrics())?;
    for step in (0..config.total_steps).step_by(config.dump_every as usize) {
        let records = read_advantage_dump(BufReader::new(File::open(art.advantage_dump(step))?))?;
        let stats = dump_statistics(&records)?;
        let m = &metrics[step as usize];
        println!(
            "step {step:>3}: {} steps, IQR {:.4}, frac(|A|>1) {:.4}, mean group {:.2}, matches log: {}",
            stats.steps,
            stats.advantages.iqr,
            stats.advantages.frac_abs_gt_1,
            stats.group_sizes.mean_size,
            stats.advantages == m.advantages && stats.group_sizes == m.group_sizes
        );
    }

    let env = Environment::new(config.env.clone())?;
    for (label, path) in [("initial", art.checkpoint_init()), ("final", art.checkpoint_final())] {
        let policy = PolicyParams::read_checkpoint(BufReader::new(File::open(path)?))?;
        let e = evaluate(&env, &mut GreedyAgent { policy: &policy }, &eval_task_seeds(config.eval_episodes))?;
        println!("{label:<8} checkpoint: greedy success {:.3}", e.success_rate);
    }
    println!("final evaluation in summary: {:.3}", summary.final_eval.success_rate);
    Ok(())
}

//! The full method against its six single-knob ablations on paired seeds.
//!
//!     cargo run --release --example ablation -- [steps] [seeds]

use gagpo::harness::{ablation_matrix, write_ablation_csv, TrainConfig};

fn main() -> gagpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map_or(Ok(200), |s| s.parse()).expect("steps");
    let seeds: u64 = args.next().map_or(Ok(3), |s| s.parse()).expect("seeds");
    let base = TrainConfig {
        total_steps: steps,
        eval_every: 0,
        dump_every: 0,
        ..TrainConfig::default()
    };
    let seeds: Vec<u64> = (0..seeds).collect();
    let rows = ablation_matrix(&base, None, &seeds, None)?;
    write_ablation_csv(std::io::stdout().lock(), &rows)
}

//! Runs the (γ, λ) grid and prints the table as CSV.
//!
//!     cargo run --release --example sweep_grid -- [steps] [seeds]

use gagpo::harness::{sweep, write_sweep_csv, TrainConfig};

fn main() -> gagpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map_or(Ok(160), |s| s.parse()).expect("steps");
    let seeds: u64 = args.next().map_or(Ok(3), |s| s.parse()).expect("seeds");
    let base = TrainConfig {
        total_steps: steps,
        eval_every: 0,
        dump_every: 0,
        ..TrainConfig::default()
    };
    let seeds: Vec<u64> = (0..seeds).collect();
    let cells = sweep(&base, &[0.8, 0.95, 1.0], &[0.6, 0.7, 0.8, 1.0], &seeds, None)?;
    write_sweep_csv(std::io::stdout().lock(), &cells)
}

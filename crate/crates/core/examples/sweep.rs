//! A short multi-seed sweep with success/failure partition and quartile curves.
//!
//!     cargo run --release --example sweep -- [seeds] [episodes]

use fbff::envs::EnvKind;
use fbff::harness::{run_sweep, RunConfig, CARTPOLE_SUCCESS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let mut cfg = RunConfig::new(EnvKind::CartPole);
    cfg.episodes = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    cfg.out_dir = std::env::temp_dir().join("fbff-sweep");
    let seeds: Vec<u64> = (0..n).collect();
    let threads = std::thread::available_parallelism().map_or(1, |p| p.get());
    let summary = run_sweep(&cfg, &seeds, threads, CARTPOLE_SUCCESS)?;
    for r in &summary.runs {
        println!(
            "seed {}: median last {} = {:.0}, ff jumps {:?}",
            r.seed, r.last_k, r.median_last, r.ff_jumps
        );
    }
    println!(
        "success {:?}, failure {:?}; curves in {}",
        summary.success,
        summary.failure,
        cfg.out_dir.join("curves.csv").display()
    );
    Ok(())
}

//! Trains one cart-pole seed through the harness and prints the learning curve.
//!
//!     cargo run --release --example cart_pole -- [seed] [episodes]

use fbff::envs::EnvKind;
use fbff::harness::{run_train_with, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::new(EnvKind::CartPole);
    cfg.seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    cfg.episodes = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    cfg.out_dir = std::env::temp_dir().join(format!("fbff-cart-pole-{}", cfg.seed));
    let out = run_train_with(&cfg, |row, _| {
        if row.episode % 10 == 0 {
            println!(
                "episode {:3}: score {:5.0}  w {:.3}  H_fb {:6.2}  H_ff {:6.2}",
                row.episode, row.score, row.mean_w, row.mean_h_fb, row.mean_h_ff
            );
        }
    })?;
    let s = &out.summary;
    println!(
        "median last {} = {:.0}, final mean w {:.3}; run written to {}",
        s.last_k,
        s.median_last,
        s.final_mean_w,
        out.dir.display()
    );
    Ok(())
}

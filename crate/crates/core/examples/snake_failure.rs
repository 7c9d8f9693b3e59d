//! Trains the snake for a few episodes, then evaluates each policy with and
//! without the position sensor failing over the first half of the field.
//!
//!     cargo run --release --example snake_failure -- [seed] [episodes]

use fbff::envs::{EnvKind, FailureRegion};
use fbff::harness::{run_eval, run_train, RunConfig};
use fbff::policy::EvalMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::new(EnvKind::Snake);
    cfg.seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    cfg.episodes = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    cfg.failure = FailureRegion::LeftOf(0.5 * cfg.snake.field_length);
    cfg.out_dir = std::env::temp_dir().join(format!("fbff-snake-{}", cfg.seed));
    let out = run_train(&cfg)?;
    println!(
        "trained {} episodes, final mean w {:.3}",
        out.rows.len(),
        out.summary.final_mean_w
    );

    let ckpt = out.dir.join("checkpoints/final.json");
    for mode in [EvalMode::Composed, EvalMode::FbOnly, EvalMode::FfOnly] {
        for failure in [false, true] {
            let (r, _) = run_eval(&cfg, &ckpt, mode, failure, &out.dir.join("eval"))?;
            println!(
                "{mode:>8} failure {failure:5}: x {:5.2}  final |y| {:.3}  mean |y| {:.3}  goal {}",
                r.final_x.unwrap_or(f64::NAN),
                r.final_y.unwrap_or(f64::NAN).abs(),
                r.mean_abs_y.unwrap_or(f64::NAN),
                r.reached_goal
            );
        }
    }
    Ok(())
}

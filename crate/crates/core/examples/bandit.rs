//! Online learning on the one-state quadratic bandit (reward `-a^2`): the
//! composed policy's mean should settle near zero.

use fbff::envs::QuadraticBandit;
use fbff::learner::{Agent, Hyperparams};
use fbff::policy::EvalMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);
    let mut agent = Agent::new(Hyperparams::default(), 1, 1, seed)?;
    let mut env = QuadraticBandit;
    for step in 0..=2000 {
        if step % 250 == 0 {
            agent.begin_episode();
            let pair = agent.policy_pair(&[1.0], false)?;
            let mean = agent.act_eval(&[1.0], EvalMode::Composed)?.action[0];
            println!(
                "step {step:4}: mean action {mean:+.4}  fb {:+.3} ff {:+.3}  w {:.3}",
                pair.fb.mu()[0],
                pair.ff.mu()[0],
                pair.w
            );
        }
        agent.train_episode(&mut env, 1, |_| {})?;
    }
    Ok(())
}

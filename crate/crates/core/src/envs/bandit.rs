use super::{Environment, Step};

/// One state, one continuous action, reward `-a^2`, one step per episode.
#[derive(Debug, Clone, Default)]
pub struct QuadraticBandit;

impl Environment for QuadraticBandit {
    fn obs_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self) -> Vec<f64> {
        vec![1.0]
    }

    fn step(&mut self, action: &[f64]) -> Step {
        Step {
            obs: vec![1.0],
            reward: -action[0] * action[0],
            terminal: true,
            truncated: false,
        }
    }
}

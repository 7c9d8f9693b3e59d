//! Native environments: cart-pole, a CPG-driven planar snake with stiffness
//! actions, a one-step quadratic bandit, and a sensing-failure wrapper.

mod bandit;
mod cartpole;
mod cpg;
mod failure;
mod snake;

pub use bandit::QuadraticBandit;
pub use cartpole::{CartPole, CartPoleConfig, CartPoleState};
pub use cpg::{Cpg, CpgConfig, CpgCoupling, CpgTopology};
pub use failure::{FailureRegion, SensingFailure};
pub use snake::{
    Snake, SnakeConfig, SnakeState, SNAKE_ACTION_DIM, SNAKE_JOINTS, SNAKE_OBS_ANGLE, SNAKE_OBS_DIM,
    SNAKE_OBS_RATE, SNAKE_OBS_STIFFNESS, SNAKE_OBS_TORQUE, SNAKE_OBS_VERSION, SNAKE_OBS_X,
    SNAKE_OBS_Y,
};

use serde::{Deserialize, Serialize};

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// True termination: the value of the next state is zero.
    pub terminal: bool,
    /// Step cap reached; the episode ends but the next state still bootstraps.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Step;
    /// Ground-truth planar position for failure predicates, when meaningful.
    fn pose(&self) -> Option<(f64, f64)> {
        None
    }
    /// Indices of the position entries inside the observation.
    fn pose_indices(&self) -> Option<(usize, usize)> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    CartPole,
    Snake,
    Bandit,
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvKind::CartPole => "cart-pole",
            EnvKind::Snake => "snake",
            EnvKind::Bandit => "bandit",
        })
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, Step};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleConfig {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half of the pole length.
    pub half_length: f64,
    pub gravity: f64,
    pub max_force: f64,
    pub dt: f64,
    pub angle_limit: f64,
    pub position_limit: f64,
    pub max_steps: usize,
    /// Initial state entries are drawn uniformly from `[-init_noise, init_noise]`.
    pub init_noise: f64,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.81,
            max_force: 10.0,
            dt: 0.02,
            angle_limit: 0.2,
            position_limit: 2.4,
            max_steps: 500,
            init_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }
}

impl CartPoleConfig {
    /// Accelerations `(x_acc, theta_acc)` for a force in newtons.
    pub fn accelerations(&self, s: &CartPoleState, force: f64) -> (f64, f64) {
        let total = self.cart_mass + self.pole_mass;
        let pml = self.pole_mass * self.half_length;
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + pml * s.theta_dot * s.theta_dot * sin) / total;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total));
        let x_acc = temp - pml * theta_acc * cos / total;
        (x_acc, theta_acc)
    }

    /// Mechanical energy of cart plus uniform rod.
    pub fn energy(&self, s: &CartPoleState) -> f64 {
        let m = self.pole_mass;
        let l = self.half_length;
        0.5 * (self.cart_mass + m) * s.x_dot * s.x_dot
            + m * l * s.x_dot * s.theta_dot * s.theta.cos()
            + 0.5 * (4.0 / 3.0) * m * l * l * s.theta_dot * s.theta_dot
            + m * self.gravity * l * s.theta.cos()
    }

    /// Semi-implicit Euler step.
    pub fn integrate(&self, s: &CartPoleState, force: f64) -> CartPoleState {
        let (x_acc, theta_acc) = self.accelerations(s, force);
        let x_dot = s.x_dot + self.dt * x_acc;
        let theta_dot = s.theta_dot + self.dt * theta_acc;
        CartPoleState {
            x: s.x + self.dt * x_dot,
            x_dot,
            theta: s.theta + self.dt * theta_dot,
            theta_dot,
        }
    }
}

/// Pole balancing on a cart. Action is unbounded and squashed to
/// `max_force * tanh(a)`; reward is 1 for every non-terminal step.
#[derive(Debug, Clone)]
pub struct CartPole {
    cfg: CartPoleConfig,
    state: CartPoleState,
    steps: usize,
    rng: ChaCha8Rng,
}

impl CartPole {
    pub fn new(cfg: CartPoleConfig, seed: u64) -> Self {
        Self {
            cfg,
            state: CartPoleState::default(),
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &CartPoleConfig {
        &self.cfg
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    /// Places the system in an explicit state and restarts the step counter.
    pub fn reset_to(&mut self, state: CartPoleState) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        state.to_vec()
    }

    fn failed(&self) -> bool {
        self.state.theta.abs() > self.cfg.angle_limit
            || self.state.x.abs() > self.cfg.position_limit
    }
}

impl Environment for CartPole {
    fn obs_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self) -> Vec<f64> {
        let b = self.cfg.init_noise;
        let mut draw = || {
            if b > 0.0 {
                self.rng.random_range(-b..b)
            } else {
                0.0
            }
        };
        let state = CartPoleState {
            x: draw(),
            x_dot: draw(),
            theta: draw(),
            theta_dot: draw(),
        };
        self.reset_to(state)
    }

    fn step(&mut self, action: &[f64]) -> Step {
        let force = self.cfg.max_force * action[0].tanh();
        self.state = self.cfg.integrate(&self.state, force);
        self.steps += 1;
        let terminal = self.failed();
        Step {
            obs: self.state.to_vec(),
            reward: if terminal { 0.0 } else { 1.0 },
            terminal,
            truncated: !terminal && self.steps >= self.cfg.max_steps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fine-step classical RK4 on the same equations of motion.
    fn rk4(cfg: &CartPoleConfig, s: CartPoleState, horizon: f64, h: f64) -> CartPoleState {
        let f = |s: &CartPoleState| {
            let (xa, ta) = cfg.accelerations(s, 0.0);
            [s.x_dot, xa, s.theta_dot, ta]
        };
        let add = |s: &CartPoleState, k: [f64; 4], c: f64| CartPoleState {
            x: s.x + c * k[0],
            x_dot: s.x_dot + c * k[1],
            theta: s.theta + c * k[2],
            theta_dot: s.theta_dot + c * k[3],
        };
        let mut s = s;
        let n = (horizon / h).round() as usize;
        for _ in 0..n {
            let k1 = f(&s);
            let k2 = f(&add(&s, k1, h / 2.0));
            let k3 = f(&add(&s, k2, h / 2.0));
            let k4 = f(&add(&s, k3, h));
            let k = [0, 1, 2, 3].map(|i| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0);
            s = add(&s, k, h);
        }
        s
    }

    #[test]
    fn upright_equilibrium_is_fixed_point() {
        let mut env = CartPole::new(CartPoleConfig::default(), 0);
        env.reset_to(CartPoleState::default());
        for _ in 0..100 {
            let s = env.step(&[0.0]);
            assert_eq!(s.obs, vec![0.0; 4]);
            assert_eq!(s.reward, 1.0);
        }
    }

    #[test]
    fn small_tilt_grows() {
        let cfg = CartPoleConfig::default();
        let s0 = CartPoleState {
            theta: 0.01,
            ..Default::default()
        };
        let oracle = rk4(&cfg, s0, cfg.dt, 1e-5);
        let mut env = CartPole::new(cfg, 0);
        env.reset_to(s0);
        let s1 = env.step(&[0.0]).obs;
        assert!(oracle.theta > 0.01);
        assert!(s1[2] > 0.01);
        assert!(s1[3] > 0.0 && oracle.theta_dot > 0.0);
        // first-order method: one-step error is O(dt^2)
        assert!((s1[2] - oracle.theta).abs() < cfg.dt * cfg.dt);
        assert!((s1[3] - oracle.theta_dot).abs() < cfg.dt * cfg.dt * 10.0);
    }

    #[test]
    fn energy_drift_is_integration_error() {
        let cfg = CartPoleConfig {
            angle_limit: 10.0,
            position_limit: 1e9,
            ..Default::default()
        };
        let s0 = CartPoleState {
            theta: 0.1,
            ..Default::default()
        };
        let e0 = cfg.energy(&s0);
        let fine = rk4(&cfg, s0, 10.0 * cfg.dt, 1e-5);
        assert!((cfg.energy(&fine) - e0).abs() < 1e-9);
        let mut s = s0;
        for k in 1..=10 {
            s = cfg.integrate(&s, 0.0);
            let drift = (cfg.energy(&s) - e0).abs();
            // bounded by O(dt) per step relative to the energy scale m g l
            let scale = cfg.pole_mass * cfg.gravity * cfg.half_length;
            assert!(drift < k as f64 * cfg.dt * scale, "step {k}: {drift}");
        }
    }

    #[test]
    fn score_capped_at_max_steps() {
        let mut env = CartPole::new(CartPoleConfig::default(), 0);
        env.reset_to(CartPoleState::default());
        let mut score = 0.0;
        let mut n = 0;
        loop {
            let s = env.step(&[0.0]);
            score += s.reward;
            n += 1;
            if s.done() {
                assert!(s.truncated && !s.terminal);
                break;
            }
        }
        assert_eq!(n, 500);
        assert_eq!(score, 500.0);
    }

    #[test]
    fn termination_gives_zero_reward() {
        let mut env = CartPole::new(CartPoleConfig::default(), 0);
        env.reset_to(CartPoleState {
            theta: 0.199,
            theta_dot: 1.0,
            ..Default::default()
        });
        let s = env.step(&[0.0]);
        assert!(s.terminal);
        assert_eq!(s.reward, 0.0);
    }

    #[test]
    fn reset_is_seeded() {
        let mut a = CartPole::new(CartPoleConfig::default(), 7);
        let mut b = CartPole::new(CartPoleConfig::default(), 7);
        for _ in 0..3 {
            let sa = a.reset();
            assert_eq!(sa, b.reset());
            assert!(sa.iter().all(|v| v.abs() <= 0.05));
        }
    }
}

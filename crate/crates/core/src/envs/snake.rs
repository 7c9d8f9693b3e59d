use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::cpg::{Cpg, CpgConfig};
use super::{Environment, Step};
use crate::autodiff::sigmoid;

pub const SNAKE_JOINTS: usize = 8;
pub const SNAKE_ACTION_DIM: usize = SNAKE_JOINTS;
/// `[phi (8), phi_dot (8), tau (8), k (8), x, y]`
pub const SNAKE_OBS_DIM: usize = 4 * SNAKE_JOINTS + 2;
pub const SNAKE_OBS_ANGLE: usize = 0;
pub const SNAKE_OBS_RATE: usize = SNAKE_JOINTS;
pub const SNAKE_OBS_TORQUE: usize = 2 * SNAKE_JOINTS;
pub const SNAKE_OBS_STIFFNESS: usize = 3 * SNAKE_JOINTS;
pub const SNAKE_OBS_X: usize = 4 * SNAKE_JOINTS;
pub const SNAKE_OBS_Y: usize = 4 * SNAKE_JOINTS + 1;
/// Bumped whenever the observation layout changes.
pub const SNAKE_OBS_VERSION: u32 = 1;

const NORMAL_REG: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnakeConfig {
    pub link_length: f64,
    /// Joint tracking gain in 1/s.
    pub tracking_gain: f64,
    pub c_lat: f64,
    pub c_lon: f64,
    /// Episode ends once the head passes `|x| > field_length`.
    pub field_length: f64,
    /// Episode ends once the head passes `|y| > field_half_width`.
    pub field_half_width: f64,
    pub max_steps: usize,
    /// Integration substeps per control step.
    pub substeps: usize,
    pub cpg: CpgConfig,
}

impl Default for SnakeConfig {
    fn default() -> Self {
        Self {
            link_length: 0.1,
            tracking_gain: 25.0,
            c_lat: 20.0,
            c_lon: 1.0,
            field_length: 4.0,
            field_half_width: 1.0,
            max_steps: 2000,
            substeps: 20,
            cpg: CpgConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnakeState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// CPG reference angles.
    pub reference: Vec<f64>,
    /// Tracked joint angles.
    pub angle: Vec<f64>,
    /// Mean joint rate over the last control step.
    pub rate: Vec<f64>,
    pub stiffness: Vec<f64>,
    /// `k (reference - angle)`
    pub torque: Vec<f64>,
    pub phases: Vec<f64>,
}

impl SnakeState {
    fn initial() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            reference: vec![0.0; SNAKE_JOINTS],
            angle: vec![0.0; SNAKE_JOINTS],
            rate: vec![0.0; SNAKE_JOINTS],
            stiffness: vec![0.5; SNAKE_JOINTS],
            torque: vec![0.0; SNAKE_JOINTS],
            phases: vec![0.0; SNAKE_JOINTS],
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(SNAKE_OBS_DIM);
        obs.extend_from_slice(&self.angle);
        obs.extend_from_slice(&self.rate);
        obs.extend_from_slice(&self.torque);
        obs.extend_from_slice(&self.stiffness);
        obs.push(self.x);
        obs.push(self.y);
        obs
    }
}

/// Planar snake of `SNAKE_JOINTS + 1` equal links. The head pose is that of
/// the front tip of the first link; the body trails behind it.
///
/// Joints follow CPG references with stiffness-dependent first-order lag,
/// and the body moves quasi-statically under anisotropic viscous friction:
/// the head velocity `(vx, vy, omega)` is the one that minimizes the
/// dissipation `sum c_lat v_lat^2 + c_lon v_lon^2` over link midpoints,
/// i.e. zero net force and torque.
#[derive(Debug, Clone)]
pub struct Snake {
    cfg: SnakeConfig,
    cpg: Cpg,
    state: SnakeState,
    steps: usize,
}

impl Snake {
    pub fn new(cfg: SnakeConfig) -> Self {
        Self {
            cfg,
            cpg: Cpg::new(cfg.cpg, SNAKE_JOINTS),
            state: SnakeState::initial(),
            steps: 0,
        }
    }

    pub fn config(&self) -> &SnakeConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SnakeState {
        &self.state
    }

    /// Head velocity `(vx, vy, omega)` in the world frame for joint angles
    /// `phi` moving at `phi_dot`, with the head at `heading`.
    pub fn body_velocity(&self, heading: f64, phi: &[f64], phi_dot: &[f64]) -> [f64; 3] {
        let l = self.cfg.link_length;
        let mut normal = Matrix3::<f64>::zeros();
        let mut rhs = Vector3::<f64>::zeros();
        // Running contributions of all previous links to the midpoint velocity:
        // omega coefficient and joint-rate part.
        let mut acc_w = [0.0f64; 2];
        let mut acc_b = [0.0f64; 2];
        let mut psi = heading;
        let mut psi_rate = 0.0;
        for j in 0..=phi.len() {
            let (sin, cos) = psi.sin_cos();
            let perp = [sin, -cos];
            let cw = [acc_w[0] + 0.5 * l * perp[0], acc_w[1] + 0.5 * l * perp[1]];
            let cb = [
                acc_b[0] + 0.5 * l * psi_rate * perp[0],
                acc_b[1] + 0.5 * l * psi_rate * perp[1],
            ];
            for (dir, c) in [([cos, sin], self.cfg.c_lon), ([-sin, cos], self.cfg.c_lat)] {
                let row = Vector3::new(dir[0], dir[1], dir[0] * cw[0] + dir[1] * cw[1]);
                let b = dir[0] * cb[0] + dir[1] * cb[1];
                normal += c * row * row.transpose();
                rhs -= c * b * row;
            }
            acc_w = [acc_w[0] + l * perp[0], acc_w[1] + l * perp[1]];
            acc_b = [
                acc_b[0] + l * psi_rate * perp[0],
                acc_b[1] + l * psi_rate * perp[1],
            ];
            if j < phi.len() {
                psi += phi[j];
                psi_rate += phi_dot[j];
            }
        }
        for i in 0..3 {
            normal[(i, i)] += NORMAL_REG;
        }
        let u = normal.lu().solve(&rhs).unwrap_or_else(Vector3::zeros);
        [u[0], u[1], u[2]]
    }

    fn out_of_field(&self) -> bool {
        self.state.x.abs() > self.cfg.field_length || self.state.y.abs() > self.cfg.field_half_width
    }
}

impl Environment for Snake {
    fn obs_dim(&self) -> usize {
        SNAKE_OBS_DIM
    }

    fn action_dim(&self) -> usize {
        SNAKE_ACTION_DIM
    }

    fn reset(&mut self) -> Vec<f64> {
        self.cpg.reset();
        self.state = SnakeState::initial();
        self.steps = 0;
        self.state.observation()
    }

    fn step(&mut self, action: &[f64]) -> Step {
        let k: Vec<f64> = action.iter().map(|a| sigmoid(*a)).collect();
        let reference = self.cpg.step();
        let n = self.cfg.substeps.max(1);
        let h = self.cpg.config().dt / n as f64;
        let start = self.state.angle.clone();
        let mut phi = start.clone();
        let mut phi_dot = vec![0.0; SNAKE_JOINTS];
        let (mut x, mut y, mut psi) = (self.state.x, self.state.y, self.state.heading);
        for _ in 0..n {
            for i in 0..SNAKE_JOINTS {
                phi_dot[i] = self.cfg.tracking_gain * k[i] * (reference[i] - phi[i]);
            }
            let [vx, vy, w] = self.body_velocity(psi, &phi, &phi_dot);
            x += h * vx;
            y += h * vy;
            psi += h * w;
            for i in 0..SNAKE_JOINTS {
                phi[i] += h * phi_dot[i];
            }
        }
        let dt = self.cpg.config().dt;
        let s = &mut self.state;
        s.rate = phi.iter().zip(&start).map(|(p, q)| (p - q) / dt).collect();
        s.torque = (0..SNAKE_JOINTS)
            .map(|i| k[i] * (reference[i] - phi[i]))
            .collect();
        s.angle = phi;
        s.stiffness = k;
        s.reference = reference;
        s.phases = self.cpg.phases().to_vec();
        s.x = x;
        s.y = y;
        s.heading = psi;
        self.steps += 1;
        // Leaving the observable area ends the episode without making it
        // absorbing: the penalty -|y| would have continued.
        let truncated = self.out_of_field() || self.steps >= self.cfg.max_steps;
        Step {
            obs: self.state.observation(),
            reward: -self.state.y.abs(),
            terminal: false,
            truncated,
        }
    }

    fn pose(&self) -> Option<(f64, f64)> {
        Some((self.state.x, self.state.y))
    }

    fn pose_indices(&self) -> Option<(usize, usize)> {
        Some((SNAKE_OBS_X, SNAKE_OBS_Y))
    }
}

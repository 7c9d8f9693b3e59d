use serde::{Deserialize, Serialize};

use super::{Environment, Step};

/// Where along the true pose the position sensor fails.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureRegion {
    #[default]
    Never,
    Always,
    /// Fails while the true `x` is below the threshold.
    LeftOf(f64),
}

impl FailureRegion {
    pub fn contains(&self, x: f64, _y: f64) -> bool {
        match *self {
            FailureRegion::Never => false,
            FailureRegion::Always => true,
            FailureRegion::LeftOf(t) => x < t,
        }
    }
}

/// Freezes the position entries of the observation at their last good values
/// while the true pose lies inside the failure region. Environments without a
/// pose pass through unchanged.
#[derive(Debug, Clone)]
pub struct SensingFailure<E> {
    inner: E,
    region: FailureRegion,
    last_good: Option<(f64, f64)>,
    failing: bool,
}

impl<E: Environment> SensingFailure<E> {
    pub fn new(inner: E, region: FailureRegion) -> Self {
        Self {
            inner,
            region,
            last_good: None,
            failing: false,
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn region(&self) -> FailureRegion {
        self.region
    }

    /// Whether the last observation was corrupted.
    pub fn failing(&self) -> bool {
        self.failing
    }

    fn corrupt(&mut self, obs: &mut [f64]) {
        let (Some((ix, iy)), Some((x, y))) = (self.inner.pose_indices(), self.inner.pose()) else {
            return;
        };
        self.failing = self.region.contains(x, y);
        match (self.failing, self.last_good) {
            (true, Some((fx, fy))) => {
                obs[ix] = fx;
                obs[iy] = fy;
            }
            _ => self.last_good = Some((obs[ix], obs[iy])),
        }
    }
}

impl<E: Environment> Environment for SensingFailure<E> {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn reset(&mut self) -> Vec<f64> {
        let mut obs = self.inner.reset();
        // The reset reading is taken as valid so there is always a value to hold.
        self.last_good = None;
        if let Some((ix, iy)) = self.inner.pose_indices() {
            self.last_good = Some((obs[ix], obs[iy]));
        }
        self.corrupt(&mut obs);
        obs
    }

    fn step(&mut self, action: &[f64]) -> Step {
        let mut step = self.inner.step(action);
        self.corrupt(&mut step.obs);
        step
    }

    fn pose(&self) -> Option<(f64, f64)> {
        self.inner.pose()
    }

    fn pose_indices(&self) -> Option<(usize, usize)> {
        self.inner.pose_indices()
    }
}

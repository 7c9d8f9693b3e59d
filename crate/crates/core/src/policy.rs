//! Feedback / feedforward policies and their confidence-weighted mixture.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::distributions::{DistError, MixturePolicyDist, StudentT, StudentTVar, TNoise};
use crate::networks::{DofMode, NetError, StudentTHead};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("entropy is NaN")]
    NanEntropy,
    #[error("mean distance must be finite and non-negative, got {0}")]
    InvalidDistance(f64),
    #[error("inverse temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("unknown evaluation mode {0:?}")]
    UnknownMode(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Softmax of the negative entropies, each scaled by `d * beta_t`.
///
/// Lower entropy means higher confidence, so the sharper policy is preferred;
/// as the two means approach each other the ratio relaxes toward 0.5.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn mixture_ratio(h_fb: f64, h_ff: f64, d: f64, beta_t: f64) -> Result<f64, PolicyError> {
    if h_fb.is_nan() || h_ff.is_nan() {
        return Err(PolicyError::NanEntropy);
    }
    if !(d >= 0.0 && d.is_finite()) {
        return Err(PolicyError::InvalidDistance(d));
    }
    if !(beta_t > 0.0) {
        return Err(PolicyError::InvalidTemperature(beta_t));
    }
    let e_fb = -h_fb * d * beta_t;
    let e_ff = -h_ff * d * beta_t;
    if e_fb == e_ff {
        return Ok(0.5);
    }
    let m = e_fb.max(e_ff);
    let a = (e_fb - m).exp();
    let b = (e_ff - m).exp();
    Ok(a / (a + b))
}

pub fn mean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Which policy drives the actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    #[default]
    Composed,
    FbOnly,
    FfOnly,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Composed => "composed",
            EvalMode::FbOnly => "fb-only",
            EvalMode::FfOnly => "ff-only",
        })
    }
}

impl FromStr for EvalMode {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "composed" => Ok(EvalMode::Composed),
            "fb" | "fb-only" => Ok(EvalMode::FbOnly),
            "ff" | "ff-only" => Ok(EvalMode::FfOnly),
            other => Err(PolicyError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Fb,
    Ff,
}

/// Both action distributions plus the statistics that set the mixture ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub fb: StudentT,
    pub ff: StudentT,
    pub h_fb: f64,
    pub h_ff: f64,
    pub d: f64,
    pub w: f64,
}

impl PolicyPair {
    pub fn new(fb: StudentT, ff: StudentT, beta_t: f64) -> Result<Self, PolicyError> {
        let h_fb = fb.entropy();
        let h_ff = ff.entropy();
        let d = mean_distance(fb.mu(), ff.mu());
        let w = mixture_ratio(h_fb, h_ff, d, beta_t)?;
        Ok(Self {
            fb,
            ff,
            h_fb,
            h_ff,
            d,
            w,
        })
    }

    /// Forces `w` to 1 or 0 for the decomposed evaluations.
    pub fn with_mode(mut self, mode: EvalMode) -> Self {
        match mode {
            EvalMode::Composed => {}
            EvalMode::FbOnly => self.w = 1.0,
            EvalMode::FfOnly => self.w = 0.0,
        }
        self
    }

    pub fn mixture(&self) -> Result<MixturePolicyDist, PolicyError> {
        Ok(MixturePolicyDist::new(
            self.fb.clone(),
            self.ff.clone(),
            self.w,
        )?)
    }
}

/// Noise for one composed draw: a switching uniform and a student-t draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNoise {
    pub u: f64,
    pub t: TNoise,
}

impl PolicyNoise {
    pub fn median(dim: usize) -> Self {
        Self {
            u: 0.5,
            t: TNoise::median(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub action: Vec<f64>,
    /// Mixture log-density at `action`.
    pub log_density: f64,
    pub component: Component,
}

/// Draws the switching variable, picks a component and samples from it.
pub fn draw_policy_noise<R: Rng + ?Sized>(rng: &mut R, pair: &PolicyPair) -> PolicyNoise {
    let u: f64 = rng.random();
    let nu = if u < pair.w {
        pair.fb.nu()
    } else {
        pair.ff.nu()
    };
    let dim = pair.fb.dim();
    let chi = rand_distr::ChiSquared::new(nu).expect("valid dof");
    let normal = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let chi2 = (0..dim).map(|_| chi.sample(rng)).collect();
    PolicyNoise {
        u,
        t: TNoise { normal, chi2, nu },
    }
}

pub fn compose_and_sample(
    pair: &PolicyPair,
    noise: &PolicyNoise,
) -> Result<SampledAction, PolicyError> {
    let (component, dist) = if noise.u < pair.w {
        (Component::Fb, &pair.fb)
    } else {
        (Component::Ff, &pair.ff)
    };
    let action = dist.sample(&noise.t);
    let log_density = pair.mixture()?.logpdf(&action)?;
    Ok(SampledAction {
        action,
        log_density,
        component,
    })
}

/// The two policy heads: `pi_fb(a | s)` and `pi_ff(a | h^a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHeads {
    pub fb: StudentTHead,
    pub ff: StudentTHead,
}

impl PolicyHeads {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        state_dim: usize,
        history_dim: usize,
        action_dim: usize,
        hidden: usize,
        dof: DofMode,
        rng: &mut R,
    ) -> Result<Self, PolicyError> {
        let fb = StudentTHead::new(store, "pi_fb", state_dim, hidden, action_dim, dof, rng)
            .map_err(NetError::from)?;
        let ff = StudentTHead::new(store, "pi_ff", history_dim, hidden, action_dim, dof, rng)
            .map_err(NetError::from)?;
        Ok(Self { fb, ff })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.fb.param_ids();
        ids.extend(self.ff.param_ids());
        ids
    }

    pub fn fb_forward(&self, store: &ParamStore, s: &[f64]) -> Result<StudentT, PolicyError> {
        Ok(self.fb.forward_values(store, s)?)
    }

    pub fn ff_forward(&self, store: &ParamStore, h_a: &[f64]) -> Result<StudentT, PolicyError> {
        Ok(self.ff.forward_values(store, h_a)?)
    }

    pub fn pair(
        &self,
        store: &ParamStore,
        s: &[f64],
        h_a: &[f64],
        beta_t: f64,
    ) -> Result<PolicyPair, PolicyError> {
        PolicyPair::new(
            self.fb_forward(store, s)?,
            self.ff_forward(store, h_a)?,
            beta_t,
        )
    }

    pub fn fb_tape(&self, tape: &mut Tape, s: Var) -> Result<StudentTVar, PolicyError> {
        Ok(self.fb.forward(tape, s)?)
    }

    pub fn ff_tape(&self, tape: &mut Tape, h_a: Var) -> Result<StudentTVar, PolicyError> {
        Ok(self.ff.forward(tape, h_a)?)
    }
}

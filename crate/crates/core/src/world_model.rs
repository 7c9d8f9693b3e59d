//! Variational latent dynamics: encoder `q(z | s, h^s)`, time-dependent prior
//! `p(z | h^s)`, deterministic transition `z' = f(z, a)` and decoder
//! `p(s' | z')`, trained through [`WorldModel::loss`].

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::distributions::{mc_cross_entropy, mc_kl, DistError, StudentTVar, TNoise};
use crate::networks::{DofMode, MlpHead, NetError, StudentTHead};

/// Latent sample and history features at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub z: Vec<f64>,
    pub h_s: Vec<f64>,
    pub h_a: Vec<f64>,
}

/// Terms of the model loss, kept separate for logging.
#[derive(Debug, Clone, Copy)]
pub struct ModelLossParts {
    /// `-ln p(s' | z')`
    pub recon: Var,
    /// `KL(q(z | s, h^s) || p(z | h^s))`
    pub kl_z: Var,
    /// `H(pi_fb || pi_ff)`
    pub ce_policy: Var,
    pub beta_z: f64,
    pub beta_a: f64,
    pub w: f64,
    /// `recon + beta_z kl_z + beta_a w^2 ce_policy`
    pub total: Var,
    /// Latent sample the reconstruction was computed from.
    pub z: Var,
}

impl ModelLossParts {
    /// Coefficient in front of the policy cross entropy.
    pub fn ce_weight(&self) -> f64 {
        self.beta_a * self.w * self.w
    }
}

/// Noise consumed by one evaluation of the model loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelNoise {
    /// Latent draw from the encoder.
    pub z: TNoise,
    /// Action draw from the feedback policy for the cross entropy.
    pub ce: TNoise,
}

impl ModelNoise {
    pub fn draw<R: Rng + ?Sized>(
        rng: &mut R,
        latent_dim: usize,
        nu_q: f64,
        action_dim: usize,
        nu_fb: f64,
    ) -> Self {
        Self {
            z: TNoise::draw(rng, latent_dim, nu_q),
            ce: TNoise::draw(rng, action_dim, nu_fb),
        }
    }
}

/// Loss weights of the model bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelWeights {
    pub beta_z: f64,
    pub beta_a: f64,
    pub eta: f64,
}

/// Value-preserving, gradient-attenuating action injection:
/// `out = sg(a) + eta * (a - sg(a))`, so `out == a` bitwise and `d out / d a == eta`.
pub fn graph_cut(tape: &mut Tape, a: Var, eta: f64) -> Var {
    let frozen = tape.stop_gradient(a);
    let diff = tape.sub(a, frozen);
    let scaled = tape.scale(diff, eta);
    tape.add(frozen, scaled)
}

/// Re-expresses an already executed action as a reparameterized draw from
/// `dist`: the value is exactly `executed`, while gradients reach the
/// location and scale as if the standard-t variate `(a - mu) / sigma` had
/// produced it.
pub fn reexpress_action(
    tape: &mut Tape,
    dist: &StudentTVar,
    executed: &[f64],
) -> Result<Var, DistError> {
    let mu = tape.value(dist.mu);
    let sigma = tape.value(dist.sigma);
    if mu.len() != executed.len() {
        return Err(DistError::DimensionMismatch(mu.len(), executed.len()));
    }
    let t: Vec<f64> = executed
        .iter()
        .zip(mu.iter().zip(sigma))
        .map(|(a, (m, s))| (a - m) / s)
        .collect();
    let t = tape.constant(t);
    let st = tape.mul(dist.sigma, t);
    let path = tape.add(dist.mu, st);
    let frozen = tape.stop_gradient(path);
    let zero = tape.sub(path, frozen);
    let a = tape.constant(executed.to_vec());
    Ok(tape.add(a, zero))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub encoder: StudentTHead,
    pub prior: StudentTHead,
    pub dynamics: MlpHead,
    pub decoder: StudentTHead,
    latent_dim: usize,
    state_dim: usize,
    action_dim: usize,
}

impl WorldModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        state_dim: usize,
        action_dim: usize,
        history_dim: usize,
        latent_dim: usize,
        hidden: usize,
        dof: DofMode,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        let encoder = StudentTHead::new(
            store,
            "q_z",
            state_dim + history_dim,
            hidden,
            latent_dim,
            dof,
            rng,
        )?;
        let prior = StudentTHead::new(store, "p_z", history_dim, hidden, latent_dim, dof, rng)?;
        let dynamics = MlpHead::new(
            store,
            "f_z",
            latent_dim + action_dim,
            hidden,
            latent_dim,
            rng,
        )?;
        let decoder = StudentTHead::new(store, "p_s", latent_dim, hidden, state_dim, dof, rng)?;
        Ok(Self {
            encoder,
            prior,
            dynamics,
            decoder,
            latent_dim,
            state_dim,
            action_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.prior.param_ids());
        ids.extend(self.dynamics.param_ids());
        ids.extend(self.decoder.param_ids());
        ids
    }

    pub fn encode(&self, tape: &mut Tape, s: Var, h_s: Var) -> Result<StudentTVar, NetError> {
        let x = tape.concat(&[s, h_s]);
        self.encoder.forward(tape, x)
    }

    pub fn prior(&self, tape: &mut Tape, h_s: Var) -> Result<StudentTVar, NetError> {
        self.prior.forward(tape, h_s)
    }

    /// `z' = f(z, a)`; `a` should already have passed through [`graph_cut`].
    pub fn latent_dynamics(&self, tape: &mut Tape, z: Var, a: Var) -> Result<Var, NetError> {
        let x = tape.concat(&[z, a]);
        self.dynamics.forward(tape, x)
    }

    pub fn decode(&self, tape: &mut Tape, z_next: Var) -> Result<StudentTVar, NetError> {
        self.decoder.forward(tape, z_next)
    }

    /// Single-sample model bound for one transition.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        tape: &mut Tape,
        s: Var,
        s_next: Var,
        h_s: Var,
        fb: &StudentTVar,
        ff: &StudentTVar,
        w: f64,
        action: Var,
        noise: &ModelNoise,
        weights: ModelWeights,
    ) -> Result<ModelLossParts, NetError> {
        let q = self.encode(tape, s, h_s)?;
        let p = self.prior(tape, h_s)?;
        let z = q.sample_reparam(tape, &noise.z)?;
        let kl_z = mc_kl(tape, &q, &p, std::slice::from_ref(&noise.z))?;
        let a = graph_cut(tape, action, weights.eta);
        let z_next = self.latent_dynamics(tape, z, a)?;
        let dec = self.decode(tape, z_next)?;
        let ll = dec.logpdf(tape, s_next)?;
        let recon = tape.neg(ll);
        let ce_policy = mc_cross_entropy(tape, fb, ff, std::slice::from_ref(&noise.ce))?;
        let kl_term = tape.scale(kl_z, weights.beta_z);
        let ce_term = tape.scale(ce_policy, weights.beta_a * w * w);
        let reg = tape.add(kl_term, ce_term);
        let total = tape.add(recon, reg);
        Ok(ModelLossParts {
            recon,
            kl_z,
            ce_policy,
            beta_z: weights.beta_z,
            beta_a: weights.beta_a,
            w,
            total,
            z,
        })
    }
}

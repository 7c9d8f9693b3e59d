//! Optimality-weighted losses, TD machinery, optimizer, target networks,
//! eligibility traces and the online agent that ties them together.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, ParamId, ParamStore, Tape, Var, EXP_CLAMP};
use crate::distributions::{mixture_logpdf, DistError};
use crate::envs::Environment;
use crate::networks::{DofMode, EchoState, MlpHead, NetError, ReservoirSpec};
use crate::policy::{
    compose_and_sample, draw_policy_noise, Component, EvalMode, PolicyError, PolicyHeads,
    PolicyNoise, PolicyPair,
};
use crate::world_model::{reexpress_action, ModelNoise, ModelWeights, WorldModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("invalid hyperparameter {name}: {reason}")]
    InvalidHyperparam { name: &'static str, reason: String },
    #[error("non-finite {what} at update {update}: {detail}")]
    NonFinite {
        what: &'static str,
        update: u64,
        detail: String,
    },
    #[error("observation has {found} entries, agent expects {expected}")]
    ObsDim { expected: usize, found: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub gamma: f64,
    pub learning_rate: f64,
    /// Inverse temperature of the mixture ratio.
    pub beta_t: f64,
    pub beta_z: f64,
    pub beta_a: f64,
    /// Gradient scale through the action input of the latent dynamics.
    pub eta: f64,
    pub latent_dim: usize,
    /// Spectral radius of the reservoirs.
    pub rho: f64,
    /// Rate of the exponential moving average that tracks the target networks.
    pub target_rate: f64,
    pub trace_decay: f64,
    /// Temperature of the optimality coefficient.
    pub tau_opt: f64,
    pub hidden: usize,
    pub reservoir_units: usize,
    pub reservoir_layers: usize,
    pub reservoir_leak: f64,
    /// Initial degrees of freedom of every student-t head.
    pub nu_init: f64,
    pub learn_nu: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Keep the running maximum of the second moment (AMSGrad); plain Adam otherwise.
    pub amsgrad: bool,
    /// Sample behavior actions from the target copy instead of the live networks.
    pub behavior_from_target: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 3e-4,
            beta_t: 10.0,
            beta_z: 1e-2,
            beta_a: 1e-4,
            eta: 1e-4,
            latent_dim: 6,
            rho: 0.5,
            target_rate: 0.05,
            trace_decay: 0.95,
            tau_opt: 1.0,
            hidden: 100,
            reservoir_units: 100,
            reservoir_layers: 3,
            reservoir_leak: 1.0,
            nu_init: 10.0,
            learn_nu: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            amsgrad: true,
            behavior_from_target: false,
        }
    }
}

impl Hyperparams {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |name, reason: &str| {
            Err(LearnerError::InvalidHyperparam {
                name,
                reason: reason.to_string(),
            })
        };
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if !(self.tau_opt > 0.0) {
            return bad("tau_opt", "must be positive");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate", "must be non-negative");
        }
        if !(self.beta_t > 0.0) {
            return bad("beta_t", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.target_rate) {
            return bad("target_rate", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.trace_decay) {
            return bad("trace_decay", "must lie in [0, 1]");
        }
        if !(self.rho > 0.0) {
            return bad("rho", "must be positive");
        }
        if !(self.nu_init > 1.0) {
            return bad("nu_init", "must exceed 1");
        }
        if self.latent_dim == 0
            || self.hidden == 0
            || self.reservoir_units == 0
            || self.reservoir_layers == 0
        {
            return bad("dimensions", "must be non-zero");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam_beta", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn dof(&self) -> DofMode {
        if self.learn_nu {
            DofMode::Learned { init: self.nu_init }
        } else {
            DofMode::Fixed(self.nu_init)
        }
    }
}

/// `r + gamma V(s') (1 - terminal) - V(s)`, a plain number.
pub fn td_error(r: f64, v_s: f64, v_next: f64, terminal: bool, gamma: f64) -> f64 {
    let boot = if terminal { 0.0 } else { gamma * v_next };
    r + boot - v_s
}

/// `tau (exp(delta / tau) - 1)`: zero with unit slope at `delta = 0`,
/// bounded below by `-tau`.
pub fn optimality_coeff(delta: f64, tau: f64) -> f64 {
    tau * (delta / tau).min(EXP_CLAMP).exp_m1()
}

/// `-g (-L_model + ln pi)`.
pub fn trajectory_loss(tape: &mut Tape, g: f64, model_loss: Var, log_pi: Var) -> Var {
    let inner = tape.sub(log_pi, model_loss);
    tape.scale(inner, -g)
}

/// `-g V`.
pub fn value_loss(tape: &mut Tape, g: f64, v: Var) -> Var {
    tape.scale(v, -g)
}

/// `L_traj + L_value + tau L_model`.
pub fn total_loss(tape: &mut Tape, traj: Var, value: Var, model: Var, tau: f64) -> Var {
    let tv = tape.add(traj, value);
    let m = tape.scale(model, tau);
    tape.add(tv, m)
}

/// Adaptive moments with a non-decreasing, bias-corrected second moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmsGrad {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub keep_max: bool,
    pub steps: u64,
}

impl AmsGrad {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            keep_max: true,
            steps: 0,
        }
    }

    /// One descent step on every parameter that has a gradient slot.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.steps += 1;
        let t = self.steps.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let step = self.learning_rate / c1;
        let inv_c2 = 1.0 / c2;
        for (id, g) in grads.iter() {
            let p = store.get_mut(id);
            let slots = p
                .value
                .iter_mut()
                .zip(p.first_moment.iter_mut())
                .zip(p.second_moment.iter_mut())
                .zip(p.max_second_moment.iter_mut())
                .zip(g);
            for ((((x, m), v), vmax), &gi) in slots {
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                *vmax = if self.keep_max {
                    vmax.max(*v * inv_c2)
                } else {
                    *v * inv_c2
                };
                *x -= step * *m / (vmax.sqrt() + eps);
            }
        }
    }
}

/// `target <- (1 - rate) target + rate current`.
pub fn target_update(target: &mut ParamStore, current: &ParamStore, rate: f64) {
    for ((_, t), (_, c)) in target.iter_mut().zip(current.iter()) {
        for (tv, cv) in t.value.iter_mut().zip(&c.value) {
            *tv += rate * (cv - *tv);
        }
    }
}

/// Accumulating eligibility traces over a subset of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    ids: Vec<ParamId>,
    e: Gradients,
}

impl Traces {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>) -> Self {
        Self {
            ids,
            e: Gradients::new(store.len()),
        }
    }

    pub fn reset(&mut self) {
        self.e.clear();
    }

    /// `e <- decay e + sum_k scale_k grad_k`, restricted to the tracked ids.
    pub fn accumulate(&mut self, decay: f64, terms: &[(&Gradients, f64)]) {
        for &id in &self.ids {
            let len = match (self.e.get(id), terms.iter().find_map(|(g, _)| g.get(id))) {
                (Some(e), _) => e.len(),
                (None, Some(g)) => g.len(),
                (None, None) => continue,
            };
            let e = self.e.slot_mut(id, len);
            if decay != 1.0 {
                e.iter_mut().for_each(|v| *v *= decay);
            }
            for (g, scale) in terms {
                if let Some(gv) = g.get(id) {
                    for (ev, gi) in e.iter_mut().zip(gv) {
                        *ev += scale * gi;
                    }
                }
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.e.get(id)
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }
}

/// One environment transition together with the beliefs it was taken under.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub terminal: bool,
    /// Log-density of `a` under the behavior policy.
    pub behavior_log_density: f64,
    /// Component of the behavior mixture that produced `a`.
    pub component: Component,
    /// State history before `s` was observed.
    pub h_s: Vec<f64>,
    /// Action history before `a` was taken.
    pub h_a: Vec<f64>,
}

/// Diagnostics of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepMetrics {
    pub w: f64,
    pub d: f64,
    pub h_fb: f64,
    pub h_ff: f64,
    pub delta: f64,
    pub g: f64,
    pub value: f64,
    pub log_pi: f64,
    pub loss_traj: f64,
    pub loss_value: f64,
    pub loss_model: f64,
    pub recon: f64,
    pub kl: f64,
    pub ce: f64,
    pub loss_total: f64,
}

/// Per-group gradients of one transition: `ln pi(a)`, `V(s)` and `L_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientParts {
    pub log_pi: Gradients,
    pub value: Gradients,
    pub model: Gradients,
    pub metrics: StepMetrics,
}

/// An action chosen by the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Vec<f64>,
    pub log_density: f64,
    pub component: Component,
    pub pair: PolicyPair,
}

/// Online learner: policy heads, value head, world model, reservoirs and
/// their target copies.
#[derive(Debug, Clone)]
pub struct Agent {
    pub hp: Hyperparams,
    pub store: ParamStore,
    pub target: ParamStore,
    pub heads: PolicyHeads,
    pub value: MlpHead,
    pub model: WorldModel,
    pub hs: EchoState,
    pub ha: EchoState,
    pub opt: AmsGrad,
    state_dim: usize,
    action_dim: usize,
    policy_ids: Vec<ParamId>,
    value_ids: Vec<ParamId>,
    model_ids: Vec<ParamId>,
    traces_pi: Traces,
    traces_v: Traces,
    rng: ChaCha8Rng,
    /// Recycled gradient buffers.
    spare: [Gradients; 4],
}

const SAMPLER_STREAM: u64 = 0x5851_f42d_4c95_7f2d;

impl Agent {
    pub fn new(
        hp: Hyperparams,
        state_dim: usize,
        action_dim: usize,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        hp.validate()?;
        let reservoir = |inputs: usize, k: u64| ReservoirSpec {
            seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k),
            inputs,
            units: hp.reservoir_units,
            layers: hp.reservoir_layers,
            rho: hp.rho,
            leak: hp.reservoir_leak,
        };
        Self::with_reservoirs(
            hp,
            state_dim,
            action_dim,
            seed,
            reservoir(state_dim, 1),
            reservoir(action_dim, 2),
        )
    }

    /// Builds fresh networks around explicitly specified reservoirs.
    pub fn with_reservoirs(
        hp: Hyperparams,
        state_dim: usize,
        action_dim: usize,
        seed: u64,
        hs_spec: ReservoirSpec,
        ha_spec: ReservoirSpec,
    ) -> Result<Self, LearnerError> {
        hp.validate()?;
        let hs = EchoState::new(hs_spec)?;
        let ha = EchoState::new(ha_spec)?;
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dof = hp.dof();
        let heads = PolicyHeads::new(
            &mut store,
            state_dim,
            ha.feature_dim(),
            action_dim,
            hp.hidden,
            dof,
            &mut init,
        )?;
        let value = MlpHead::new(&mut store, "v", state_dim, hp.hidden, 1, &mut init)?;
        let model = WorldModel::new(
            &mut store,
            state_dim,
            action_dim,
            hs.feature_dim(),
            hp.latent_dim,
            hp.hidden,
            dof,
            &mut init,
        )?;
        let policy_ids = heads.param_ids();
        let value_ids = value.param_ids();
        let model_ids = model.param_ids();
        let traces_pi = Traces::new(&store, policy_ids.clone());
        let traces_v = Traces::new(&store, value_ids.clone());
        Ok(Self {
            hp,
            target: store.clone(),
            store,
            heads,
            value,
            model,
            hs,
            ha,
            opt: AmsGrad {
                keep_max: hp.amsgrad,
                ..AmsGrad::new(hp.learning_rate, hp.adam_beta1, hp.adam_beta2, hp.adam_eps)
            },
            state_dim,
            action_dim,
            policy_ids,
            value_ids,
            model_ids,
            traces_pi,
            traces_v,
            rng: ChaCha8Rng::seed_from_u64(seed ^ SAMPLER_STREAM),
            spare: Default::default(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn policy_ids(&self) -> &[ParamId] {
        &self.policy_ids
    }

    pub fn value_ids(&self) -> &[ParamId] {
        &self.value_ids
    }

    pub fn model_ids(&self) -> &[ParamId] {
        &self.model_ids
    }

    pub fn updates(&self) -> u64 {
        self.opt.steps
    }

    /// Clears histories and traces at an episode boundary.
    pub fn begin_episode(&mut self) {
        self.hs.reset();
        self.ha.reset();
        self.traces_pi.reset();
        self.traces_v.reset();
    }

    /// Advances both histories after `a` was executed in `s`.
    pub fn observe(&mut self, s: &[f64], a: &[f64]) -> Result<(), LearnerError> {
        self.hs.step(s)?;
        self.ha.step(a)?;
        Ok(())
    }

    fn check_obs(&self, s: &[f64]) -> Result<(), LearnerError> {
        if s.len() != self.state_dim {
            return Err(LearnerError::ObsDim {
                expected: self.state_dim,
                found: s.len(),
            });
        }
        Ok(())
    }

    /// Current policy pair; `target` selects the lagged copy.
    pub fn policy_pair(&self, s: &[f64], target: bool) -> Result<PolicyPair, LearnerError> {
        self.check_obs(s)?;
        let store = if target { &self.target } else { &self.store };
        Ok(self
            .heads
            .pair(store, s, self.ha.features(), self.hp.beta_t)?)
    }

    /// Samples from the behavior policy (the target copy of the mixture).
    pub fn act_behavior(&mut self, s: &[f64]) -> Result<Decision, LearnerError> {
        let pair = self.policy_pair(s, self.hp.behavior_from_target)?;
        let noise = draw_policy_noise(&mut self.rng, &pair);
        let sampled = compose_and_sample(&pair, &noise)?;
        Ok(Decision {
            action: sampled.action,
            log_density: sampled.log_density,
            component: sampled.component,
            pair,
        })
    }

    /// Deterministic action of the current policy at the median noise.
    pub fn act_eval(&self, s: &[f64], mode: EvalMode) -> Result<Decision, LearnerError> {
        let pair = self.policy_pair(s, false)?.with_mode(mode);
        let sampled = compose_and_sample(&pair, &PolicyNoise::median(self.action_dim))?;
        Ok(Decision {
            action: sampled.action,
            log_density: sampled.log_density,
            component: sampled.component,
            pair,
        })
    }

    fn draw_model_noise(&mut self) -> ModelNoise {
        let nu_q = self.model.encoder.nu(&self.store);
        let nu_fb = self.heads.fb.nu(&self.store);
        ModelNoise::draw(
            &mut self.rng,
            self.hp.latent_dim,
            nu_q,
            self.action_dim,
            nu_fb,
        )
    }

    /// Forward pass and the three per-group backward passes for one transition.
    pub fn gradient_parts(
        &self,
        tr: &Transition,
        noise: &ModelNoise,
    ) -> Result<GradientParts, LearnerError> {
        self.gradient_parts_with(tr, noise, Default::default())
    }

    fn gradient_parts_with(
        &self,
        tr: &Transition,
        noise: &ModelNoise,
        spare: [Gradients; 4],
    ) -> Result<GradientParts, LearnerError> {
        let [b0, b1, b2, b3] = spare;
        self.check_obs(&tr.s)?;
        self.check_obs(&tr.s_next)?;
        let hp = &self.hp;
        let mut tape = Tape::with_param_grads(&self.store, b0);
        let s = tape.constant(tr.s.clone());
        let s_next = tape.constant(tr.s_next.clone());
        let h_s = tape.constant(tr.h_s.clone());
        let h_a = tape.constant(tr.h_a.clone());
        let fb = self.heads.fb_tape(&mut tape, s)?;
        let ff = self.heads.ff_tape(&mut tape, h_a)?;
        let pair = PolicyPair::new(fb.value(&tape)?, ff.value(&tape)?, hp.beta_t)?;
        let a = tape.constant(tr.a.clone());
        let log_pi = mixture_logpdf(&mut tape, &fb, &ff, pair.w, a)?;
        let source = match tr.component {
            Component::Fb => &fb,
            Component::Ff => &ff,
        };
        let a_model = reexpress_action(&mut tape, source, &tr.a)?;
        let weights = ModelWeights {
            beta_z: hp.beta_z,
            beta_a: hp.beta_a,
            eta: hp.eta,
        };
        let parts = self.model.loss(
            &mut tape, s, s_next, h_s, &fb, &ff, pair.w, a_model, noise, weights,
        )?;
        let v = self.value.forward(&mut tape, s)?;
        let v_next = self.value.forward_values(&self.target, &tr.s_next)?[0];
        let v_s = tape.scalar(v);
        let delta = td_error(tr.r, v_s, v_next, tr.terminal, hp.gamma);
        let g = optimality_coeff(delta, hp.tau_opt);
        let l_traj = trajectory_loss(&mut tape, g, parts.total, log_pi);
        let l_value = value_loss(&mut tape, g, v);
        let l_all = total_loss(&mut tape, l_traj, l_value, parts.total, hp.tau_opt);
        let metrics = StepMetrics {
            w: pair.w,
            d: pair.d,
            h_fb: pair.h_fb,
            h_ff: pair.h_ff,
            delta,
            g,
            value: v_s,
            log_pi: tape.scalar(log_pi),
            loss_traj: tape.scalar(l_traj),
            loss_value: tape.scalar(l_value),
            loss_model: tape.scalar(parts.total),
            recon: tape.scalar(parts.recon),
            kl: tape.scalar(parts.kl_z),
            ce: tape.scalar(parts.ce_policy),
            loss_total: tape.scalar(l_all),
        };
        tape.backward(log_pi)?;
        let g_pi = tape.swap_param_grads(b1);
        tape.backward(v)?;
        let g_v = tape.swap_param_grads(b2);
        tape.backward(parts.total)?;
        let g_m = tape.swap_param_grads(b3);
        Ok(GradientParts {
            log_pi: g_pi,
            value: g_v,
            model: g_m,
            metrics,
        })
    }

    /// Gradient of `L_all` for the current transition, with the trajectory and
    /// value parts replaced by their eligibility traces. Equals the plain
    /// gradient of `L_all` when `trace_decay = 0` or on the first step of an
    /// episode.
    pub fn combine(&mut self, parts: &GradientParts) -> Gradients {
        let mut out = Gradients::new(self.store.len());
        self.combine_into(parts, &mut out);
        out
    }

    fn combine_into(&mut self, parts: &GradientParts, out: &mut Gradients) {
        let decay = self.hp.gamma * self.hp.trace_decay;
        let g = parts.metrics.g;
        let tau = self.hp.tau_opt;
        self.traces_pi
            .accumulate(decay, &[(&parts.log_pi, 1.0), (&parts.model, -1.0)]);
        self.traces_v.accumulate(decay, &[(&parts.value, 1.0)]);
        out.clear();
        // -g e + c m, where either term may be absent
        let mut write = |id: ParamId, e: Option<&[f64]>, m: Option<&[f64]>, c: f64| {
            let len = match (e, m) {
                (Some(v), _) | (None, Some(v)) => v.len(),
                (None, None) => return,
            };
            let dst = out.overwrite_mut(id, len);
            match (e, m) {
                (Some(e), Some(m)) => {
                    for ((d, ev), mv) in dst.iter_mut().zip(e).zip(m) {
                        *d = -g * ev + c * mv;
                    }
                }
                (Some(e), None) => {
                    for (d, ev) in dst.iter_mut().zip(e) {
                        *d = -g * ev;
                    }
                }
                (None, Some(m)) => {
                    for (d, mv) in dst.iter_mut().zip(m) {
                        *d = c * mv;
                    }
                }
                (None, None) => unreachable!(),
            }
        };
        for &id in &self.policy_ids {
            write(id, self.traces_pi.get(id), parts.model.get(id), tau);
        }
        for &id in &self.value_ids {
            write(id, self.traces_v.get(id), None, 0.0);
        }
        for &id in &self.model_ids {
            write(id, None, parts.model.get(id), g + tau);
        }
    }

    /// One online update from a single transition.
    pub fn train_step(&mut self, tr: &Transition) -> Result<StepMetrics, LearnerError> {
        let noise = self.draw_model_noise();
        let spare = std::mem::take(&mut self.spare);
        let parts = self.gradient_parts_with(tr, &noise, spare)?;
        let m = parts.metrics;
        let update = self.opt.steps + 1;
        let scalars = [
            ("delta", m.delta),
            ("log_pi", m.log_pi),
            ("loss_model", m.loss_model),
            ("loss_total", m.loss_total),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(LearnerError::NonFinite {
                    what: "loss",
                    update,
                    detail: format!("{name} = {v}; metrics {m:?}"),
                });
            }
        }
        let mut grads = std::mem::take(&mut self.spare[3]);
        self.combine_into(&parts, &mut grads);
        if !grads.all_finite() {
            return Err(LearnerError::NonFinite {
                what: "gradient",
                update,
                detail: format!("metrics {m:?}"),
            });
        }
        self.opt.step(&mut self.store, &grads);
        target_update(&mut self.target, &self.store, self.hp.target_rate);
        self.spare = [parts.log_pi, parts.value, parts.model, grads];
        Ok(m)
    }

    /// Runs one learning episode, at most `max_steps` transitions.
    pub fn train_episode<E: Environment + ?Sized>(
        &mut self,
        env: &mut E,
        max_steps: usize,
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<EpisodeStats, LearnerError> {
        self.begin_episode();
        let mut s = env.reset();
        let mut stats = EpisodeStats::default();
        for _ in 0..max_steps {
            let h_s = self.hs.features().to_vec();
            let h_a = self.ha.features().to_vec();
            let d = self.act_behavior(&s)?;
            let step = env.step(&d.action);
            let tr = Transition {
                s: s.clone(),
                a: d.action.clone(),
                r: step.reward,
                s_next: step.obs.clone(),
                terminal: step.terminal,
                behavior_log_density: d.log_density,
                component: d.component,
                h_s,
                h_a,
            };
            let m = self.train_step(&tr)?;
            on_step(&m);
            stats.push(step.reward, &m);
            self.observe(&s, &d.action)?;
            if step.done() {
                break;
            }
            s = step.obs;
        }
        Ok(stats)
    }
}

/// Per-episode aggregates of the step metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EpisodeStats {
    pub score: f64,
    pub steps: usize,
    pub sum: StepMetrics,
}

impl EpisodeStats {
    fn push(&mut self, r: f64, m: &StepMetrics) {
        self.score += r;
        self.steps += 1;
        let s = &mut self.sum;
        s.w += m.w;
        s.d += m.d;
        s.h_fb += m.h_fb;
        s.h_ff += m.h_ff;
        s.delta += m.delta;
        s.g += m.g;
        s.value += m.value;
        s.log_pi += m.log_pi;
        s.loss_traj += m.loss_traj;
        s.loss_value += m.loss_value;
        s.loss_model += m.loss_model;
        s.recon += m.recon;
        s.kl += m.kl;
        s.ce += m.ce;
        s.loss_total += m.loss_total;
    }

    /// Episode means of every step metric.
    pub fn mean(&self) -> StepMetrics {
        let n = self.steps.max(1) as f64;
        let s = &self.sum;
        StepMetrics {
            w: s.w / n,
            d: s.d / n,
            h_fb: s.h_fb / n,
            h_ff: s.h_ff / n,
            delta: s.delta / n,
            g: s.g / n,
            value: s.value / n,
            log_pi: s.log_pi / n,
            loss_traj: s.loss_traj / n,
            loss_value: s.loss_value / n,
            loss_model: s.loss_model / n,
            recon: s.recon / n,
            kl: s.kl / n,
            ce: s.ce / n,
            loss_total: s.loss_total / n,
        }
    }
}

//! Function approximators: three-layer MLP heads with layer normalization
//! and swish, and fixed-weight deep echo state networks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{dot, scalar, AutodiffError, ParamId, ParamStore, Tape, Var, LAYER_NORM_EPS};
use crate::distributions::{DistError, StudentT, StudentTVar};

/// Smallest scale a student-t head can emit.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("input dimension mismatch for {head}: expected {expected}, got {found}")]
    InputDim {
        head: String,
        expected: usize,
        found: usize,
    },
    #[error("reservoir recurrent matrix has zero spectral radius")]
    DegenerateReservoir,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

/// Three fully connected layers; layer normalization and swish follow the
/// first two.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    name: String,
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    dense: [Dense; 3],
    norms: [Norm; 2],
}

fn uniform_init<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl MlpHead {
    /// Registers the head's weights under `name.*` with fan-in scaled uniform init.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let sizes = [(in_dim, hidden), (hidden, hidden), (hidden, out_dim)];
        let mut dense = Vec::with_capacity(3);
        for (i, (fan_in, fan_out)) in sizes.into_iter().enumerate() {
            let w = store.add(
                format!("{name}.l{}.w", i + 1),
                fan_out,
                fan_in,
                uniform_init(rng, fan_in * fan_out, fan_in),
            )?;
            let b = store.add(
                format!("{name}.l{}.b", i + 1),
                fan_out,
                1,
                uniform_init(rng, fan_out, fan_in),
            )?;
            dense.push(Dense { w, b });
        }
        let mut norms = Vec::with_capacity(2);
        for i in 0..2 {
            let gain = store.add(
                format!("{name}.ln{}.g", i + 1),
                hidden,
                1,
                vec![1.0; hidden],
            )?;
            let bias = store.add(
                format!("{name}.ln{}.b", i + 1),
                hidden,
                1,
                vec![0.0; hidden],
            )?;
            norms.push(Norm { gain, bias });
        }
        Ok(Self {
            name: name.to_string(),
            in_dim,
            hidden,
            out_dim,
            dense: [dense[0], dense[1], dense[2]],
            norms: [norms[0], norms[1]],
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.dense.iter().flat_map(|d| [d.w, d.b]).collect();
        ids.extend(self.norms.iter().flat_map(|n| [n.gain, n.bias]));
        ids
    }

    fn check(&self, found: usize) -> Result<(), NetError> {
        if found == self.in_dim {
            Ok(())
        } else {
            Err(NetError::InputDim {
                head: self.name.clone(),
                expected: self.in_dim,
                found,
            })
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NetError> {
        self.check(tape.value(x).len())?;
        let mut h = x;
        for i in 0..2 {
            h = tape.linear(self.dense[i].w, self.dense[i].b, h)?;
            h = tape.layer_norm(h, Some((self.norms[i].gain, self.norms[i].bias)));
            h = tape.swish(h);
        }
        Ok(tape.linear(self.dense[2].w, self.dense[2].b, h)?)
    }

    /// Gradient-free forward pass straight from `store`.
    pub fn forward_values(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check(x.len())?;
        let mut h = x.to_vec();
        for i in 0..3 {
            let w = store.get(self.dense[i].w);
            let b = &store.get(self.dense[i].b).value;
            let mut out = b.clone();
            for (r, o) in out.iter_mut().enumerate() {
                *o += dot(&w.value[r * w.cols..(r + 1) * w.cols], &h);
            }
            if i < 2 {
                let n = out.len() as f64;
                let mean = out.iter().sum::<f64>() / n;
                let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                let g = &store.get(self.norms[i].gain).value;
                let bb = &store.get(self.norms[i].bias).value;
                for k in 0..out.len() {
                    out[k] = scalar::swish((out[k] - mean) * inv_std * g[k] + bb[k]);
                }
            }
            h = out;
        }
        Ok(h)
    }
}

/// How a student-t head obtains its degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DofMode {
    /// One learnable scalar per head, `1 + softplus(raw) + 1e-3`.
    Learned {
        init: f64,
    },
    Fixed(f64),
}

impl Default for DofMode {
    fn default() -> Self {
        DofMode::Learned { init: 10.0 }
    }
}

/// Inverse of the degrees-of-freedom transform.
fn dof_raw(nu: f64) -> f64 {
    let s = (nu - 1.0 - 1e-3).max(1e-6);
    // inverse softplus
    if s > 30.0 {
        s
    } else {
        s.exp_m1().ln()
    }
}

/// An MLP whose output is split into student-t location and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentTHead {
    mlp: MlpHead,
    dim: usize,
    nu_raw: Option<ParamId>,
    fixed_nu: f64,
}

impl StudentTHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        dim: usize,
        dof: DofMode,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let mlp = MlpHead::new(store, name, in_dim, hidden, 2 * dim, rng)?;
        let (nu_raw, fixed_nu) = match dof {
            DofMode::Learned { init } => (
                Some(store.add(format!("{name}.nu"), 1, 1, vec![dof_raw(init)])?),
                0.0,
            ),
            DofMode::Fixed(nu) => (None, nu),
        };
        Ok(Self {
            mlp,
            dim,
            nu_raw,
            fixed_nu,
        })
    }

    pub fn mlp(&self) -> &MlpHead {
        &self.mlp
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.mlp.param_ids();
        ids.extend(self.nu_raw);
        ids
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<StudentTVar, NetError> {
        let out = self.mlp.forward(tape, x)?;
        let mu = tape.slice(out, 0, self.dim);
        let raw = tape.slice(out, self.dim, self.dim);
        let sp = tape.softplus(raw);
        let sigma = tape.add_const(sp, SIGMA_FLOOR);
        let nu = match self.nu_raw {
            Some(id) => {
                let r = tape.param(id);
                let s = tape.softplus(r);
                tape.add_const(s, 1.0 + 1e-3)
            }
            None => tape.constant(vec![self.fixed_nu]),
        };
        Ok(StudentTVar { mu, sigma, nu })
    }

    /// Current degrees of freedom.
    pub fn nu(&self, store: &ParamStore) -> f64 {
        match self.nu_raw {
            Some(id) => 1.0 + scalar::softplus(store.get(id).value[0]) + 1e-3,
            None => self.fixed_nu,
        }
    }

    pub fn forward_values(&self, store: &ParamStore, x: &[f64]) -> Result<StudentT, NetError> {
        let out = self.mlp.forward_values(store, x)?;
        let mu = out[..self.dim].to_vec();
        let sigma = out[self.dim..]
            .iter()
            .map(|r| scalar::softplus(*r) + SIGMA_FLOOR)
            .collect();
        Ok(StudentT::new(mu, sigma, self.nu(store))?)
    }
}

/// Everything needed to regenerate a reservoir bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    pub seed: u64,
    pub inputs: usize,
    pub units: usize,
    pub layers: usize,
    /// Target spectral radius of every recurrent matrix.
    pub rho: f64,
    pub leak: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Reservoir {
    inputs: usize,
    w_in: Vec<f64>,
    w_rec: Vec<f64>,
    state: Vec<f64>,
}

/// Spectral radius of a square row-major matrix (real Schur decomposition).
pub fn spectral_radius(n: usize, data: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(n, n, data);
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Stacked fixed-weight reservoirs; layer `k` is driven by layer `k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoState {
    spec: ReservoirSpec,
    layers: Vec<Reservoir>,
    features: Vec<f64>,
}

impl EchoState {
    pub fn new(spec: ReservoirSpec) -> Result<Self, NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.units;
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let inputs = if l == 0 { spec.inputs } else { n };
            let w_in = (0..n * inputs)
                .map(|_| rng.random_range(-0.1..0.1))
                .collect();
            let mut w_rec: Vec<f64> = (0..n * n)
                .map(|_| rng.sample::<f64, _>(StandardNormal) / (n as f64).sqrt())
                .collect();
            let radius = spectral_radius(n, &w_rec);
            if radius <= 0.0 || !radius.is_finite() {
                return Err(NetError::DegenerateReservoir);
            }
            let scale = spec.rho / radius;
            w_rec.iter_mut().for_each(|w| *w *= scale);
            layers.push(Reservoir {
                inputs,
                w_in,
                w_rec,
                state: vec![0.0; n],
            });
        }
        Ok(Self {
            spec,
            layers,
            features: vec![0.0; n * spec.layers],
        })
    }

    pub fn spec(&self) -> &ReservoirSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.units * self.spec.layers
    }

    /// Row-major recurrent matrix of one layer.
    pub fn recurrent(&self, layer: usize) -> &[f64] {
        &self.layers[layer].w_rec
    }

    /// Concatenated layer states.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn reset(&mut self) {
        for l in &mut self.layers {
            l.state.iter_mut().for_each(|s| *s = 0.0);
        }
        self.features.iter_mut().for_each(|s| *s = 0.0);
    }

    /// One update `h <- (1 - leak) h + leak tanh(W_in x + W_rec h)` through every layer.
    pub fn step(&mut self, input: &[f64]) -> Result<&[f64], NetError> {
        if input.len() != self.spec.inputs {
            return Err(NetError::InputDim {
                head: "reservoir".into(),
                expected: self.spec.inputs,
                found: input.len(),
            });
        }
        let n = self.spec.units;
        let leak = self.spec.leak;
        let mut drive = input.to_vec();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let mut next = vec![0.0; n];
            for (i, v) in next.iter_mut().enumerate() {
                let pre = dot(
                    &layer.w_in[i * layer.inputs..(i + 1) * layer.inputs],
                    &drive,
                ) + dot(&layer.w_rec[i * n..(i + 1) * n], &layer.state);
                *v = (1.0 - leak) * layer.state[i] + leak * pre.tanh();
            }
            layer.state.copy_from_slice(&next);
            self.features[l * n..(l + 1) * n].copy_from_slice(&next);
            drive = next;
        }
        Ok(&self.features)
    }
}

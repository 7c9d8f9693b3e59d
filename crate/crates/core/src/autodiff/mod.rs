//! Reverse-mode automatic differentiation over dense `f64` vectors.
//!
//! A [`Tape`] is rebuilt for every training step. Nodes are appended in
//! topological order, so backward is a single reverse sweep. Trainable
//! weights live in a [`ParamStore`] that the tape borrows immutably; their
//! gradients are accumulated into a [`Gradients`] map owned by the tape.

mod check;
mod params;

pub use check::{grad_check, grad_check_params};
pub use params::{Gradients, ParamId, ParamStore, Parameter};

use thiserror::Error;

use crate::distributions::{student_t_logpdf_1d, student_t_logpdf_grads_1d};

/// Inputs to `exp` are clamped to this value before exponentiation.
pub const EXP_CLAMP: f64 = 30.0;

/// Epsilon inside the layer-normalization square root.
pub const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("backward root must be scalar, got length {0}")]
    NonScalarRoot(usize),
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear {
        w: ParamId,
        b: ParamId,
        x: Var,
    },
    LayerNorm {
        x: Var,
        affine: Option<(ParamId, ParamId)>,
        inv_std: f64,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Swish(Var),
    Sum(Var),
    Slice {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    StopGradient,
    StudentTLogPdf {
        x: Var,
        mu: Var,
        sigma: Var,
        nu: Var,
    },
    LogMix {
        a: Var,
        b: Var,
        resp_a: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// A dynamic computation graph.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    param_grads: Gradients,
    exp_clamp_hits: usize,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) mod scalar {
    pub use super::{sigmoid, softplus};

    pub fn swish(x: f64) -> f64 {
        x * sigmoid(x)
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self::with_param_grads(store, Gradients::new(store.len()))
    }

    /// A tape that accumulates into recycled gradient buffers.
    pub fn with_param_grads(store: &'p ParamStore, mut grads: Gradients) -> Self {
        grads.clear();
        Self {
            store,
            nodes: Vec::with_capacity(256),
            leaf_grads: Vec::new(),
            param_grads: grads,
            exp_clamp_hits: 0,
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of `exp` evaluations whose input exceeded [`EXP_CLAMP`].
    pub fn exp_clamp_hits(&self) -> usize {
        self.exp_clamp_hits
    }

    fn push(&mut self, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// First element of a node's value; intended for scalar nodes.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Differentiable input leaf.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives gradient.
    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.get(id).value.clone();
        self.push(value, Op::Param(id), true)
    }

    /// `W x + b` with `W` of shape `out x in`, read directly from the store.
    pub fn linear(&mut self, w: ParamId, b: ParamId, x: Var) -> Result<Var, AutodiffError> {
        let wp = self.store.get(w);
        let bp = self.store.get(b);
        let xv = &self.nodes[x.0].value;
        if wp.cols != xv.len() || bp.len() != wp.rows {
            return Err(AutodiffError::ShapeMismatch {
                context: format!("linear {}", wp.name),
                expected: wp.cols,
                found: xv.len(),
            });
        }
        let mut out = bp.value.clone();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wp.value[r * wp.cols..(r + 1) * wp.cols];
            *o += dot(row, xv);
        }
        Ok(self.push(out, Op::Linear { w, b, x }, true))
    }

    /// Layer normalization over the whole vector, with optional learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, affine: Option<(ParamId, ParamId)>) -> Var {
        let xv = &self.nodes[x.0].value;
        let n = xv.len() as f64;
        let mean = xv.iter().sum::<f64>() / n;
        let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let mut out: Vec<f64> = xv.iter().map(|v| (v - mean) * inv_std).collect();
        if let Some((g, b)) = affine {
            let gv = &self.store.get(g).value;
            let bv = &self.store.get(b).value;
            for ((o, g), b) in out.iter_mut().zip(gv).zip(bv) {
                *o = *o * g + b;
            }
        }
        let rg = self.rg(x) || affine.is_some();
        self.push(out, Op::LayerNorm { x, affine, inv_std }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let out: Vec<f64> = match (av.len(), bv.len()) {
            (n, m) if n == m => av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect(),
            (1, _) => bv.iter().map(|y| f(av[0], *y)).collect(),
            (_, 1) => av.iter().map(|x| f(*x, bv[0])).collect(),
            (n, m) => panic!("incompatible lengths {n} and {m}"),
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    /// Elementwise sum; a length-1 operand is broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| f(*v)).collect();
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::Shift(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let hits = self.nodes[x.0]
            .value
            .iter()
            .filter(|v| **v > EXP_CLAMP)
            .count();
        self.exp_clamp_hits += hits;
        self.unary(x, |v| v.min(EXP_CLAMP).exp(), Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Var {
        self.unary(x, scalar::swish, Op::Swish(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        let rg = self.rg(x);
        self.push(vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.nodes[x.0].value[start..start + len].to_vec();
        let rg = self.rg(x);
        self.push(out, Op::Slice { x, start }, rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    /// Same value, no gradient flow.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.clone();
        self.push(out, Op::StopGradient, false)
    }

    /// Sum over dimensions of univariate student-t log-densities of `x`
    /// under location `mu`, scale `sigma` and scalar degrees of freedom `nu`.
    pub fn student_t_logpdf(
        &mut self,
        x: Var,
        mu: Var,
        sigma: Var,
        nu: Var,
    ) -> Result<Var, AutodiffError> {
        let n = self.nodes[x.0].value.len();
        for (v, what) in [(mu, "mu"), (sigma, "sigma")] {
            let m = self.nodes[v.0].value.len();
            if m != n {
                return Err(AutodiffError::ShapeMismatch {
                    context: format!("student-t {what}"),
                    expected: n,
                    found: m,
                });
            }
        }
        let nu_v = self.nodes[nu.0].value[0];
        let xv = &self.nodes[x.0].value;
        let mv = &self.nodes[mu.0].value;
        let sv = &self.nodes[sigma.0].value;
        let total = (0..n)
            .map(|i| student_t_logpdf_1d(xv[i], mv[i], sv[i], nu_v))
            .sum();
        let rg = self.rg(x) || self.rg(mu) || self.rg(sigma) || self.rg(nu);
        Ok(self.push(vec![total], Op::StudentTLogPdf { x, mu, sigma, nu }, rg))
    }

    /// `ln(w e^a + (1 - w) e^b)` for scalar nodes `a`, `b` and a constant weight `w`.
    pub fn log_mix(&mut self, a: Var, b: Var, w: f64) -> Var {
        let la = self.nodes[a.0].value[0];
        let lb = self.nodes[b.0].value[0];
        let out = crate::distributions::log_mix(w, la, lb);
        // responsibility of component a: w e^a / mixture
        let resp_a = if w <= 0.0 {
            0.0
        } else if w >= 1.0 {
            1.0
        } else {
            (w.ln() + la - out).exp().clamp(0.0, 1.0)
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(vec![out], Op::LogMix { a, b, resp_a }, rg)
    }

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> &Gradients {
        &self.param_grads
    }

    pub fn take_param_grads(&mut self) -> Gradients {
        std::mem::replace(&mut self.param_grads, Gradients::new(self.store.len()))
    }

    /// Hands out the accumulated parameter gradients and continues with
    /// `spare` (cleared first) so its buffers are reused.
    pub fn swap_param_grads(&mut self, mut spare: Gradients) -> Gradients {
        spare.clear();
        std::mem::replace(&mut self.param_grads, spare)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
        self.param_grads.clear();
    }

    /// Reverse sweep from a scalar root. Gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<(), AutodiffError> {
        let len = self.nodes[root.0].value.len();
        if len != 1 {
            return Err(AutodiffError::NonScalarRoot(len));
        }
        if !self.rg(root) {
            return Ok(());
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[root.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.backprop_node(i, &g, &mut adj);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let store = self.store;
        let nodes = &self.nodes;
        let node = &nodes[i];
        if !node.requires_grad {
            return;
        }
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let len = nodes[v.0].value.len();
                let slot = adj[v.0].get_or_insert_with(|| vec![0.0; len]);
                f(slot);
            }
        };
        match &node.op {
            Op::Leaf => {
                if i >= self.leaf_grads.len() {
                    self.leaf_grads.resize(i + 1, None);
                }
                let slot = self.leaf_grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                add_into(slot, g);
            }
            Op::Param(id) => self.param_grads.add(*id, g),
            Op::Linear { w, b, x } => {
                let wp = store.get(*w);
                let xv = &nodes[x.0].value;
                {
                    let dw = self.param_grads.slot_mut(*w, wp.len());
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            let row = &mut dw[r * wp.cols..(r + 1) * wp.cols];
                            for (d, xi) in row.iter_mut().zip(xv) {
                                *d += gr * xi;
                            }
                        }
                    }
                }
                self.param_grads.add(*b, g);
                acc(*x, &|dx| {
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            let row = &wp.value[r * wp.cols..(r + 1) * wp.cols];
                            for (d, wv) in dx.iter_mut().zip(row) {
                                *d += gr * wv;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, affine, inv_std } => {
                let xv = &nodes[x.0].value;
                let n = xv.len() as f64;
                let mean = xv.iter().sum::<f64>() / n;
                let xhat: Vec<f64> = xv.iter().map(|v| (v - mean) * inv_std).collect();
                let dxhat: Vec<f64> = match affine {
                    Some((gid, bid)) => {
                        let gain = &store.get(*gid).value;
                        let dgain: Vec<f64> = g.iter().zip(&xhat).map(|(a, b)| a * b).collect();
                        self.param_grads.add(*gid, &dgain);
                        self.param_grads.add(*bid, g);
                        g.iter().zip(gain).map(|(a, b)| a * b).collect()
                    }
                    None => g.to_vec(),
                };
                let m1 = dxhat.iter().sum::<f64>() / n;
                let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                acc(*x, &|dx| {
                    for ((d, dh), xh) in dx.iter_mut().zip(&dxhat).zip(&xhat) {
                        *d += inv_std * (dh - m1 - xh * m2);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|d| reduce_into(d, g, |gi, _| gi));
                acc(*b, &|d| reduce_into(d, g, |gi, _| gi));
            }
            Op::Sub(a, b) => {
                acc(*a, &|d| reduce_into(d, g, |gi, _| gi));
                acc(*b, &|d| reduce_into(d, g, |gi, _| -gi));
            }
            Op::Mul(a, b) => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                acc(*a, &|d| reduce_into(d, g, |gi, k| gi * bcast(bv, k)));
                acc(*b, &|d| reduce_into(d, g, |gi, k| gi * bcast(av, k)));
            }
            Op::Scale(x, c) => acc(*x, &|d| {
                for (di, gi) in d.iter_mut().zip(g) {
                    *di += gi * c;
                }
            }),
            Op::Shift(x) => acc(*x, &|d| add_into(d, g)),
            Op::Exp(x) => {
                let xv = &nodes[x.0].value;
                let y = &node.value;
                acc(*x, &|d| {
                    for k in 0..d.len() {
                        if xv[k] <= EXP_CLAMP {
                            d[k] += g[k] * y[k];
                        }
                    }
                });
            }
            Op::Ln(x) => {
                let xv = &nodes[x.0].value;
                acc(*x, &|d| elementwise(d, g, xv, |_, xi| 1.0 / xi));
            }
            Op::Tanh(x) => {
                let y = &node.value;
                acc(*x, &|d| elementwise(d, g, y, |_, yi| 1.0 - yi * yi));
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                acc(*x, &|d| elementwise(d, g, y, |_, yi| yi * (1.0 - yi)));
            }
            Op::Softplus(x) => {
                let xv = &nodes[x.0].value;
                acc(*x, &|d| elementwise(d, g, xv, |_, xi| sigmoid(xi)));
            }
            Op::Swish(x) => {
                let xv = &nodes[x.0].value;
                acc(*x, &|d| {
                    elementwise(d, g, xv, |_, xi| {
                        let s = sigmoid(xi);
                        s + xi * s * (1.0 - s)
                    })
                });
            }
            Op::Sum(x) => acc(*x, &|d| {
                for di in d.iter_mut() {
                    *di += g[0];
                }
            }),
            Op::Slice { x, start } => acc(*x, &|d| add_into(&mut d[*start..*start + g.len()], g)),
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    acc(*p, &|d| add_into(d, &g[off..off + len]));
                    off += len;
                }
            }
            Op::StopGradient => {}
            Op::StudentTLogPdf { x, mu, sigma, nu } => {
                let xv = &nodes[x.0].value;
                let mv = &nodes[mu.0].value;
                let sv = &nodes[sigma.0].value;
                let nu_v = nodes[nu.0].value[0];
                let mut dx = vec![0.0; xv.len()];
                let mut ds = vec![0.0; xv.len()];
                let mut dnu = 0.0;
                for k in 0..xv.len() {
                    let gr = student_t_logpdf_grads_1d(xv[k], mv[k], sv[k], nu_v);
                    dx[k] = g[0] * gr.x;
                    ds[k] = g[0] * gr.sigma;
                    dnu += g[0] * gr.nu;
                }
                acc(*x, &|d| add_into(d, &dx));
                acc(*mu, &|d| {
                    for (di, v) in d.iter_mut().zip(&dx) {
                        *di -= v;
                    }
                });
                acc(*sigma, &|d| add_into(d, &ds));
                acc(*nu, &|d| d[0] += dnu);
            }
            Op::LogMix { a, b, resp_a } => {
                acc(*a, &|d| d[0] += g[0] * resp_a);
                acc(*b, &|d| d[0] += g[0] * (1.0 - resp_a));
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn elementwise(d: &mut [f64], g: &[f64], v: &[f64], f: impl Fn(f64, f64) -> f64) {
    for k in 0..d.len() {
        d[k] += g[k] * f(g[k], v[k]);
    }
}

fn bcast(v: &[f64], k: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[k]
    }
}

/// Accumulates `f(g[k], k)` into `d`, summing over broadcast dimensions when
/// `d` is a length-1 operand.
fn reduce_into(d: &mut [f64], g: &[f64], f: impl Fn(f64, usize) -> f64) {
    if d.len() == g.len() {
        for k in 0..g.len() {
            d[k] += f(g[k], k);
        }
    } else {
        d[0] += (0..g.len()).map(|k| f(g[k], k)).sum::<f64>();
    }
}

#![allow(dead_code)]

use fbff::autodiff::{grad_check, grad_check_params, AutodiffError, ParamStore, Tape, Var};
use fbff::distributions::{mc_cross_entropy, mc_kl, mixture_logpdf, StudentTVar, TNoise};
use fbff::networks::{DofMode, StudentTHead};
use fbff::world_model::{ModelNoise, ModelWeights, WorldModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// `sum_i c_i x_i` with fixed random weights, so no coordinate is trivially symmetric.
fn weighted_sum(t: &mut Tape, x: Var, c: &[f64]) -> Var {
    let cv = t.constant(c.to_vec());
    let p = t.mul(x, cv);
    t.sum(p)
}

type Unary = fn(&mut Tape, Var) -> Var;
type Binary = fn(&mut Tape, Var, Var) -> Var;

/// Checks `f` at `instances` random points, returning the worst relative error.
fn check_inputs(
    rng: &mut ChaCha8Rng,
    instances: usize,
    dim: std::ops::RangeInclusive<usize>,
    lo: f64,
    hi: f64,
    f: impl Fn(&mut Tape, Var, &[f64]) -> Result<Var, AutodiffError>,
) -> f64 {
    let store = ParamStore::new();
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let n = rng.random_range(dim.clone());
        let x = uniform(rng, n, lo, hi);
        let c = uniform(rng, n + 4, -1.0, 1.0);
        let err = grad_check(&store, &x, EPS, |t, v| f(t, v, &c)).expect("finite objective");
        worst = worst.max(err);
    }
    worst
}

/// Splits one leaf into a student-t distribution over `n` dimensions:
/// `[x | mu | sigma | nu]`.
fn split_t(t: &mut Tape, v: Var, n: usize) -> (Var, StudentTVar) {
    let x = t.slice(v, 0, n);
    let mu = t.slice(v, n, n);
    let sigma = t.slice(v, 2 * n, n);
    let nu = t.slice(v, 3 * n, 1);
    (x, StudentTVar { mu, sigma, nu })
}

fn t_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v = uniform(rng, n, -3.0, 3.0);
    v.extend(uniform(rng, n, -1.0, 1.0));
    v.extend(uniform(rng, n, 0.3, 2.0));
    v.push(rng.random_range(1.5..30.0));
    v
}

/// Worst central-difference relative error of every differentiable
/// operation and composite, `instances` random draws each.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let unary: [(&'static str, Unary, f64, f64); 7] = [
        ("exp", |t, x| t.exp(x), -3.0, 3.0),
        ("ln", |t, x| t.ln(x), 0.1, 5.0),
        ("tanh", |t, x| t.tanh(x), -3.0, 3.0),
        ("sigmoid", |t, x| t.sigmoid(x), -6.0, 6.0),
        ("softplus", |t, x| t.softplus(x), -6.0, 6.0),
        ("swish", |t, x| t.swish(x), -6.0, 6.0),
        ("neg", |t, x| t.neg(x), -3.0, 3.0),
    ];
    for (name, op, lo, hi) in unary {
        let err = check_inputs(&mut rng, instances, 1..=6, lo, hi, |t, x, c| {
            let y = op(t, x);
            let n = t.value(x).len();
            Ok(weighted_sum(t, y, &c[..n]))
        });
        out.push((name, err));
    }

    let scale_c: f64 = rng.random_range(-2.0..2.0);
    out.push((
        "scale/add_const",
        check_inputs(&mut rng, instances, 1..=6, -3.0, 3.0, |t, x, c| {
            let y = t.scale(x, scale_c);
            let y = t.add_const(y, 0.7);
            let y = t.mul(y, y);
            let n = t.value(x).len();
            Ok(weighted_sum(t, y, &c[..n]))
        }),
    ));
    // binary ops take both operands from halves of one leaf
    let binary: [(&'static str, Binary); 3] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
    ];
    for (name, op) in binary {
        let err = check_inputs(&mut rng, instances, 1..=5, -3.0, 3.0, |t, x, c| {
            let n = t.value(x).len();
            let a = t.slice(x, 0, n);
            let sq = t.mul(x, x);
            let b = t.tanh(sq);
            let y = op(t, a, b);
            Ok(weighted_sum(t, y, &c[..n]))
        });
        out.push((name, err));
    }
    out.push((
        "sum/mean",
        check_inputs(&mut rng, instances, 1..=8, -3.0, 3.0, |t, x, _| {
            let sq = t.mul(x, x);
            let s = t.sum(sq);
            let m = t.mean(x);
            let m3 = t.mul(m, m);
            Ok(t.add(s, m3))
        }),
    ));
    out.push((
        "slice/concat",
        check_inputs(&mut rng, instances, 3..=8, -3.0, 3.0, |t, x, c| {
            let n = t.value(x).len();
            let a = t.slice(x, 1, n - 1);
            let b = t.slice(x, 0, 2);
            let e = t.exp(b);
            let y = t.concat(&[e, a, b]);
            Ok(weighted_sum(t, y, &c[..n + 3]))
        }),
    ));
    out.push((
        "layer_norm",
        check_inputs(&mut rng, instances, 2..=8, -3.0, 3.0, |t, x, c| {
            let y = t.layer_norm(x, None);
            let n = t.value(x).len();
            Ok(weighted_sum(t, y, &c[..n]))
        }),
    ));

    // student-t log-density with respect to x, mu, sigma and nu together
    let mut worst = 0.0_f64;
    let store = ParamStore::new();
    for _ in 0..instances {
        let n = rng.random_range(1..=4);
        let p = t_point(&mut rng, n);
        let err = grad_check(&store, &p, EPS, |t, v| {
            let (x, d) = split_t(t, v, n);
            t.student_t_logpdf(x, d.mu, d.sigma, d.nu)
        })
        .expect("finite");
        worst = worst.max(err);
    }
    out.push(("student_t_logpdf", worst));

    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let p = uniform(&mut rng, 2, -8.0, 2.0);
        let w = rng.random_range(0.0..1.0);
        let err = grad_check(&store, &p, EPS, |t, v| {
            let a = t.slice(v, 0, 1);
            let b = t.slice(v, 1, 1);
            Ok(t.log_mix(a, b, w))
        })
        .expect("finite");
        worst = worst.max(err);
    }
    out.push(("log_mix", worst));

    // mixture density of two heads sharing one query point
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let n = rng.random_range(1..=3);
        let mut p = t_point(&mut rng, n);
        p.extend(t_point(&mut rng, n)[n..].iter().copied());
        let w = rng.random_range(0.0..1.0);
        let err = grad_check(&store, &p, EPS, |t, v| {
            let (x, fb) = split_t(t, v, n);
            let rest = t.slice(v, 3 * n + 1, 2 * n + 1);
            let ff = StudentTVar {
                mu: t.slice(rest, 0, n),
                sigma: t.slice(rest, n, n),
                nu: t.slice(rest, 2 * n, 1),
            };
            Ok(mixture_logpdf(t, &fb, &ff, w, x).expect("valid ratio"))
        })
        .expect("finite");
        worst = worst.max(err);
    }
    out.push(("mixture_logpdf", worst));

    // Monte Carlo KL and cross entropy through reparameterized draws
    for (name, ce) in [("mc_kl", false), ("mc_cross_entropy", true)] {
        let mut worst = 0.0_f64;
        for _ in 0..instances {
            let n = rng.random_range(1..=3);
            let a = t_point(&mut rng, n);
            let b = t_point(&mut rng, n);
            let mut p = a[n..].to_vec();
            p.extend_from_slice(&b[n..]);
            let nu_q = a[3 * n];
            let noise: Vec<TNoise> = (0..3).map(|_| TNoise::draw(&mut rng, n, nu_q)).collect();
            let err = grad_check(&store, &p, EPS, |t, v| {
                let q = StudentTVar {
                    mu: t.slice(v, 0, n),
                    sigma: t.slice(v, n, n),
                    nu: t.slice(v, 2 * n, 1),
                };
                let r = StudentTVar {
                    mu: t.slice(v, 2 * n + 1, n),
                    sigma: t.slice(v, 3 * n + 1, n),
                    nu: t.slice(v, 4 * n + 1, 1),
                };
                let y = if ce {
                    mc_cross_entropy(t, &q, &r, &noise)
                } else {
                    mc_kl(t, &q, &r, &noise)
                };
                Ok(y.expect("noise matches"))
            })
            .expect("finite");
            worst = worst.max(err);
        }
        out.push((name, worst));
    }

    // parameterized layers: input and parameter gradients
    let mut worst = 0.0_f64;
    for i in 0..instances {
        let (din, dout) = (rng.random_range(1..=5), rng.random_range(1..=4));
        let mut store = ParamStore::new();
        let w = store
            .add(
                format!("w{i}"),
                dout,
                din,
                uniform(&mut rng, din * dout, -1.0, 1.0),
            )
            .unwrap();
        let b = store
            .add(format!("b{i}"), dout, 1, uniform(&mut rng, dout, -1.0, 1.0))
            .unwrap();
        let x = uniform(&mut rng, din, -2.0, 2.0);
        let c = uniform(&mut rng, dout, -1.0, 1.0);
        let f = |t: &mut Tape, xv: Var| -> Result<Var, AutodiffError> {
            let y = t.linear(w, b, xv)?;
            let y = t.tanh(y);
            Ok(weighted_sum(t, y, &c))
        };
        worst = worst.max(grad_check(&store, &x, EPS, f).unwrap());
        let err = grad_check_params(&store, &[w, b], EPS, 1, |t| {
            let xv = t.constant(x.clone());
            f(t, xv)
        })
        .unwrap();
        worst = worst.max(err);
    }
    out.push(("linear", worst));

    let mut worst = 0.0_f64;
    for i in 0..instances {
        let n = rng.random_range(2..=6);
        let mut store = ParamStore::new();
        let g = store
            .add(format!("g{i}"), n, 1, uniform(&mut rng, n, 0.5, 1.5))
            .unwrap();
        let b = store
            .add(format!("b{i}"), n, 1, uniform(&mut rng, n, -0.5, 0.5))
            .unwrap();
        let x = uniform(&mut rng, n, -2.0, 2.0);
        let c = uniform(&mut rng, n, -1.0, 1.0);
        let f = |t: &mut Tape, xv: Var| -> Result<Var, AutodiffError> {
            let y = t.layer_norm(xv, Some((g, b)));
            let y = t.swish(y);
            Ok(weighted_sum(t, y, &c))
        };
        worst = worst.max(grad_check(&store, &x, EPS, f).unwrap());
        let err = grad_check_params(&store, &[g, b], EPS, 1, |t| {
            let xv = t.constant(x.clone());
            f(t, xv)
        })
        .unwrap();
        worst = worst.max(err);
    }
    out.push(("layer_norm_affine", worst));

    // whole heads: a student-t head's log-density of a fixed point
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let mut store = ParamStore::new();
        let (din, dim) = (rng.random_range(1..=4), rng.random_range(1..=3));
        let head = StudentTHead::new(
            &mut store,
            "h",
            din,
            6,
            dim,
            DofMode::Learned { init: 5.0 },
            &mut rng,
        )
        .unwrap();
        let x = uniform(&mut rng, din, -2.0, 2.0);
        let a = uniform(&mut rng, dim, -2.0, 2.0);
        let f = |t: &mut Tape, xv: Var| -> Result<Var, AutodiffError> {
            let d = head.forward(t, xv).expect("shapes");
            let av = t.constant(a.clone());
            d.logpdf(t, av)
                .map_err(|e| AutodiffError::NonFinite(e.to_string()))
        };
        worst = worst.max(grad_check(&store, &x, EPS, f).unwrap());
        let err = grad_check_params(&store, &head.param_ids(), EPS, 3, |t| {
            let xv = t.constant(x.clone());
            f(t, xv)
        })
        .unwrap();
        worst = worst.max(err);
    }
    out.push(("student_t_head", worst));

    // The full model bound. The cut and the re-expression deliberately
    // disagree with finite differences, so the action enters as a plain
    // constant and eta is 1 here; both have their own unit tests.
    let mut worst = 0.0_f64;
    let model_instances = instances.div_ceil(10);
    for _ in 0..model_instances {
        let mut store = ParamStore::new();
        let (ds, da, dh, dz) = (3, 2, 4, 2);
        let wm = WorldModel::new(
            &mut store,
            ds,
            da,
            dh,
            dz,
            6,
            DofMode::Learned { init: 8.0 },
            &mut rng,
        )
        .unwrap();
        let fb = StudentTHead::new(
            &mut store,
            "fb",
            ds,
            6,
            da,
            DofMode::Learned { init: 8.0 },
            &mut rng,
        )
        .unwrap();
        let ff = StudentTHead::new(
            &mut store,
            "ff",
            dh,
            6,
            da,
            DofMode::Learned { init: 8.0 },
            &mut rng,
        )
        .unwrap();
        let s = uniform(&mut rng, ds, -1.0, 1.0);
        let s2 = uniform(&mut rng, ds, -1.0, 1.0);
        let hs = uniform(&mut rng, dh, -1.0, 1.0);
        let ha = uniform(&mut rng, dh, -1.0, 1.0);
        let act = uniform(&mut rng, da, -1.0, 1.0);
        let noise = ModelNoise::draw(&mut rng, dz, 8.0, da, 8.0);
        let weights = ModelWeights {
            beta_z: 0.3,
            beta_a: 0.2,
            eta: 1.0,
        };
        let mut ids = wm.param_ids();
        ids.extend(fb.param_ids());
        ids.extend(ff.param_ids());
        let err = grad_check_params(&store, &ids, EPS, 7, |t| {
            let sv = t.constant(s.clone());
            let s2v = t.constant(s2.clone());
            let hsv = t.constant(hs.clone());
            let hav = t.constant(ha.clone());
            let pf = fb.forward(t, sv).expect("shapes");
            let pg = ff.forward(t, hav).expect("shapes");
            let a = t.constant(act.clone());
            let parts = wm
                .loss(t, sv, s2v, hsv, &pf, &pg, 0.6, a, &noise, weights)
                .expect("shapes");
            Ok(parts.total)
        })
        .unwrap();
        worst = worst.max(err);
    }
    out.push(("model_loss", worst));
    out
}

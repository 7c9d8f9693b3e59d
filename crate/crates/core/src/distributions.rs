//! Diagonal student-t distributions, their two-component mixture, and
//! Monte Carlo divergence estimators.
//!
//! Every stochastic head in the agent emits a [`StudentTVar`] on the tape.
//! Plain-value twins ([`StudentT`], [`MixturePolicyDist`]) are used while
//! acting, where no gradient is needed.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("degrees of freedom must be positive and finite, got {0}")]
    InvalidDof(f64),
    #[error("mixture ratio must lie in [0, 1], got {0}")]
    InvalidMixtureRatio(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("at least one Monte Carlo sample is required")]
    NoSamples,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub fn student_t_logpdf_1d(x: f64, mu: f64, sigma: f64, nu: f64) -> f64 {
    let y = (x - mu) / sigma;
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - sigma.ln()
        - 0.5 * (nu + 1.0) * (y * y / nu).ln_1p()
}

/// Partial derivatives of [`student_t_logpdf_1d`]; `d/dmu == -x`.
#[derive(Debug, Clone, Copy)]
pub struct StudentTGrads {
    pub x: f64,
    pub sigma: f64,
    pub nu: f64,
}

pub fn student_t_logpdf_grads_1d(x: f64, mu: f64, sigma: f64, nu: f64) -> StudentTGrads {
    let y = (x - mu) / sigma;
    let y2 = y * y;
    let q = 1.0 + y2 / nu;
    StudentTGrads {
        x: -(nu + 1.0) * y / (nu * sigma * q),
        sigma: -1.0 / sigma + (nu + 1.0) * y2 / (nu * sigma * q),
        nu: 0.5 * digamma(0.5 * (nu + 1.0))
            - 0.5 * digamma(0.5 * nu)
            - 0.5 / nu
            - 0.5 * (y2 / nu).ln_1p()
            + 0.5 * (nu + 1.0) * y2 / (nu * nu * q),
    }
}

/// Differential entropy of a univariate student-t with unit scale.
fn student_t_entropy_unit(nu: f64) -> f64 {
    let half = 0.5 * nu;
    let ln_beta = ln_gamma(half) + ln_gamma(0.5) - ln_gamma(half + 0.5);
    0.5 * (nu + 1.0) * (digamma(half + 0.5) - digamma(half)) + 0.5 * nu.ln() + ln_beta
}

/// `ln(w e^a + (1 - w) e^b)` evaluated without overflow.
pub fn log_mix(w: f64, a: f64, b: f64) -> f64 {
    if w >= 1.0 {
        return a;
    }
    if w <= 0.0 {
        return b;
    }
    let la = w.ln() + a;
    let lb = (1.0 - w).ln() + b;
    let m = la.max(lb);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((la - m).exp() + (lb - m).exp()).ln()
}

/// Externally supplied noise for one reparameterized draw: a standard normal
/// and a chi-square variate per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TNoise {
    pub normal: Vec<f64>,
    pub chi2: Vec<f64>,
    /// Degrees of freedom the chi-square variates were drawn with.
    pub nu: f64,
}

impl TNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, dim: usize, nu: f64) -> Self {
        let chi = ChiSquared::new(nu).expect("degrees of freedom validated by caller");
        let normal = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let chi2 = (0..dim).map(|_| chi.sample(rng)).collect();
        Self { normal, chi2, nu }
    }

    /// The median draw: every standard-t variate is zero.
    pub fn median(dim: usize) -> Self {
        Self {
            normal: vec![0.0; dim],
            chi2: vec![1.0; dim],
            nu: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// Standard student-t variates `n / sqrt(c / nu)`.
    pub fn variates(&self) -> Vec<f64> {
        self.normal
            .iter()
            .zip(&self.chi2)
            .map(|(n, c)| {
                if *n == 0.0 {
                    0.0
                } else {
                    n / (c / self.nu).sqrt()
                }
            })
            .collect()
    }
}

/// Diagonal student-t with a shared degrees-of-freedom scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentT {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    nu: f64,
}

impl StudentT {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, nu: f64) -> Result<Self, DistError> {
        if mu.len() != sigma.len() {
            return Err(DistError::DimensionMismatch(mu.len(), sigma.len()));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(DistError::NonPositiveScale(*s));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(DistError::InvalidDof(nu));
        }
        Ok(Self { mu, sigma, nu })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn logpdf(&self, x: &[f64]) -> Result<f64, DistError> {
        if x.len() != self.dim() {
            return Err(DistError::DimensionMismatch(x.len(), self.dim()));
        }
        Ok((0..self.dim())
            .map(|i| student_t_logpdf_1d(x[i], self.mu[i], self.sigma[i], self.nu))
            .sum())
    }

    pub fn entropy(&self) -> f64 {
        let unit = student_t_entropy_unit(self.nu);
        self.sigma.iter().map(|s| unit + s.ln()).sum()
    }

    pub fn sample(&self, noise: &TNoise) -> Vec<f64> {
        let t = noise.variates();
        (0..self.dim())
            .map(|i| self.mu[i] + self.sigma[i] * t[i])
            .collect()
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> TNoise {
        TNoise::draw(rng, self.dim(), self.nu)
    }
}

/// Two-component mixture `w * fb + (1 - w) * ff`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicyDist {
    pub fb: StudentT,
    pub ff: StudentT,
    w: f64,
}

impl MixturePolicyDist {
    pub fn new(fb: StudentT, ff: StudentT, w: f64) -> Result<Self, DistError> {
        if !(0.0..=1.0).contains(&w) {
            return Err(DistError::InvalidMixtureRatio(w));
        }
        if fb.dim() != ff.dim() {
            return Err(DistError::DimensionMismatch(fb.dim(), ff.dim()));
        }
        Ok(Self { fb, ff, w })
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn logpdf(&self, x: &[f64]) -> Result<f64, DistError> {
        let lf = if self.w > 0.0 {
            self.fb.logpdf(x)?
        } else {
            f64::NEG_INFINITY
        };
        let lg = if self.w < 1.0 {
            self.ff.logpdf(x)?
        } else {
            f64::NEG_INFINITY
        };
        Ok(log_mix(self.w, lf, lg))
    }
}

/// A student-t head living on a tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentTVar {
    pub mu: Var,
    pub sigma: Var,
    /// Scalar node.
    pub nu: Var,
}

impl StudentTVar {
    pub fn dim(&self, tape: &Tape) -> usize {
        tape.value(self.mu).len()
    }

    /// Snapshot of the current values.
    pub fn value(&self, tape: &Tape) -> Result<StudentT, DistError> {
        StudentT::new(
            tape.value(self.mu).to_vec(),
            tape.value(self.sigma).to_vec(),
            tape.scalar(self.nu),
        )
    }

    pub fn logpdf(&self, tape: &mut Tape, x: Var) -> Result<Var, DistError> {
        Ok(tape.student_t_logpdf(x, self.mu, self.sigma, self.nu)?)
    }

    /// `mu + sigma * t`; gradient reaches `mu` and `sigma` but not `nu`.
    pub fn sample_reparam(&self, tape: &mut Tape, noise: &TNoise) -> Result<Var, DistError> {
        let d = self.dim(tape);
        if noise.dim() != d {
            return Err(DistError::DimensionMismatch(noise.dim(), d));
        }
        let t = tape.constant(noise.variates());
        let st = tape.mul(self.sigma, t);
        Ok(tape.add(self.mu, st))
    }
}

/// Mixture log-density on the tape. `w` is a plain coefficient.
pub fn mixture_logpdf(
    tape: &mut Tape,
    fb: &StudentTVar,
    ff: &StudentTVar,
    w: f64,
    x: Var,
) -> Result<Var, DistError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(DistError::InvalidMixtureRatio(w));
    }
    let lf = fb.logpdf(tape, x)?;
    let lg = ff.logpdf(tape, x)?;
    Ok(tape.log_mix(lf, lg, w))
}

/// Monte Carlo `KL(q || p)` with one reparameterized draw from `q` per noise entry.
pub fn mc_kl(
    tape: &mut Tape,
    q: &StudentTVar,
    p: &StudentTVar,
    noise: &[TNoise],
) -> Result<Var, DistError> {
    if noise.is_empty() {
        return Err(DistError::NoSamples);
    }
    let mut terms = Vec::with_capacity(noise.len());
    for n in noise {
        let z = q.sample_reparam(tape, n)?;
        let lq = q.logpdf(tape, z)?;
        let lp = p.logpdf(tape, z)?;
        terms.push(tape.sub(lq, lp));
    }
    let all = tape.concat(&terms);
    Ok(tape.mean(all))
}

/// Monte Carlo cross entropy `H(a || b) = -E_a[ln b]`, draws reparameterized from `a`.
pub fn mc_cross_entropy(
    tape: &mut Tape,
    a: &StudentTVar,
    b: &StudentTVar,
    noise: &[TNoise],
) -> Result<Var, DistError> {
    if noise.is_empty() {
        return Err(DistError::NoSamples);
    }
    let mut terms = Vec::with_capacity(noise.len());
    for n in noise {
        let x = a.sample_reparam(tape, n)?;
        terms.push(b.logpdf(tape, x)?);
    }
    let all = tape.concat(&terms);
    let m = tape.mean(all);
    Ok(tape.neg(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t1(mu: f64, sigma: f64, nu: f64) -> StudentT {
        StudentT::new(vec![mu], vec![sigma], nu).unwrap()
    }

    #[test]
    fn cauchy_density_at_origin() {
        let v = t1(0.0, 1.0, 1.0).logpdf(&[0.0]).unwrap();
        assert!((v + std::f64::consts::PI.ln()).abs() < 1e-12);
        assert!((v + 1.14473).abs() < 1e-5);
    }

    #[test]
    fn gaussian_limit() {
        let v = t1(0.0, 1.0, 1e6).logpdf(&[0.0]).unwrap();
        let gauss = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - gauss).abs() < 1e-4, "{v}");
        assert!((v + 0.91894).abs() < 1e-4);
    }

    #[test]
    fn translation_invariance() {
        for c in [-3.0, 0.4, 17.0] {
            let a = t1(c, 1.3, 4.0).logpdf(&[c]).unwrap();
            let b = t1(0.0, 1.3, 4.0).logpdf(&[0.0]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(matches!(
            StudentT::new(vec![0.0], vec![0.0], 3.0),
            Err(DistError::NonPositiveScale(_))
        ));
        assert!(StudentT::new(vec![0.0], vec![-1.0], 3.0).is_err());
        assert!(matches!(
            StudentT::new(vec![0.0], vec![1.0], f64::NAN),
            Err(DistError::InvalidDof(_))
        ));
    }

    #[test]
    fn entropy_known_values() {
        let c = t1(0.0, 1.0, 1.0).entropy();
        assert!((c - (4.0 * std::f64::consts::PI).ln()).abs() < 1e-10);
        assert!((c - 2.53102).abs() < 1e-5);
        let g = t1(0.0, 1.0, 1e6).entropy();
        assert!((g - 1.41894).abs() < 1e-3, "{g}");
        let s = t1(0.0, 2.0, 3.0).entropy() - t1(0.0, 1.0, 3.0).entropy();
        assert!((s - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_monotone_in_inverse_scale() {
        let mut prev = f64::INFINITY;
        for k in 1..50 {
            let inv_sigma = 0.1 * k as f64;
            let h = t1(0.0, 1.0 / inv_sigma, 5.0).entropy();
            assert!(h < prev);
            prev = h;
        }
    }

    #[test]
    fn median_noise_gives_location() {
        let d = StudentT::new(vec![1.0, -2.0], vec![3.0, 0.5], 4.0).unwrap();
        assert_eq!(d.sample(&TNoise::median(2)), vec![1.0, -2.0]);
    }

    #[test]
    fn mixture_special_cases() {
        let fb = t1(0.3, 1.0, 5.0);
        let ff = t1(-1.0, 2.0, 3.0);
        let m = MixturePolicyDist::new(fb.clone(), ff.clone(), 1.0).unwrap();
        assert_eq!(m.logpdf(&[0.7]).unwrap(), fb.logpdf(&[0.7]).unwrap());
        assert!((log_mix(0.5, -1.3, -1.3) + 1.3).abs() < 1e-15);
        assert!((log_mix(0.5, 0.0, f64::NEG_INFINITY) - 0.5f64.ln()).abs() < 1e-15);
        assert!((log_mix(0.5, 0.0, f64::NEG_INFINITY) + std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            MixturePolicyDist::new(fb, ff, 1.2),
            Err(DistError::InvalidMixtureRatio(_))
        ));
    }

    #[test]
    fn mixture_swap_symmetry() {
        for (w, a, b) in [(0.2, -1.0, -3.0), (0.9, 2.0, -40.0), (0.5, 0.1, 0.2)] {
            assert!((log_mix(w, a, b) - log_mix(1.0 - w, b, a)).abs() < 1e-12);
        }
    }

    #[test]
    fn reparam_derivative_wrt_location_is_one() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let mu = t.leaf(vec![0.5, -0.2]);
        let sigma = t.leaf(vec![1.5, 0.3]);
        let nu = t.leaf(vec![4.0]);
        let d = StudentTVar { mu, sigma, nu };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = TNoise::draw(&mut rng, 2, 4.0);
        let x = d.sample_reparam(&mut t, &n).unwrap();
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(mu).unwrap(), &[1.0, 1.0]);
        assert!(t.grad(nu).is_none());
        let tv = n.variates();
        assert_eq!(t.grad(sigma).unwrap(), &tv[..]);
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let mu = t.leaf(vec![0.5]);
        let sigma = t.leaf(vec![1.5]);
        let nu = t.leaf(vec![4.0]);
        let q = StudentTVar { mu, sigma, nu };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise: Vec<_> = (0..5).map(|_| TNoise::draw(&mut rng, 1, 4.0)).collect();
        let kl = mc_kl(&mut t, &q, &q, &noise).unwrap();
        assert_eq!(t.scalar(kl), 0.0);
        assert!(matches!(
            mc_kl(&mut t, &q, &q, &[]),
            Err(DistError::NoSamples)
        ));
    }
}

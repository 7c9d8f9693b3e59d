use super::{AutodiffError, ParamId, ParamStore, Tape, Var};

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn eval<F>(store: &ParamStore, x: &[f64], f: &F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let mut t = Tape::new(store);
    let xv = t.leaf(x.to_vec());
    let y = f(&mut t, xv)?;
    let v = t.scalar(y);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(AutodiffError::NonFinite("grad_check objective".into()))
    }
}

/// Compares the tape gradient of `f` at `x` against central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(store: &ParamStore, x: &[f64], eps: f64, f: F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let mut t = Tape::new(store);
    let xv = t.leaf(x.to_vec());
    let y = f(&mut t, xv)?;
    if !t.scalar(y).is_finite() {
        return Err(AutodiffError::NonFinite("grad_check objective".into()));
    }
    t.backward(y)?;
    let analytic = t
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);
    let mut worst = 0.0_f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let hi = eval(store, &probe, &f)?;
        probe[i] = x[i] - eps;
        let lo = eval(store, &probe, &f)?;
        probe[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (hi - lo) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Central-difference check of parameter gradients.
///
/// Every `stride`-th coordinate of each listed parameter is perturbed in a
/// private copy of `store`.
pub fn grad_check_params<F>(
    store: &ParamStore,
    ids: &[ParamId],
    eps: f64,
    stride: usize,
    f: F,
) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape) -> Result<Var, AutodiffError>,
{
    let mut t = Tape::new(store);
    let y = f(&mut t)?;
    t.backward(y)?;
    let grads = t.take_param_grads();
    let mut probe = store.clone();
    let run = |s: &ParamStore| -> Result<f64, AutodiffError> {
        let mut t = Tape::new(s);
        let y = f(&mut t)?;
        let v = t.scalar(y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(AutodiffError::NonFinite("grad_check objective".into()))
        }
    };
    let mut worst = 0.0_f64;
    for &id in ids {
        let n = store.get(id).len();
        for k in (0..n).step_by(stride.max(1)) {
            let orig = store.get(id).value[k];
            probe.get_mut(id).value[k] = orig + eps;
            let hi = run(&probe)?;
            probe.get_mut(id).value[k] = orig - eps;
            let lo = run(&probe)?;
            probe.get_mut(id).value[k] = orig;
            let analytic = grads.get(id).map_or(0.0, |g| g[k]);
            worst = worst.max(rel_err(analytic, (hi - lo) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let store = ParamStore::new();
        let err = grad_check(&store, &[0.3, -1.2, 4.0], 1e-5, |t, x| Ok(t.sum(x))).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn exp_at_zero() {
        let store = ParamStore::new();
        let err = grad_check(&store, &[0.0], 1e-5, |t, x| {
            let e = t.exp(x);
            Ok(t.sum(e))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn nan_objective_reported() {
        let store = ParamStore::new();
        let res = grad_check(&store, &[-1.0], 1e-5, |t, x| {
            let l = t.ln(x);
            Ok(t.sum(l))
        });
        assert!(matches!(res, Err(AutodiffError::NonFinite(_))));
    }
}

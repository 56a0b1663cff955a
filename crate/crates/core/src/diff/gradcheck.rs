use super::params::{ParamStore, Real};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    /// Central difference step.
    pub h: f64,
    /// Maximum allowed relative error.
    pub tol: f64,
    /// Floor of the relative error denominator.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            h: 1e-4,
            tol: 1e-3,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// (parameter name, flat index) of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// `|a - b| / max(|a|, |b|, floor)`
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic` (one gradient vector per parameter, in store order)
/// with central differences of `f` over every parameter coordinate.
pub fn compare_gradients<F>(
    f: F,
    analytic: &[Vec<f64>],
    store: &ParamStore<f64>,
    cfg: GradcheckConfig,
) -> GradcheckReport
where
    F: Fn(&ParamStore<f64>) -> f64,
{
    let mut probe = store.clone();
    let mut max_rel: f64 = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for id in store.ids() {
        for i in 0..store.values(id).len() {
            let x0 = store.values(id)[i];
            probe.values_mut(id)[i] = x0 + cfg.h;
            let up = f(&probe);
            probe.values_mut(id)[i] = x0 - cfg.h;
            let down = f(&probe);
            probe.values_mut(id)[i] = x0;
            let numeric = (up - down) / (2.0 * cfg.h);
            let rel = relative_error(analytic[id.0][i], numeric, cfg.floor);
            checked += 1;
            if !(rel <= max_rel) {
                max_rel = rel;
                worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    GradcheckReport {
        max_rel_error: max_rel,
        worst,
        checked,
        passed: max_rel <= cfg.tol,
    }
}

/// Gradient check of a tape-built scalar function. `build` records the
/// computation for the given parameters and returns the loss value after
/// accumulating gradients into the store it receives.
pub fn gradcheck<S, B>(build: B, store: &ParamStore<S>, cfg: GradcheckConfig) -> Result<GradcheckReport>
where
    S: Real,
    B: Fn(&mut ParamStore<f64>, bool) -> Result<f64>,
{
    let mut exact = store.cast::<f64>();
    exact.zero_grad();
    build(&mut exact, true)?;
    let analytic: Vec<Vec<f64>> = exact.ids().map(|id| exact.grad(id).to_vec()).collect();
    let base = store.cast::<f64>();
    Ok(compare_gradients(
        |p| {
            let mut p = p.clone();
            build(&mut p, false).unwrap_or(f64::NAN)
        },
        &analytic,
        &base,
        cfg,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tape;

    fn quartic(store: &mut ParamStore<f64>, backprop: bool) -> Result<f64> {
        let id = store.find("x").unwrap();
        let mut t = Tape::new();
        let x = t.param(store, id);
        let sq = t.square(x);
        let q = t.square(sq);
        let s = t.sum(q);
        let sp = t.softplus(x, 2.0);
        let p = t.prod(sp);
        let loss = t.add(s, p);
        if backprop {
            t.backward(loss, store)?;
        }
        Ok(t.scalar(loss))
    }

    #[test]
    fn exact_gradient_passes() {
        let mut s = ParamStore::<f64>::new();
        s.add("x", 1, 3, vec![0.4, -1.2, 0.9]);
        let r = gradcheck(quartic, &s, GradcheckConfig::default()).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("x", 1, 3, vec![0.4, -1.2, 0.9]);
        let mut g = s.clone();
        quartic(&mut g, true).unwrap();
        let doubled: Vec<f64> = g.grad(id).iter().map(|x| 2.0 * x).collect();
        let r = compare_gradients(
            |p| quartic(&mut p.clone(), false).unwrap(),
            &[doubled],
            &s,
            GradcheckConfig::default(),
        );
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.4);
    }
}

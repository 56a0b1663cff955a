use serde::{Deserialize, Serialize};

use super::params::{ParamStore, Real};
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update from the accumulated gradients. Fails without
    /// touching any value if a gradient is not finite.
    pub fn step<S: Real>(&self, store: &mut ParamStore<S>) -> Result<()> {
        for id in store.ids() {
            if store.grad(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient for {}",
                    store.name(id)
                )));
            }
        }
        store.step += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (value, grad, m, v) in store.adam_parts() {
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                let x = value[i].to_f64() - self.lr * mh / (vh.sqrt() + self.eps);
                value[i] = S::from_f64(x);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", 1, 3, vec![1.0, -2.0, 0.5]);
        s.accumulate_row(id, 0, &[0.3, -5.0, 1e-3]);
        Adam::new(0.01).step(&mut s).unwrap();
        let moved: Vec<f64> = s
            .values(id)
            .iter()
            .zip([1.0, -2.0, 0.5])
            .map(|(a, b)| a - b)
            .collect();
        assert!((moved[0] + 0.01).abs() < 1e-6);
        assert!((moved[1] - 0.01).abs() < 1e-6);
        assert!((moved[2] + 0.01).abs() < 1e-4);
    }

    #[test]
    fn minimises_quadratic() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("w", 1, 1, vec![4.0]);
        let opt = Adam::new(0.1);
        for _ in 0..500 {
            s.zero_grad();
            let w = s.values(id)[0] as f64;
            s.accumulate_row(id, 0, &[2.0 * (w - 1.5)]);
            opt.step(&mut s).unwrap();
        }
        assert!((s.values(id)[0] - 1.5).abs() < 1e-2);
    }

    #[test]
    fn rejects_nan_gradient() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("w", 1, 2, vec![1.0, 1.0]);
        s.accumulate_row(id, 0, &[f64::NAN, 0.0]);
        assert!(Adam::new(0.1).step(&mut s).is_err());
        assert_eq!(s.values(id), &[1.0, 1.0]);
        assert_eq!(s.steps_taken(), 0);
    }
}

//! AdamW: Adam with bias correction and decoupled weight decay.
//!
//! ```text
//! θ ← θ·(1 − lr·wd)
//! m ← β₁m + (1 − β₁)g
//! v ← β₂v + (1 − β₂)g²
//! θ ← θ − lr · (m / (1 − β₁ᵗ)) / (√(v / (1 − β₂ᵗ)) + ε)
//! ```

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// Updates every parameter in `ids`. All of them must hold a gradient and
    /// none may be frozen; nothing is modified if either check fails.
    pub fn step<T: Real>(&self, store: &mut ParamStore<T>, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            let p = store.get(id);
            if p.frozen {
                return Err(Error::Frozen(p.name.clone()));
            }
            if p.array.grad.is_none() {
                return Err(Error::MissingGrad(p.name.clone()));
            }
        }
        let c = T::from_f64c;
        let (lr, b1, b2, eps) = (c(self.lr), c(self.beta1), c(self.beta2), c(self.eps));
        let decay = T::one() - lr * c(self.weight_decay);
        for &id in ids {
            let p = store.get_mut(id);
            p.state.step += 1;
            let t = i32::try_from(p.state.step).unwrap_or(i32::MAX);
            let bc1 = T::one() - b1.powi(t);
            let bc2 = T::one() - b2.powi(t);
            let grad = p.array.grad.take().expect("checked above");
            let values = p.array.values_mut();
            for (i, (&g, theta)) in grad.iter().zip(values.iter_mut()).enumerate() {
                let m = b1 * p.state.m[i] + (T::one() - b1) * g;
                let v = b2 * p.state.v[i] + (T::one() - b2) * g * g;
                p.state.m[i] = m;
                p.state.v[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *theta = *theta * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.array.grad = Some(grad);
        }
        Ok(())
    }
}

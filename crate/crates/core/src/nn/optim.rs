use serde::{Deserialize, Serialize};

use super::{NnError, ParameterStore};

/// RMSProp without momentum or centering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied by the trainer before each step.
    pub grad_clip: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            decay: 0.99,
            eps: 1e-5,
            grad_clip: 10.0,
        }
    }
}

impl RmsProp {
    /// `v ← decay·v + (1−decay)·g²`, `p ← p − lr·g / (sqrt(v) + eps)`.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&self, store: &mut ParameterStore) -> Result<(), NnError> {
        if let Some((name, _)) = store.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(NnError::NonFinite(name.to_string()));
        }
        for (_, p) in store.iter_mut() {
            let grads = p.grad.data();
            let sq = p.sq_avg.data_mut();
            for (v, &g) in sq.iter_mut().zip(grads) {
                *v = self.decay * *v + (1.0 - self.decay) * g * g;
            }
            let sq = p.sq_avg.data();
            let grads = p.grad.data();
            for ((w, &g), &v) in p.value.data_mut().iter_mut().zip(grads).zip(sq) {
                *w -= self.lr * g / (v.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

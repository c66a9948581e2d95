//! SGD with momentum and weight decay, and the step learning-rate schedule.
//!
//! Update for every scalar weight `w` with gradient `g` and momentum buffer
//! `v` (zero-initialised):
//!
//! ```text
//! v ← μ·v + g + λ·w
//! w ← w − lr·v
//! ```

use std::collections::BTreeMap;

use crate::error::{shape_err, Result};
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

/// `lr0 · 0.5^⌊e / 2⌋`.
pub fn lr_at_epoch(e: usize, lr0: f64) -> f64 {
    lr_at_epoch_every(e, lr0, 2)
}

/// `lr0 · 0.5^⌊e / every⌋`.
pub fn lr_at_epoch_every(e: usize, lr0: f64, every: usize) -> f64 {
    lr0 * 0.5f64.powi((e / every.max(1)) as i32)
}

/// One update of a flat slice.
pub fn sgd_update<T: Real>(w: &mut [T], g: &[T], v: &mut [T], lr: T, momentum: T, weight_decay: T) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *w;
        *w -= lr * *v;
    }
}

/// Momentum buffers keyed by parameter name.
pub type Momentum<T> = BTreeMap<String, Tensor<T>>;

/// Applies one step to every parameter in `store`. Parameters without an
/// entry in `grads` get a zero gradient (decay and momentum still act).
pub fn sgd_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut Momentum<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for (name, w) in store.params_mut() {
        let v = state.entry(name.clone()).or_insert_with(|| Tensor::zeros(w.shape()));
        if v.shape() != w.shape() {
            return Err(shape_err!("momentum `{name}` {:?} vs weight {:?}", v.shape(), w.shape()));
        }
        match grads.get(name) {
            Some(g) => {
                if g.shape() != w.shape() {
                    return Err(shape_err!("gradient `{name}` {:?} vs weight {:?}", g.shape(), w.shape()));
                }
                sgd_update(w.data_mut(), g.data(), v.data_mut(), lr, mu, wd);
            }
            None => {
                let zero = vec![T::zero(); w.numel()];
                sgd_update(w.data_mut(), &zero, v.data_mut(), lr, mu, wd);
            }
        }
    }
    Ok(())
}

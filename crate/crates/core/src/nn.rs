//! Named parameters and the per-forward session that binds them to a tape.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Batch-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in running-statistic updates.
pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are updated after the step.
    Train,
    /// Running statistics.
    Infer,
}

/// Trainable tensors plus non-trainable buffers (running statistics), both
/// keyed by dotted names. Iteration order is lexicographic by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new(), buffers: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.buffers.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.buffers.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Fan-in scaled normal weights `std = sqrt(gain / fan_in)`, optional
    /// zero bias.
    pub fn add_conv<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        out_ch: usize,
        in_ch: usize,
        k: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) {
        let fan_in = (in_ch * k * k) as f64;
        self.insert(format!("{name}.w"), Tensor::randn(&[out_ch, in_ch, k, k], (gain / fan_in).sqrt(), rng));
        if bias {
            self.insert(format!("{name}.b"), Tensor::zeros(&[out_ch]));
        }
    }

    /// Batch-norm scale 1 and shift 0. Running statistics stay absent until
    /// the first training update.
    pub fn add_norm(&mut self, name: &str, ch: usize) {
        self.insert(format!("{name}.gamma"), Tensor::ones(&[ch]));
        self.insert(format!("{name}.beta"), Tensor::zeros(&[ch]));
    }

    /// Folds one batch's statistics into the running estimates:
    /// `running ← (1 − m)·running + m·batch`, starting from mean 0, var 1.
    pub fn update_running_stats(&mut self, norm: &str, mean: &[T], var: &[T], momentum: f64) {
        let m = T::of(momentum);
        let keep = T::one() - m;
        for (suffix, batch, init) in [("running_mean", mean, T::zero()), ("running_var", var, T::one())] {
            let key = format!("{norm}.{suffix}");
            let entry = self.buffers.entry(key).or_insert_with(|| Tensor::full(&[batch.len()], init));
            for (r, &b) in entry.data_mut().iter_mut().zip(batch) {
                *r = keep * *r + m * b;
            }
        }
    }

    /// Sets every norm layer's running statistics to mean 0 / var 1, making
    /// inference mode usable on an untrained model.
    pub fn reset_running_stats(&mut self) {
        let norms: Vec<(String, usize)> = self
            .params
            .iter()
            .filter_map(|(k, v)| k.strip_suffix(".gamma").map(|n| (n.to_string(), v.numel())))
            .collect();
        for (n, c) in norms {
            self.buffers.insert(format!("{n}.running_mean"), Tensor::zeros(&[c]));
            self.buffers.insert(format!("{n}.running_var"), Tensor::ones(&[c]));
        }
    }
}

/// Batch statistics captured by one norm layer during a training forward.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub norm: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// One forward pass: a tape, the parameters it reads, and the mode.
///
/// Parameters are bound lazily on first use, so unused parameters never
/// appear on the tape.
pub struct Session<'a, T: Real> {
    pub g: &'a mut Graph<T>,
    store: &'a ParamStore<T>,
    bound: HashMap<String, Var>,
    mode: Mode,
    trainable: bool,
    stats: Vec<StatUpdate<T>>,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(g: &'a mut Graph<T>, store: &'a ParamStore<T>, mode: Mode, trainable: bool) -> Self {
        Session { g, store, bound: HashMap::new(), mode, trainable, stats: Vec::new() }
    }

    /// Pre-binds names to existing tape values (used by gradient checks to
    /// treat parameters as perturbable inputs).
    pub fn bind(&mut self, name: impl Into<String>, v: Var) {
        self.bound.insert(name.into(), v);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.bound.contains_key(name) || self.store.get(name).is_some()
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?.clone();
        let v = self.g.leaf(t, self.trainable);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameter handles bound so far, by name.
    pub fn bindings(&self) -> &HashMap<String, Var> {
        &self.bound
    }

    pub fn take_stats(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stats)
    }

    /// Convolution reading `{name}.w` and, if present, `{name}.b`.
    pub fn conv(&mut self, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
        let w = self.param(&format!("{name}.w"))?;
        let bname = format!("{name}.b");
        let b = if self.has_param(&bname) { Some(self.param(&bname)?) } else { None };
        self.g.conv2d(x, w, b, stride, pad)
    }

    /// Batch norm `{name}` in the session's mode.
    pub fn norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.g.batch_norm_train(x, gamma, beta, NORM_EPS)?;
                self.stats.push(StatUpdate { norm: name.to_string(), mean: stats.mean, var: stats.var });
                Ok(y)
            }
            Mode::Infer => {
                let (mean, var) = match (
                    self.store.buffer(&format!("{name}.running_mean")),
                    self.store.buffer(&format!("{name}.running_var")),
                ) {
                    (Some(m), Some(v)) => (m.data().to_vec(), v.data().to_vec()),
                    _ => {
                        return Err(Error::Config(format!(
                            "norm layer `{name}` has no running statistics; train it or reset them before inference"
                        )))
                    }
                };
                self.g.batch_norm_infer(x, gamma, beta, &mean, &var, NORM_EPS)
            }
        }
    }
}

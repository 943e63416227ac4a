//! Named parameter storage, gradient accumulation, and Adam.

use crate::array::Array;
use crate::error::{CoreError, Result};
use crate::rng::{hash_str, mix, Mix64};
use std::collections::HashMap;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) u32);

/// Ordered collection of named parameters. Order is insertion order and is
/// what the checkpoint format serializes.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
    index: HashMap<String, u32>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = self.values.len() as u32;
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    /// Weight matrix initialized uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    /// The init stream is keyed by (seed, name), so adding parameters never
    /// shifts the initialization of existing ones.
    pub fn insert_uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, seed: u64) -> ParamId {
        let mut rng = Mix64::new(mix(&[seed, hash_str(name)]));
        self.insert(name, Array::uniform_fanin(rows, cols, fan_in, &mut rng))
    }

    /// Zero-initialized bias row.
    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.insert(name, Array::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.values[id.0 as usize]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0 as usize]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|i| ParamId(*i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len() as u32).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter())
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Overwrite values from `(name, array)` pairs; shapes must match.
    pub fn load_values(&mut self, entries: &[(String, Array)]) -> Result<()> {
        for (name, value) in entries {
            let id = self.lookup(name).ok_or_else(|| CoreError::Config(format!("unknown parameter {name} in checkpoint")))?;
            let current = self.value(id);
            if !current.same_shape(value) {
                return Err(CoreError::Config(format!(
                    "parameter {name}: checkpoint shape {} vs model shape {}",
                    value.shape_string(),
                    current.shape_string()
                )));
            }
            *self.value_mut(id) = value.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradient accumulators aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GradStore {
    grads: Vec<Option<Array>>,
    shapes: Vec<(usize, usize)>,
}

impl GradStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradStore {
            grads: store.values.iter().map(|_| None).collect(),
            shapes: store.values.iter().map(|v| (v.rows(), v.cols())).collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        let i = id.0 as usize;
        match &mut self.grads[i] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.iter()) {
                    *a += b;
                }
            }
            slot @ None => {
                let (r, c) = self.shapes[i];
                let mut a = Array::zeros(r, c);
                a.data_mut().copy_from_slice(g);
                *slot = Some(a);
            }
        }
    }

    /// Mark a parameter as participating with zero gradient.
    pub fn touch(&mut self, id: ParamId) {
        let i = id.0 as usize;
        if self.grads[i].is_none() {
            let (r, c) = self.shapes[i];
            self.grads[i] = Some(Array::zeros(r, c));
        }
    }

    /// Fold another gradient store into this one (fixed order, by value).
    pub fn merge(&mut self, other: &GradStore) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i as u32), g.data());
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.grads[id.0 as usize].as_ref()
    }
}

/// Adam with bias correction. Defaults: beta1 = 0.9, beta2 = 0.999,
/// eps = 1e-8.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: store.values.iter().map(|p| Array::zeros(p.rows(), p.cols())).collect(),
            v: store.values.iter().map(|p| Array::zeros(p.rows(), p.cols())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in the store. Every parameter must
    /// have a gradient entry (zeros are fine; absence is a usage error).
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..store.len() {
            let id = ParamId(i as u32);
            let g = grads.get(id).ok_or_else(|| CoreError::Usage {
                op: "adam_step",
                detail: format!("missing gradient for parameter {}", store.name(id)),
            })?;
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.values[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    /// Optimizer state as named arrays, for checkpointing alongside the
    /// parameters.
    pub fn state_entries(&self, store: &ParamStore) -> Vec<(String, Array)> {
        let mut out = vec![("opt.step".to_string(), Array::scalar(self.step as f64))];
        for id in store.ids() {
            let i = id.0 as usize;
            out.push((format!("opt.m.{}", store.name(id)), self.m[i].clone()));
            out.push((format!("opt.v.{}", store.name(id)), self.v[i].clone()));
        }
        out
    }

    /// Restore moments and step counter from checkpoint entries.
    pub fn load_state(&mut self, store: &ParamStore, entries: &[(String, Array)]) -> Result<()> {
        for (name, value) in entries {
            if name == "opt.step" {
                self.step = value.scalar_value()? as u64;
            } else if let Some(pname) = name.strip_prefix("opt.m.") {
                let id = store
                    .lookup(pname)
                    .ok_or_else(|| CoreError::Config(format!("optimizer state for unknown parameter {pname}")))?;
                self.m[id.0 as usize] = value.clone();
            } else if let Some(pname) = name.strip_prefix("opt.v.") {
                let id = store
                    .lookup(pname)
                    .ok_or_else(|| CoreError::Config(format!("optimizer state for unknown parameter {pname}")))?;
                self.v[id.0 as usize] = value.clone();
            }
        }
        Ok(())
    }
}

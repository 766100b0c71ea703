use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// One named parameter tensor with its gradient buffer and Adam moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub value: Matrix,
    #[serde(skip_serializing, default)]
    pub grad: Option<Matrix>,
    #[serde(skip_serializing, default)]
    moments: Option<(Matrix, Matrix)>,
}

impl ParamEntry {
    fn new(value: Matrix) -> Self {
        ParamEntry {
            value,
            grad: None,
            moments: None,
        }
    }

    pub fn grad(&self) -> Matrix {
        self.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(self.value.rows(), self.value.cols()))
    }
}

/// Named parameter tensors, iterated in name order.
///
/// Gradient and moment buffers are allocated lazily and always share the
/// shape of their value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    step_count: u64,
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.entries.insert(name.into(), ParamEntry::new(value));
    }

    /// Xavier-uniform weights, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_xavier(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) {
        let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_range(-a, a)).collect();
        self.insert(name, Matrix::from_vec(rows, cols, data).expect("sized"));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        Ok(&self.entry(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        Ok(&mut self.entry_mut(name)?.value)
    }

    /// Current gradient (zeros when nothing was accumulated).
    pub fn grad(&self, name: &str) -> Result<Matrix> {
        Ok(self.entry(name)?.grad())
    }

    /// Adds `g` into the gradient buffer of `name`.
    pub fn accumulate_grad(&mut self, name: &str, g: &Matrix) -> Result<()> {
        let entry = self.entry_mut(name)?;
        let shape = entry.value.shape();
        g.expect_shape(&format!("gradient of '{name}'"), shape)?;
        match entry.grad.as_mut() {
            Some(buf) => buf.add_assign(g)?,
            None => entry.grad = Some(g.clone()),
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad = None;
        }
    }

    /// All gradients keyed by name.
    pub fn grads(&self) -> BTreeMap<String, Matrix> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.grad()))
            .collect()
    }

    /// One bias-corrected Adam update of every entry, then clears gradients.
    /// Entries without an accumulated gradient are treated as zero-gradient.
    pub fn adam_step(&mut self, adam: &Adam) -> Result<()> {
        if !(adam.lr > 0.0 && adam.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", adam.lr)));
        }
        for (label, b) in [("beta1", adam.beta1), ("beta2", adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{label} must lie in [0, 1), got {b}")));
            }
        }
        if let Some((name, _)) = self
            .entries
            .iter()
            .find(|(_, e)| e.grad.as_ref().is_some_and(|g| !g.is_finite()))
        {
            return Err(Error::NonFinite(format!("gradient of parameter '{name}'")));
        }

        self.step_count += 1;
        let step = self.step_count as i32;
        let c1 = 1.0 - adam.beta1.powi(step);
        let c2 = 1.0 - adam.beta2.powi(step);
        for e in self.entries.values_mut() {
            let (rows, cols) = e.value.shape();
            let (m, v) = e
                .moments
                .get_or_insert_with(|| (Matrix::zeros(rows, cols), Matrix::zeros(rows, cols)));
            let g = e.grad.take().unwrap_or_else(|| Matrix::zeros(rows, cols));
            for (((theta, mi), vi), gi) in e
                .value
                .as_mut_slice()
                .iter_mut()
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
                .zip(g.as_slice())
            {
                *mi = adam.beta1 * *mi + (1.0 - adam.beta1) * gi;
                *vi = adam.beta2 * *vi + (1.0 - adam.beta2) * gi * gi;
                *theta -= adam.lr * (*mi / c1) / ((*vi / c2).sqrt() + adam.eps);
            }
        }
        Ok(())
    }
}

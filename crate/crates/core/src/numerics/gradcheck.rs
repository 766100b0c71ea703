//! Finite-difference verification of hand-derived gradients.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{Matrix, ParamStore};
use crate::error::{Error, Result};

/// A scalar function of a [`ParamStore`] with an analytic gradient.
pub trait Differentiable {
    fn value(&self, params: &ParamStore) -> Result<f64>;

    /// Accumulates `∂f/∂θ` into the gradient buffers of `params` and
    /// returns `f`. Buffers are expected to be zero on entry.
    fn gradient(&self, params: &mut ParamStore) -> Result<f64>;
}

/// Central differences `(f(θ+h) − f(θ−h)) / 2h` for every coordinate of
/// every entry.
pub fn central_diff_gradient<F>(store: &ParamStore, h: f64, f: F) -> Result<BTreeMap<String, Matrix>>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step h must be > 0, got {h}")));
    }
    let mut probe = store.clone();
    let mut out = BTreeMap::new();
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        let (rows, cols) = store.value(&name)?.shape();
        let mut g = Matrix::zeros(rows, cols);
        for idx in 0..rows * cols {
            let orig = probe.value(&name)?.as_slice()[idx];
            probe.value_mut(&name)?.as_mut_slice()[idx] = orig + h;
            let plus = f(&probe)?;
            probe.value_mut(&name)?.as_mut_slice()[idx] = orig - h;
            let minus = f(&probe)?;
            probe.value_mut(&name)?.as_mut_slice()[idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective when perturbing {name}[{}, {}]",
                    idx / cols,
                    idx % cols
                )));
            }
            g.as_mut_slice()[idx] = (plus - minus) / (2.0 * h);
        }
        out.insert(name, g);
    }
    Ok(out)
}

/// Worst coordinate of one parameter entry.
#[derive(Clone, Debug, Serialize)]
pub struct EntryError {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub entries: Vec<EntryError>,
    pub tol: f64,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Vacuously true for an empty report.
    pub fn passed(&self) -> bool {
        self.max_error() < self.tol
    }

    pub fn worst(&self) -> Option<&EntryError> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares two gradient sets coordinate by coordinate.
pub fn compare_gradients(
    analytic: &BTreeMap<String, Matrix>,
    numeric: &BTreeMap<String, Matrix>,
    tol: f64,
) -> Result<GradReport> {
    let mut entries = Vec::with_capacity(numeric.len());
    for (name, fd) in numeric {
        let ad = analytic
            .get(name)
            .ok_or_else(|| Error::shape(format!("gradient '{name}'"), "analytic entry", "none"))?;
        ad.expect_shape(&format!("analytic gradient '{name}'"), fd.shape())?;
        let mut worst = EntryError {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
        };
        for (idx, (&a, &n)) in ad.as_slice().iter().zip(fd.as_slice()).enumerate() {
            let e = relative_error(a, n);
            if e > worst.max_rel_error || e.is_nan() {
                worst.max_rel_error = e;
                worst.worst_index = (idx / fd.cols(), idx % fd.cols());
                worst.analytic = a;
                worst.numeric = n;
            }
        }
        entries.push(worst);
    }
    if let Some(extra) = analytic.keys().find(|k| !numeric.contains_key(*k)) {
        return Err(Error::shape(format!("gradient '{extra}'"), "numeric entry", "none"));
    }
    Ok(GradReport { entries, tol })
}

/// Checks the analytic gradient of `f` against central differences.
pub fn check_gradients<D: Differentiable + ?Sized>(
    f: &D,
    store: &ParamStore,
    h: f64,
    tol: f64,
) -> Result<GradReport> {
    let mut work = store.clone();
    work.zero_grads();
    f.gradient(&mut work)?;
    let analytic = work.grads();
    let numeric = central_diff_gradient(store, h, |p| f.value(p))?;
    compare_gradients(&analytic, &numeric, tol)
}

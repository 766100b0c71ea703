use serde::{Deserialize, Serialize};

use super::data::{Dataset, SubjectRecord};
use super::model::GvcnetModel;
use crate::error::{Error, Result};
use crate::numerics::{unit_grid, Adam};

/// Per-epoch training loss, measured before that epoch's update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub losses: Vec<f64>,
}

impl History {
    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Full-batch Adam on the joint loss for `config.epochs` epochs.
///
/// Normalization statistics are taken from `train` and stored in the model.
pub fn train(model: &mut GvcnetModel, train: &Dataset) -> Result<History> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    model.attach_stats(train)?;
    let batch = model.prepare(train)?;
    let adam = Adam::with_lr(model.config().lr);
    let epochs = model.config().epochs;
    let mut history = History { losses: Vec::with_capacity(epochs) };
    for epoch in 0..epochs {
        let (loss, grads) = match model.network.loss_and_grads(&model.params, &batch) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        for (name, g) in &grads {
            model.params.accumulate_grad(name, g)?;
        }
        model.params.adam_step(&adam).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged { epoch },
            other => other,
        })?;
        history.losses.push(loss);
    }
    Ok(history)
}

/// Fraction of subjects with `(p ≥ threshold) == label`.
pub fn classify(model: &GvcnetModel, ds: &Dataset, threshold: f64) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot classify an empty dataset"));
    }
    let probs = model.predict(&model.prepare(ds)?)?;
    let hits = probs
        .iter()
        .zip(&ds.subjects)
        .filter(|(p, s)| (**p >= threshold) == (s.label == 1))
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Estimated average dose-response of one ROI on a uniform grid over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdrfCurve {
    pub roi: String,
    pub grid: Vec<f64>,
    pub response: Vec<f64>,
    pub accuracy: f64,
}

impl AdrfCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Average over subjects of `σ(f(Z′, t))` with covariates held fixed, at the
/// points of `grid`. Every grid point is evaluated independently.
pub fn adrf_at(model: &GvcnetModel, ds: &Dataset, grid: &[f64]) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot estimate a dose-response on an empty dataset"));
    }
    let batch = model.prepare(ds)?;
    let (z, _) = model.network.latent(&model.params, &batch)?;
    grid.iter()
        .map(|&t| {
            let probs = model.network.dose_response(&model.params, &z, t)?;
            Ok(probs.iter().sum::<f64>() / probs.len() as f64)
        })
        .collect()
}

/// [`adrf_at`] on `grid_size` evenly spaced points; the curve's accuracy
/// is the model's accuracy on `ds`.
pub fn estimate_adrf(model: &GvcnetModel, ds: &Dataset, grid_size: usize) -> Result<AdrfCurve> {
    if grid_size < 2 {
        return Err(Error::invalid(format!("ADRF grid needs at least 2 points, got {grid_size}")));
    }
    let grid = unit_grid(grid_size);
    let response = adrf_at(model, ds, &grid)?;
    Ok(AdrfCurve {
        roi: model.treatment.clone(),
        grid,
        response,
        accuracy: classify(model, ds, 0.5)?,
    })
}

/// `σ(f(Z′, t1)) − σ(f(Z′, t0))` for one subject.
pub fn estimate_ite(model: &GvcnetModel, subject: &SubjectRecord, t1: f64, t0: f64) -> Result<f64> {
    for t in [t1, t0] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("treatment must lie in [0, 1], got {t}")));
        }
    }
    let one = Dataset::new(model.data_rois.clone(), vec![subject.clone()])?;
    let batch = model.prepare(&one)?;
    let (z, _) = model.network.latent(&model.params, &batch)?;
    let y1 = model.network.dose_response(&model.params, &z, t1)?[0];
    let y0 = model.network.dose_response(&model.params, &z, t0)?[0];
    Ok(y1 - y0)
}

/// Treatment histogram over the `B` grid intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub counts: Vec<usize>,
    pub empty: Vec<usize>,
}

impl PositivityReport {
    pub fn passed(&self) -> bool {
        self.empty.is_empty()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn warning(&self) -> Option<String> {
        if self.passed() {
            return None;
        }
        let b = self.counts.len() as f64;
        let spans: Vec<String> = self
            .empty
            .iter()
            .map(|&i| format!("[{:.3}, {:.3})", i as f64 / b, (i + 1) as f64 / b))
            .collect();
        Some(format!(
            "{} of {} treatment intervals are empty: {}",
            self.empty.len(),
            self.counts.len(),
            spans.join(" ")
        ))
    }
}

/// Counts normalized treatments per interval; `t = 1` falls in the last one.
pub fn check_positivity(t: &[f64], intervals: usize) -> Result<PositivityReport> {
    if intervals == 0 {
        return Err(Error::invalid("positivity check needs at least one interval"));
    }
    let mut counts = vec![0; intervals];
    for &v in t {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("normalized treatment {v} outside [0, 1]")));
        }
        counts[((v * intervals as f64) as usize).min(intervals - 1)] += 1;
    }
    let empty = counts.iter().enumerate().filter(|(_, c)| **c == 0).map(|(i, _)| i).collect();
    Ok(PositivityReport { counts, empty })
}

/// [`check_positivity`] of every ROI, scaled with the dataset's statistics
/// or, when it has none, its own per-ROI range.
pub fn positivity_by_roi(ds: &Dataset, intervals: usize) -> Result<Vec<(String, PositivityReport)>> {
    let stats = match ds.stats() {
        Ok(s) => s.clone(),
        Err(_) => super::data::NormStats::compute(&ds.subjects, ds.rois())?,
    };
    ds.roi_names
        .iter()
        .enumerate()
        .map(|(r, name)| {
            let t: Vec<f64> = ds.subjects.iter().map(|s| stats.treatment(r, s.roi_signals[r])).collect();
            Ok((name.clone(), check_positivity(&t, intervals)?))
        })
        .collect()
}


use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Config;
use super::data::{split_dataset, Dataset};
use super::model::assemble;
use super::train::{adrf_at, classify, train, AdrfCurve};
use crate::analysis::{ols_slope, trend_of_slope, Trend};
use crate::error::{Error, Result};
use crate::graph::RoiGraph;
use crate::numerics::{mean, sample_sd, unit_grid};

/// Result of rotating the treatment onto one ROI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiResult {
    pub roi: String,
    /// Curve averaged over repeats; its accuracy is the mean accuracy.
    pub curve: AdrfCurve,
    pub accuracies: Vec<f64>,
    pub final_losses: Vec<f64>,
}

impl RoiResult {
    pub fn accuracy_sd(&self) -> f64 {
        sample_sd(&self.accuracies)
    }
}

/// Seed of the model trained for `roi_index` in `repeat`.
pub fn model_seed(seed: u64, roi_index: usize, repeat: usize) -> u64 {
    (seed ^ roi_index as u64) ^ ((repeat as u64) << 32)
}

/// Trains one model per repeat with `roi` as the treatment and averages
/// the test-split dose-response curves.
pub fn rotate_one(ds: &Dataset, graph: &RoiGraph, config: &Config, roi: &str, grid_size: usize) -> Result<RoiResult> {
    let roi_index = ds.roi_index(roi)?;
    let (train_ds, test_ds) = split_dataset(ds, config.test_fraction, config.seed)?;
    let grid = unit_grid(grid_size);
    let mut sum = vec![0.0; grid_size];
    let mut accuracies = Vec::with_capacity(config.repeats);
    let mut final_losses = Vec::with_capacity(config.repeats);
    for k in 0..config.repeats {
        let cfg = Config {
            seed: model_seed(config.seed, roi_index, k),
            ..config.clone()
        };
        let mut model = assemble(graph, roi, &cfg)?;
        let history = train(&mut model, &train_ds)?;
        for (s, v) in sum.iter_mut().zip(adrf_at(&model, &test_ds, &grid)?) {
            *s += v;
        }
        accuracies.push(classify(&model, &test_ds, 0.5)?);
        final_losses.push(history.last().unwrap_or(f64::NAN));
    }
    let r = config.repeats as f64;
    Ok(RoiResult {
        roi: roi.to_string(),
        curve: AdrfCurve {
            roi: roi.to_string(),
            grid,
            response: sum.into_iter().map(|s| s / r).collect(),
            accuracy: mean(&accuracies),
        },
        accuracies,
        final_losses,
    })
}

/// One independently trained set of models per ROI of `ds`, in dataset
/// column order. `jobs` threads share the ROIs; output does not depend on
/// `jobs`.
pub fn run_rotation(
    ds: &Dataset,
    graph: &RoiGraph,
    config: &Config,
    grid_size: usize,
    jobs: usize,
) -> Result<Vec<RoiResult>> {
    config.validate()?;
    if grid_size < 2 {
        return Err(Error::invalid(format!("ADRF grid needs at least 2 points, got {grid_size}")));
    }
    let mut a: Vec<&String> = ds.roi_names.iter().collect();
    let mut b: Vec<&String> = graph.names().iter().collect();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::invalid("dataset ROI columns and graph nodes differ"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<RoiResult>> = pool.install(|| {
        ds.roi_names
            .par_iter()
            .map(|roi| rotate_one(ds, graph, config, roi, grid_size).map_err(|e| e.for_roi(roi.clone())))
            .collect()
    });
    results.into_iter().collect()
}

/// Per-ROI line of the rotation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub roi: String,
    pub accuracy: f64,
    pub accuracy_sd: f64,
    pub slope: f64,
    pub trend: Trend,
}

pub fn summarize(results: &[RoiResult], epsilon: f64) -> Result<Vec<RoiSummary>> {
    results
        .iter()
        .map(|r| {
            let slope = ols_slope(&r.curve.grid, &r.curve.response)?;
            Ok(RoiSummary {
                roi: r.roi.clone(),
                accuracy: r.curve.accuracy,
                accuracy_sd: r.accuracy_sd(),
                slope,
                trend: trend_of_slope(slope, epsilon),
            })
        })
        .collect()
}

/// Long format `roi,t,response`.
pub fn write_curves_csv<'a, W: Write>(curves: impl IntoIterator<Item = &'a AdrfCurve>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["roi", "t", "response"])?;
    for c in curves {
        for (t, v) in c.grid.iter().zip(&c.response) {
            w.write_record([c.roi.clone(), t.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_curves_csv`]; ROIs keep their first-seen order.
/// Accuracies are unknown (NaN) unless merged from a summary.
pub fn read_curves_csv<R: std::io::Read>(source: R) -> Result<Vec<AdrfCurve>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("curve file is missing column {name:?}")))
    };
    let (ci, ct, cv) = (col("roi")?, col("t")?, col("response")?);
    let mut curves: Vec<AdrfCurve> = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("");
            s.parse()
                .map_err(|_| Error::invalid(format!("curve row {}: bad number {s:?}", row + 1)))
        };
        let roi = rec.get(ci).unwrap_or("").to_string();
        let (t, v) = (num(ct)?, num(cv)?);
        match curves.iter_mut().find(|c| c.roi == roi) {
            Some(c) => {
                if c.grid.last().is_some_and(|&last| t <= last) {
                    return Err(Error::invalid(format!("curve {roi}: grid not strictly increasing")));
                }
                c.grid.push(t);
                c.response.push(v);
            }
            None => curves.push(AdrfCurve {
                roi,
                grid: vec![t],
                response: vec![v],
                accuracy: f64::NAN,
            }),
        }
    }
    Ok(curves)
}

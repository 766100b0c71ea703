//! Synthetic cohorts with known dose-response curves.
//!
//! Generative model, for `R` ROIs on a graph with adjacency `A`:
//!
//! ```text
//! x ~ N(0, I_R)
//! u_i = (x_i + κ Σ_j A_ij x_j) / sqrt(1 + κ² Σ_j A_ij²)
//! h   = Σ_{j ∈ C} u_j,  h̃ = h / sd(h)            (C: 5 random ROIs)
//! s_r = Φ((u_r + λ h̃ + σ_e e_r) / sd_r)          (treatment signal, U(0, 1))
//! η   = Σ_r g_r(s_r) + κ_y h̃
//! y   ~ Bernoulli(σ(η))
//! ```
//!
//! with `g` one of `up: 2s − 1`, `down: 1 − 2s`, `flat: 0`. Every variance
//! is exact, so each `s_r` is marginally uniform. MMSE and CDR depend on
//! `b = σ(κ_y h̃)` and age and sex are independent noise.
//!
//! Intervening on ROI `r` leaves the other signals at their natural values,
//! so the true curve is `E σ(g_r(t) + Σ_{s≠r} g_s(s_s) + κ_y h̃)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::Trend;
use crate::error::{Error, Result};
use crate::graph::RoiGraph;
use crate::numerics::{sigmoid, unit_grid, Matrix, Rng};
use crate::pipeline::{AdrfCurve, Dataset, SubjectRecord};

pub const CONFOUNDERS: usize = 5;
pub const ORACLE_DRAWS: usize = 200_000;
pub const REFERENCE_GRID: usize = 65;
const CHUNK: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GraphModel {
    Ring,
    RandomGeometric { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub rois: usize,
    pub n: usize,
    /// One label per ROI; empty means the cycle up, down, flat.
    pub trends: Vec<Trend>,
    /// `λ`, weight of the confounder in every treatment signal.
    pub confounding: f64,
    /// `κ`, neighbour mixing of the latent covariates.
    pub smoothing: f64,
    /// `κ_y`, weight of the confounder in the outcome logit.
    pub outcome_scale: f64,
    pub graph_model: GraphModel,
    /// `σ_e`, treatment noise.
    pub noise_sd: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            rois: 12,
            n: 2000,
            trends: Vec::new(),
            confounding: 0.5,
            smoothing: 0.3,
            outcome_scale: 7.0,
            graph_model: GraphModel::Ring,
            noise_sd: 1.0,
        }
    }
}

pub fn default_trend(roi_index: usize) -> Trend {
    [Trend::Up, Trend::Down, Trend::Unbiased][roi_index % 3]
}

/// Pre-sigmoid effect of a signal on the outcome.
pub fn effect(trend: Trend, s: f64) -> f64 {
    match trend {
        Trend::Up => 2.0 * s - 1.0,
        Trend::Down => 1.0 - 2.0 * s,
        Trend::Unbiased => 0.0,
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rois < 3 {
            return Err(Error::invalid(format!("need at least 3 ROIs, got {}", self.rois)));
        }
        if self.n < 10 {
            return Err(Error::invalid(format!("need at least 10 subjects, got {}", self.n)));
        }
        if !self.trends.is_empty() && self.trends.len() != self.rois {
            return Err(Error::shape("trend map", self.rois, self.trends.len()));
        }
        for (name, v) in [
            ("confounding", self.confounding),
            ("smoothing", self.smoothing),
            ("outcome_scale", self.outcome_scale),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let GraphModel::RandomGeometric { radius } = self.graph_model {
            if !(radius > 0.0) {
                return Err(Error::invalid(format!("radius must be > 0, got {radius}")));
            }
        }
        Ok(())
    }

    pub fn trend_map(&self) -> Vec<Trend> {
        if self.trends.is_empty() {
            (0..self.rois).map(default_trend).collect()
        } else {
            self.trends.clone()
        }
    }

    pub fn roi_names(&self) -> Vec<String> {
        (0..self.rois).map(|r| format!("R{:02}", r + 1)).collect()
    }
}

/// Structural parameters drawn once per seed.
#[derive(Clone, Debug)]
pub struct SyntheticProblem {
    pub config: GeneratorConfig,
    pub seed: u64,
    pub graph: RoiGraph,
    pub trends: Vec<Trend>,
    pub confounders: Vec<usize>,
    /// `u = S x`
    mixing: Matrix,
    h_sd: f64,
    /// sd of `u_r + λ h̃ + σ_e e_r`
    signal_sd: Vec<f64>,
}

/// One subject's latent draw.
struct Draw {
    h: f64,
    signals: Vec<f64>,
}

impl SyntheticProblem {
    pub fn new(config: &GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let r = config.rois;
        let mut rng = Rng::new(seed).fork(0);
        let names = config.roi_names();
        let graph = match config.graph_model {
            GraphModel::Ring => RoiGraph::ring(names)?,
            GraphModel::RandomGeometric { radius } => RoiGraph::random_geometric(names, radius, &mut rng)?,
        };
        let confounders = rng.choose_distinct(r, CONFOUNDERS.min(r));
        let a = graph.adjacency();
        let k = config.smoothing;
        let mut mixing = Matrix::zeros(r, r);
        for i in 0..r {
            let norm = (1.0 + k * k * a.row(i).iter().map(|w| w * w).sum::<f64>()).sqrt();
            for j in 0..r {
                let v = if i == j { 1.0 } else { k * a.get(i, j) };
                mixing.set(i, j, v / norm);
            }
        }
        // h = cᵀ S x
        let mut h_row = vec![0.0; r];
        for &c in &confounders {
            for (h, v) in h_row.iter_mut().zip(mixing.row(c)) {
                *h += v;
            }
        }
        let h_sd = h_row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lambda = config.confounding;
        let signal_sd = (0..r)
            .map(|i| {
                let var: f64 = mixing
                    .row(i)
                    .iter()
                    .zip(&h_row)
                    .map(|(s, h)| (s + lambda * h / h_sd).powi(2))
                    .sum();
                (var + config.noise_sd * config.noise_sd).sqrt()
            })
            .collect();
        Ok(Self {
            trends: config.trend_map(),
            config: config.clone(),
            seed,
            graph,
            confounders,
            mixing,
            h_sd,
            signal_sd,
        })
    }

    pub fn rois(&self) -> usize {
        self.config.rois
    }

    fn draw(&self, rng: &mut Rng) -> Draw {
        let r = self.rois();
        let x: Vec<f64> = (0..r).map(|_| rng.normal()).collect();
        let u = self.mixing.matvec(&x).expect("square mixing");
        let h = self.confounders.iter().map(|&c| u[c]).sum::<f64>() / self.h_sd;
        let lambda = self.config.confounding;
        let signals = (0..r)
            .map(|i| normal_cdf((u[i] + lambda * h + self.config.noise_sd * rng.normal()) / self.signal_sd[i]))
            .collect();
        Draw { h, signals }
    }

    fn logit(&self, d: &Draw) -> f64 {
        let g: f64 = self.trends.iter().zip(&d.signals).map(|(t, s)| effect(*t, *s)).sum();
        g + self.config.outcome_scale * d.h
    }

    /// Samples the cohort and the noiseless outcome probability of each
    /// subject.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<(Dataset, Vec<f64>)> {
        let mut subjects = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for _ in 0..n {
            let d = self.draw(rng);
            let p = sigmoid(self.logit(&d));
            let b = sigmoid(self.config.outcome_scale * d.h);
            let label = rng.bernoulli(p) as u8;
            let age = 75.0 + 7.0 * rng.normal();
            let sex = if rng.bernoulli(0.5) { "F" } else { "M" };
            let mmse = (29.0 - 7.0 * b + 0.5 * rng.normal()).clamp(0.0, 30.0);
            let cdr = (0.1 + b + 0.05 * rng.normal()).max(0.0);
            subjects.push(SubjectRecord {
                roi_signals: d.signals,
                age,
                sex: sex.to_string(),
                mmse,
                cdr,
                label,
            });
            probs.push(p);
        }
        Ok((Dataset::new(self.config.roi_names(), subjects)?, probs))
    }

    /// Latent confounder `h̃` of freshly drawn subjects, paired with their
    /// signals; used to audit the generator.
    pub fn sample_latent(&self, n: usize, rng: &mut Rng) -> Vec<(f64, Vec<f64>)> {
        (0..n)
            .map(|_| {
                let d = self.draw(rng);
                (d.h, d.signals)
            })
            .collect()
    }

    /// True curves of every ROI at the signal values `grids[r]`, from
    /// `draws` Monte-Carlo subjects shared by all points and ROIs.
    pub fn oracle(&self, grids: &[Vec<f64>], draws: usize, seed: u64) -> Result<Vec<OracleCurve>> {
        let r = self.rois();
        if grids.len() != r {
            return Err(Error::shape("oracle grids", r, grids.len()));
        }
        if draws < 2 {
            return Err(Error::invalid("the oracle needs at least 2 draws"));
        }
        let root = Rng::new(seed);
        let chunks = draws.div_ceil(CHUNK);
        let effects: Vec<Vec<f64>> = grids
            .iter()
            .zip(&self.trends)
            .map(|(g, t)| g.iter().map(|&s| effect(*t, s)).collect())
            .collect();
        // per chunk, per ROI, per grid point: (Σ p, Σ p²)
        let partial: Vec<Vec<Vec<(f64, f64)>>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = root.fork(c as u64);
                let size = CHUNK.min(draws - c * CHUNK);
                let mut acc: Vec<Vec<(f64, f64)>> = grids.iter().map(|g| vec![(0.0, 0.0); g.len()]).collect();
                for _ in 0..size {
                    let d = self.draw(&mut rng);
                    let base = self.logit(&d);
                    for (ri, ((a, eff), s)) in acc.iter_mut().zip(&effects).zip(&d.signals).enumerate() {
                        let rest = base - effect(self.trends[ri], *s);
                        for (slot, e) in a.iter_mut().zip(eff) {
                            let p = sigmoid(rest + e);
                            slot.0 += p;
                            slot.1 += p * p;
                        }
                    }
                }
                acc
            })
            .collect();
        let m = draws as f64;
        let names = self.config.roi_names();
        Ok((0..r)
            .map(|ri| {
                let mut response = Vec::with_capacity(grids[ri].len());
                let mut se = Vec::with_capacity(grids[ri].len());
                for gi in 0..grids[ri].len() {
                    let (s1, s2) = partial.iter().fold((0.0, 0.0), |acc, c| (acc.0 + c[ri][gi].0, acc.1 + c[ri][gi].1));
                    let mean = s1 / m;
                    let var = ((s2 - m * mean * mean) / (m - 1.0)).max(0.0);
                    response.push(mean);
                    se.push((var / m).sqrt());
                }
                OracleCurve {
                    roi: names[ri].clone(),
                    grid: grids[ri].clone(),
                    response,
                    se,
                }
            })
            .collect())
    }

    /// Oracle of one ROI.
    pub fn oracle_adrf(&self, roi: &str, grid: &[f64], draws: usize, seed: u64) -> Result<OracleCurve> {
        let ri = self
            .config
            .roi_names()
            .iter()
            .position(|n| n == roi)
            .ok_or_else(|| Error::invalid(format!("unknown ROI {roi:?}")))?;
        let grids: Vec<Vec<f64>> = (0..self.rois())
            .map(|i| if i == ri { grid.to_vec() } else { Vec::new() })
            .collect();
        Ok(self.oracle(&grids, draws, seed)?.swap_remove(ri))
    }
}

/// Monte-Carlo estimate of a true dose-response curve on the signal scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCurve {
    pub roi: String,
    pub grid: Vec<f64>,
    pub response: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendEntry {
    pub roi: String,
    pub trend: Trend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub config: GeneratorConfig,
    pub confounders: Vec<String>,
    pub trends: Vec<TrendEntry>,
    pub oracle_draws: usize,
    pub curves: Vec<OracleCurve>,
    /// Noiseless `P(y = 1)` of each generated subject.
    pub probabilities: Vec<f64>,
}

impl GroundTruth {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(source: R) -> Result<Self> {
        Ok(serde_json::from_reader(source)?)
    }

    pub fn trend_of(&self, roi: &str) -> Option<Trend> {
        self.trends.iter().find(|t| t.roi == roi).map(|t| t.trend)
    }
}

/// Cohort, graph and ground truth; curves use `oracle_draws` Monte-Carlo
/// subjects on a 65-point grid over `[0, 1]`.
pub fn generate_with(cfg: &GeneratorConfig, seed: u64, oracle_draws: usize) -> Result<(Dataset, RoiGraph, GroundTruth)> {
    let problem = SyntheticProblem::new(cfg, seed)?;
    let mut rng = Rng::new(seed).fork(1);
    let (ds, probabilities) = problem.sample(cfg.n, &mut rng)?;
    let grid = unit_grid(REFERENCE_GRID);
    let curves = problem.oracle(&vec![grid; cfg.rois], oracle_draws, Rng::new(seed).fork(2).seed())?;
    let names = cfg.roi_names();
    let truth = GroundTruth {
        seed,
        config: cfg.clone(),
        confounders: problem.confounders.iter().map(|&c| names[c].clone()).collect(),
        trends: names
            .iter()
            .zip(&problem.trends)
            .map(|(roi, t)| TrendEntry { roi: roi.clone(), trend: *t })
            .collect(),
        oracle_draws,
        curves,
        probabilities,
    };
    Ok((ds, problem.graph, truth))
}

pub fn generate(cfg: &GeneratorConfig, seed: u64) -> Result<(Dataset, RoiGraph, GroundTruth)> {
    generate_with(cfg, seed, ORACLE_DRAWS)
}

/// `(rmse, amse)` between two curves on a shared grid.
pub fn evaluate_adrf(est: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::shape("curve lengths", truth.len(), est.len()));
    }
    let amse = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / est.len() as f64;
    Ok((amse.sqrt(), amse))
}

/// [`evaluate_adrf`] of an estimated curve against an oracle, which must
/// be on the same normalized grid.
pub fn evaluate_curve(est: &AdrfCurve, truth: &AdrfCurve) -> Result<(f64, f64)> {
    if est.grid != truth.grid {
        return Err(Error::invalid(format!("grids of {} and {} differ", est.roi, truth.roi)));
    }
    evaluate_adrf(&est.response, &truth.response)
}

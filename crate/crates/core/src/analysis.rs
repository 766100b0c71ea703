//! KMeans grouping of per-ROI dose-response curves and the trend report.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean, sample_sd, Rng};
use crate::pipeline::AdrfCurve;

pub const MAX_ITERATIONS: usize = 300;
pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Up,
    Down,
    Unbiased,
}

impl Trend {
    pub const ALL: [Trend; 3] = [Trend::Up, Trend::Down, Trend::Unbiased];

    pub fn as_str(self) -> &'static str {
        match self {
            Trend::Up => "up",
            Trend::Down => "down",
            Trend::Unbiased => "unbiased",
        }
    }

    /// How well a slope fits this label; larger is better.
    fn affinity(self, slope: f64) -> f64 {
        match self {
            Trend::Up => slope,
            Trend::Down => -slope,
            Trend::Unbiased => -slope.abs(),
        }
    }
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Trend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" => Ok(Trend::Up),
            "down" => Ok(Trend::Down),
            "unbiased" | "flat" => Ok(Trend::Unbiased),
            other => Err(Error::invalid(format!("unknown trend {other:?}"))),
        }
    }
}

/// Least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("slope inputs", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::invalid("a slope needs at least 2 points"));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("degenerate grid: all treatment values are equal"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

pub fn trend_of_slope(slope: f64, epsilon: f64) -> Trend {
    if slope > epsilon {
        Trend::Up
    } else if slope < -epsilon {
        Trend::Down
    } else {
        Trend::Unbiased
    }
}

pub fn label_trend(curve: &AdrfCurve, epsilon: f64) -> Result<Trend> {
    Ok(trend_of_slope(ols_slope(&curve.grid, &curve.response)?, epsilon))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub history: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.index(points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, w) in d.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.index(points.len())
        };
        centroids.push(points[pick].clone());
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        // an empty cluster takes the point farthest from its own centroid
        loop {
            let mut sizes = vec![0usize; k];
            for &a in &next {
                sizes[a] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else { break };
            let far = (0..points.len())
                .filter(|&i| sizes[next[i]] > 1)
                .map(|i| (i, dist2(&points[i], &centroids[next[i]])))
                .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            let Some((far, _)) = far else { break };
            centroids[empty] = points[far].clone();
            next[far] = empty;
        }
        history.push(
            points
                .iter()
                .zip(&next)
                .map(|(p, &a)| dist2(p, &centroids[a]))
                .sum(),
        );
        let stable = next == assignments;
        assignments = next;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            sizes[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            }
        }
        if stable || iterations >= MAX_ITERATIONS {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| dist2(p, &centroids[a]))
        .sum();
    KMeans {
        assignments,
        centroids,
        inertia,
        history,
        iterations,
    }
}

/// k-means++ seeding then Lloyd iterations, best of `restarts` by final
/// inertia (earliest restart wins ties).
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!("{} points cannot form {k} clusters", points.len())));
    }
    let dim = points[0].len();
    if let Some(i) = points.iter().position(|p| p.len() != dim) {
        return Err(Error::shape(format!("point {i}"), dim, points[i].len()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kmeans input".into()));
    }
    let root = Rng::new(seed);
    let mut best: Option<KMeans> = None;
    for r in 0..restarts.max(1) {
        let mut rng = root.fork(r as u64);
        let run = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// [`kmeans`] on curve values; all curves must share one grid.
pub fn kmeans_curves(curves: &[AdrfCurve], k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    if let Some(first) = curves.first() {
        if let Some(c) = curves.iter().find(|c| c.grid != first.grid) {
            return Err(Error::invalid(format!(
                "curve {} does not share the grid of curve {}",
                c.roi, first.roi
            )));
        }
    }
    let points: Vec<Vec<f64>> = curves.iter().map(|c| c.response.clone()).collect();
    kmeans(&points, k, seed, restarts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiAssignment {
    pub roi: String,
    pub cluster: usize,
    /// Label of the ROI's own curve.
    pub own_trend: Trend,
    /// Label of its cluster.
    pub trend: Trend,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub trend: Trend,
    pub members: usize,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub centroid_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub assignments: Vec<RoiAssignment>,
    pub clusters: Vec<ClusterSummary>,
    pub grid: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
}

impl ClusterReport {
    pub fn cluster_labels(&self) -> BTreeMap<usize, Trend> {
        self.clusters.iter().map(|c| (c.cluster, c.trend)).collect()
    }

    pub fn trend_of(&self, roi: &str) -> Option<Trend> {
        self.assignments.iter().find(|a| a.roi == roi).map(|a| a.trend)
    }
}

fn best_among(tied: &[Trend], slope: f64) -> Trend {
    let mut best = tied[0];
    for &t in &tied[1..] {
        if t.affinity(slope) > best.affinity(slope) {
            best = t;
        }
    }
    best
}

/// Names each cluster by the majority trend of its members, breaking ties
/// by the centroid slope. With three clusters and all three trends present,
/// a non-bijective naming is replaced by the permutation of
/// `{up, down, unbiased}` agreeing with the most members (centroid slopes
/// again break ties).
fn name_clusters(counts: &[[usize; 3]], slopes: &[f64]) -> Vec<Trend> {
    let k = counts.len();
    let majority: Vec<Trend> = counts
        .iter()
        .zip(slopes)
        .map(|(c, &s)| {
            let top = *c.iter().max().expect("three trends");
            let tied: Vec<Trend> = Trend::ALL.iter().zip(c).filter(|(_, n)| **n == top).map(|(t, _)| *t).collect();
            best_among(&tied, s)
        })
        .collect();
    let present = (0..3).all(|t| counts.iter().any(|c| c[t] > 0));
    let mut distinct = majority.clone();
    distinct.sort();
    distinct.dedup();
    if k != 3 || !present || distinct.len() == 3 {
        return majority;
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let score = |p: &[usize; 3]| -> (usize, f64) {
        let agree = (0..3).map(|c| counts[c][p[c]]).sum();
        let fit = (0..3).map(|c| Trend::ALL[p[c]].affinity(slopes[c])).sum();
        (agree, fit)
    };
    let mut best = PERMS[0];
    for p in &PERMS[1..] {
        let (a, f) = score(p);
        let (ba, bf) = score(&best);
        if a > ba || (a == ba && f > bf) {
            best = *p;
        }
    }
    best.iter().map(|&t| Trend::ALL[t]).collect()
}

/// Groups `curves` by `km` and labels each group; `epsilon` is the slope
/// threshold used for both member and centroid trends.
pub fn cluster_report(curves: &[AdrfCurve], km: &KMeans, epsilon: f64) -> Result<ClusterReport> {
    if curves.len() != km.assignments.len() {
        return Err(Error::invalid(format!(
            "{} curves but {} cluster assignments",
            curves.len(),
            km.assignments.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for c in curves {
        if !seen.insert(c.roi.as_str()) {
            return Err(Error::invalid(format!("ROI {} appears twice", c.roi)));
        }
    }
    let k = km.centroids.len();
    if let Some(&a) = km.assignments.iter().find(|&&a| a >= k) {
        return Err(Error::invalid(format!("cluster id {a} out of range for k = {k}")));
    }
    let grid = curves.first().map(|c| c.grid.clone()).unwrap_or_default();
    let own: Vec<Trend> = curves.iter().map(|c| label_trend(c, epsilon)).collect::<Result<_>>()?;
    let mut counts = vec![[0usize; 3]; k];
    for (&a, t) in km.assignments.iter().zip(&own) {
        counts[a][*t as usize] += 1;
    }
    let slopes: Vec<f64> = km
        .centroids
        .iter()
        .map(|c| ols_slope(&grid, c))
        .collect::<Result<_>>()?;
    let names = name_clusters(&counts, &slopes);
    let clusters = (0..k)
        .map(|c| {
            let acc: Vec<f64> = curves
                .iter()
                .zip(&km.assignments)
                .filter(|(_, &a)| a == c)
                .map(|(cv, _)| cv.accuracy)
                .collect();
            ClusterSummary {
                cluster: c,
                trend: names[c],
                members: acc.len(),
                accuracy_mean: if acc.is_empty() { f64::NAN } else { mean(&acc) },
                accuracy_sd: sample_sd(&acc),
                centroid_slope: slopes[c],
            }
        })
        .collect();
    let assignments = curves
        .iter()
        .zip(&km.assignments)
        .zip(&own)
        .map(|((c, &a), &t)| RoiAssignment {
            roi: c.roi.clone(),
            cluster: a,
            own_trend: t,
            trend: names[a],
            accuracy: c.accuracy,
        })
        .collect();
    Ok(ClusterReport {
        assignments,
        clusters,
        grid,
        centroids: km.centroids.clone(),
    })
}

/// `roi,cluster,trend,accuracy`
pub fn write_assignments_csv<W: Write>(report: &ClusterReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["roi", "cluster", "trend", "accuracy"])?;
    for a in &report.assignments {
        w.write_record([
            a.roi.clone(),
            a.cluster.to_string(),
            a.trend.to_string(),
            a.accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `cluster,trend,t,response`
pub fn write_centroids_csv<W: Write>(report: &ClusterReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster", "trend", "t", "response"])?;
    for (c, centroid) in report.centroids.iter().enumerate() {
        let trend = report.clusters[c].trend.to_string();
        for (t, v) in report.grid.iter().zip(centroid) {
            w.write_record([c.to_string(), trend.clone(), t.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

//! ROI graphs, Laplacians and the Chebyshev polynomial recurrence.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

const SYMMETRY_TOL: f64 = 1e-12;
const DUPLICATE_TOL: f64 = 1e-9;

/// Weighted undirected graph over named regions of interest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiGraph {
    names: Vec<String>,
    adjacency: Matrix,
}

/// Bookkeeping from [`RoiGraph::from_edges`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeLoadStats {
    pub edges: usize,
    pub self_loops_dropped: usize,
}

impl RoiGraph {
    pub fn new(names: Vec<String>, adjacency: Matrix) -> Result<Self> {
        let n = names.len();
        adjacency.expect_shape("adjacency", (n, n))?;
        let mut seen = HashMap::with_capacity(n);
        for (i, name) in names.iter().enumerate() {
            if seen.insert(name.as_str(), i).is_some() {
                return Err(Error::invalid(format!("duplicate node name '{name}'")));
            }
        }
        if !adjacency.is_finite() {
            return Err(Error::NonFinite("adjacency".into()));
        }
        if adjacency.asymmetry() > SYMMETRY_TOL {
            return Err(Error::invalid(format!(
                "adjacency is not symmetric (max deviation {:e})",
                adjacency.asymmetry()
            )));
        }
        for i in 0..n {
            if adjacency.get(i, i) != 0.0 {
                return Err(Error::invalid(format!("non-zero diagonal at node '{}'", names[i])));
            }
        }
        if let Some(w) = adjacency.as_slice().iter().find(|w| **w < 0.0) {
            return Err(Error::invalid(format!("negative edge weight {w}")));
        }
        Ok(RoiGraph { names, adjacency })
    }

    /// Builds a graph from `(src, dst, weight)` triples over a declared node
    /// universe.
    ///
    /// Repeats of the same directed edge are summed. When an edge is listed
    /// in both directions the two totals must agree within 1e-9 and count
    /// once. Self-loops are dropped and counted.
    pub fn from_edges<S: AsRef<str>>(
        names: Vec<String>,
        edges: &[(S, S, f64)],
    ) -> Result<(Self, EdgeLoadStats)> {
        let index: HashMap<&str, usize> = names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::invalid(format!("unknown node name '{s}'")))
        };
        let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut stats = EdgeLoadStats::default();
        for (src, dst, w) in edges {
            let (i, j) = (lookup(src.as_ref())?, lookup(dst.as_ref())?);
            if !w.is_finite() {
                return Err(Error::NonFinite(format!(
                    "weight of edge {}-{}",
                    src.as_ref(),
                    dst.as_ref()
                )));
            }
            if *w < 0.0 {
                return Err(Error::invalid(format!(
                    "negative weight {w} on edge {}-{}",
                    src.as_ref(),
                    dst.as_ref()
                )));
            }
            stats.edges += 1;
            if i == j {
                stats.self_loops_dropped += 1;
                continue;
            }
            *directed.entry((i, j)).or_insert(0.0) += w;
        }

        let n = names.len();
        let mut adjacency = Matrix::zeros(n, n);
        for (&(i, j), &w) in &directed {
            let weight = match directed.get(&(j, i)) {
                Some(&back) if (back - w).abs() > DUPLICATE_TOL => {
                    return Err(Error::invalid(format!(
                        "conflicting weights {w} and {back} for edge {}-{}",
                        names[i], names[j]
                    )));
                }
                _ => w,
            };
            adjacency.set(i, j, weight);
            adjacency.set(j, i, weight);
        }
        Ok((RoiGraph::new(names, adjacency)?, stats))
    }

    /// Reads an edge list (`src,dst,weight`) and a node universe
    /// (`roi_name`), both CSV with headers.
    pub fn read_csv<E: Read, N: Read>(edges: E, nodes: N) -> Result<(Self, EdgeLoadStats)> {
        let names = read_node_names(nodes)?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(edges);
        let header = rdr.headers()?.clone();
        let expected = ["src", "dst", "weight"];
        if header.len() != 3 || header.iter().zip(expected).any(|(a, b)| a != b) {
            return Err(Error::invalid(format!(
                "edge list header must be 'src,dst,weight', got '{}'",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut triples = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let w: f64 = rec[2].parse().map_err(|_| {
                Error::invalid(format!("edge row {}: weight '{}' is not a number", line + 1, &rec[2]))
            })?;
            triples.push((rec[0].to_string(), rec[1].to_string(), w));
        }
        RoiGraph::from_edges(names, &triples)
    }

    pub fn load(edges: &Path, nodes: &Path) -> Result<(Self, EdgeLoadStats)> {
        let e = std::fs::File::open(edges).map_err(|e| Error::from(e).in_file(edges))?;
        let n = std::fs::File::open(nodes).map_err(|e| Error::from(e).in_file(nodes))?;
        RoiGraph::read_csv(e, n)
    }

    /// Writes the upper-triangle edges with positive weight.
    pub fn write_edges<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src", "dst", "weight"])?;
        let n = self.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let a = self.adjacency.get(i, j);
                if a > 0.0 {
                    w.write_record([&self.names[i], &self.names[j], &a.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_nodes<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["roi_name"])?;
        for name in &self.names {
            w.write_record([name])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Cycle `0 - 1 - … - (n-1) - 0` with unit weights.
    pub fn ring(names: Vec<String>) -> Result<Self> {
        let n = names.len();
        let mut a = Matrix::zeros(n, n);
        if n > 1 {
            for i in 0..n {
                let j = (i + 1) % n;
                if i != j {
                    a.set(i, j, 1.0);
                    a.set(j, i, 1.0);
                }
            }
        }
        RoiGraph::new(names, a)
    }

    /// Random geometric graph: nodes uniform in the unit square, joined when
    /// closer than `radius`, weighted `1 − d / radius`.
    pub fn random_geometric(names: Vec<String>, radius: f64, rng: &mut Rng) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid(format!("radius must be > 0, got {radius}")));
        }
        let n = names.len();
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.uniform(), rng.uniform())).collect();
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                if d < radius {
                    let w = 1.0 - d / radius;
                    a.set(i, j, w);
                    a.set(j, i, w);
                }
            }
        }
        RoiGraph::new(names, a)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn index_of(&self, roi: &str) -> Option<usize> {
        self.names.iter().position(|n| n == roi)
    }

    /// Combinatorial Laplacian `D − A`.
    pub fn laplacian(&self) -> Matrix {
        let n = self.len();
        let mut l = self.adjacency.map(|w| -w);
        for i in 0..n {
            let degree: f64 = self.adjacency.row(i).iter().sum();
            l.set(i, i, degree);
        }
        l
    }

    /// Induced subgraph without `roi`; survivors keep their order.
    pub fn remove_node(&self, roi: &str) -> Result<RoiGraph> {
        let drop = self
            .index_of(roi)
            .ok_or_else(|| Error::invalid(format!("unknown roi '{roi}'")))?;
        let keep: Vec<usize> = (0..self.len()).filter(|&i| i != drop).collect();
        Ok(self.induced(&keep))
    }

    /// Subgraph on `keep` (indices into this graph), in that order.
    pub fn induced(&self, keep: &[usize]) -> RoiGraph {
        let m = keep.len();
        let mut a = Matrix::zeros(m, m);
        for (r, &i) in keep.iter().enumerate() {
            for (c, &j) in keep.iter().enumerate() {
                a.set(r, c, self.adjacency.get(i, j));
            }
        }
        RoiGraph {
            names: keep.iter().map(|&i| self.names[i].clone()).collect(),
            adjacency: a,
        }
    }
}

fn read_node_names<R: Read>(nodes: R) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(nodes);
    let header = rdr.headers()?.clone();
    if header.len() != 1 || &header[0] != "roi_name" {
        return Err(Error::invalid("node list header must be 'roi_name'"));
    }
    let mut names = Vec::new();
    for rec in rdr.records() {
        names.push(rec?[0].to_string());
    }
    Ok(names)
}

/// `2L / λ_max − I`, with spectrum inside `[−1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledLaplacian {
    pub matrix: Matrix,
    pub lambda_max: f64,
}

impl ScaledLaplacian {
    pub fn nodes(&self) -> usize {
        self.matrix.rows()
    }
}

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

/// Validates a combinatorial Laplacian and rescales it.
pub fn scale_laplacian(l: &Matrix) -> Result<ScaledLaplacian> {
    let (n, m) = l.shape();
    if n != m {
        return Err(Error::shape("Laplacian", "square matrix", format!("{n}x{m}")));
    }
    if !l.is_finite() {
        return Err(Error::NonFinite("Laplacian".into()));
    }
    let scale = l.max_abs().max(1.0);
    if l.asymmetry() > SYMMETRY_TOL * scale {
        return Err(Error::invalid("Laplacian is not symmetric"));
    }
    for i in 0..n {
        let row_sum: f64 = l.row(i).iter().sum();
        if row_sum.abs() > 1e-9 * scale {
            return Err(Error::invalid(format!(
                "not a Laplacian: row {i} sums to {row_sum}"
            )));
        }
    }
    let lambda_max = largest_eigenvalue(l, POWER_TOL, POWER_MAX_ITER)?;
    if lambda_max <= 0.0 {
        return Err(Error::DegenerateLaplacian);
    }
    let mut matrix = l.clone();
    matrix.scale(2.0 / lambda_max);
    for i in 0..n {
        matrix.set(i, i, matrix.get(i, i) - 1.0);
    }
    Ok(ScaledLaplacian { matrix, lambda_max })
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
///
/// Power iteration on `M²` (same dominant eigenvector as `M` for PSD input)
/// from a fixed seeded start vector. Stops once the residual
/// `‖Mv − λv‖ ≤ tol · λ`. A matrix whose iterate collapses to zero is
/// reported as eigenvalue 0.
pub fn largest_eigenvalue(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    let n = m.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = Rng::new(0x5EED_1A9C);
    let mut v: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.5, 1.5)).collect();
    normalize(&mut v);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mv = m.matvec(&v)?;
        let lambda: f64 = dot(&v, &mv);
        if norm(&mv) == 0.0 {
            return Ok(0.0);
        }
        residual = mv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * lambda.abs() {
            return Ok(lambda);
        }
        let mut next = m.matvec(&mv)?;
        if norm(&next) == 0.0 {
            return Ok(0.0);
        }
        normalize(&mut next);
        v = next;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

/// `[T_0(L̃)X, …, T_{K−1}(L̃)X]` by the three-term recurrence.
pub fn cheb_apply(lt: &ScaledLaplacian, x: &Matrix, order: usize) -> Result<Vec<Matrix>> {
    if order == 0 {
        return Err(Error::invalid("Chebyshev order K must be >= 1"));
    }
    if x.rows() != lt.nodes() {
        return Err(Error::shape("cheb_apply input rows", lt.nodes(), x.rows()));
    }
    let mut terms = Vec::with_capacity(order);
    terms.push(x.clone());
    if order > 1 {
        terms.push(lt.matrix.matmul(x)?);
    }
    for k in 2..order {
        let mut next = lt.matrix.matmul(&terms[k - 1])?;
        next.scale(2.0);
        next.axpy(-1.0, &terms[k - 2])?;
        terms.push(next);
    }
    Ok(terms)
}

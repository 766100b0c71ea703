use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

const ROI_PREFIX: &str = "roi_";
const DEMOGRAPHIC_COLUMNS: [&str; 5] = ["age", "sex", "mmse", "cdr", "label"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub roi_signals: Vec<f64>,
    pub age: f64,
    pub sex: String,
    pub mmse: f64,
    pub cdr: f64,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub sd: f64,
}

impl FeatureStats {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self {
            mean,
            sd: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    pub fn z(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }
}

/// Normalization statistics, always computed on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub roi: Vec<FeatureStats>,
    pub roi_min: Vec<f64>,
    pub roi_max: Vec<f64>,
    pub age: FeatureStats,
    pub mmse: FeatureStats,
    pub cdr: FeatureStats,
    /// Sorted categorical levels; a subject's embedding row is its index here.
    pub sex_levels: Vec<String>,
}

impl NormStats {
    pub fn compute(subjects: &[SubjectRecord], rois: usize) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::invalid("cannot compute normalization statistics of an empty set"));
        }
        let column = |r: usize| subjects.iter().map(move |s| s.roi_signals[r]);
        let mut sex_levels: Vec<String> = subjects.iter().map(|s| s.sex.clone()).collect();
        sex_levels.sort();
        sex_levels.dedup();
        Ok(Self {
            roi: (0..rois).map(|r| FeatureStats::of(column(r))).collect(),
            roi_min: (0..rois).map(|r| column(r).fold(f64::INFINITY, f64::min)).collect(),
            roi_max: (0..rois).map(|r| column(r).fold(f64::NEG_INFINITY, f64::max)).collect(),
            age: FeatureStats::of(subjects.iter().map(|s| s.age)),
            mmse: FeatureStats::of(subjects.iter().map(|s| s.mmse)),
            cdr: FeatureStats::of(subjects.iter().map(|s| s.cdr)),
            sex_levels,
        })
    }

    /// Min-max scaled treatment, clipped to `[0, 1]`.
    pub fn treatment(&self, roi: usize, signal: f64) -> f64 {
        let (lo, hi) = (self.roi_min[roi], self.roi_max[roi]);
        if hi > lo {
            ((signal - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    /// Maps a normalized treatment back to the signal scale.
    pub fn raw_treatment(&self, roi: usize, t: f64) -> f64 {
        self.roi_min[roi] + t * (self.roi_max[roi] - self.roi_min[roi])
    }

    pub fn sex_level(&self, sex: &str) -> Result<usize> {
        self.sex_levels
            .iter()
            .position(|l| l == sex)
            .ok_or_else(|| Error::invalid(format!("unseen categorical level sex={sex:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub roi_names: Vec<String>,
    pub subjects: Vec<SubjectRecord>,
    pub stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(roi_names: Vec<String>, subjects: Vec<SubjectRecord>) -> Result<Self> {
        for (i, s) in subjects.iter().enumerate() {
            if s.roi_signals.len() != roi_names.len() {
                return Err(Error::shape(
                    format!("subject {i} ROI signals"),
                    roi_names.len(),
                    s.roi_signals.len(),
                ));
            }
            if s.label > 1 {
                return Err(Error::invalid(format!("subject {i}: label {} not in {{0,1}}", s.label)));
            }
        }
        Ok(Self {
            roi_names,
            subjects,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn rois(&self) -> usize {
        self.roi_names.len()
    }

    pub fn roi_index(&self, roi: &str) -> Result<usize> {
        self.roi_names
            .iter()
            .position(|n| n == roi)
            .ok_or_else(|| Error::invalid(format!("unknown ROI {roi:?}")))
    }

    pub fn stats(&self) -> Result<&NormStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no normalization statistics; split it first"))
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers = reader.headers()?.clone();
        let mut roi_cols = Vec::new();
        let mut roi_names = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if let Some(name) = h.strip_prefix(ROI_PREFIX) {
                roi_cols.push(i);
                roi_names.push(name.to_string());
            }
        }
        if roi_cols.is_empty() {
            return Err(Error::invalid("dataset header has no roi_<name> columns"));
        }
        let mut col = [0usize; 5];
        for (slot, name) in col.iter_mut().zip(DEMOGRAPHIC_COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid(format!("dataset is missing column {name:?}")))?;
        }
        let mut subjects = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let line = row + 2;
            let num = |i: usize| -> Result<f64> {
                let field = record.get(i).unwrap_or("");
                let v: f64 = field.parse().map_err(|_| {
                    Error::invalid(format!("row {line}, column {}: not a number: {field:?}", &headers[i]))
                })?;
                if !v.is_finite() {
                    return Err(Error::invalid(format!("row {line}, column {}: non-finite", &headers[i])));
                }
                Ok(v)
            };
            let label_field = record.get(col[4]).unwrap_or("");
            let label = match label_field {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::invalid(format!("row {line}: label {other:?} not in {{0,1}}")))
                }
            };
            subjects.push(SubjectRecord {
                roi_signals: roi_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?,
                age: num(col[0])?,
                sex: record.get(col[1]).unwrap_or("").to_string(),
                mmse: num(col[2])?,
                cdr: num(col[3])?,
                label,
            });
        }
        Dataset::new(roi_names, subjects)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::read_csv(file).map_err(|e| e.in_file(path))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self.roi_names.iter().map(|n| format!("{ROI_PREFIX}{n}")).collect();
        header.extend(DEMOGRAPHIC_COLUMNS.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for s in &self.subjects {
            let mut row: Vec<String> = s.roi_signals.iter().map(|v| v.to_string()).collect();
            row.extend([
                s.age.to_string(),
                s.sex.clone(),
                s.mmse.to_string(),
                s.cdr.to_string(),
                s.label.to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn subset(&self, idx: &[usize], stats: NormStats) -> Dataset {
        Dataset {
            roi_names: self.roi_names.clone(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
            stats: Some(stats),
        }
    }
}

/// Seeded shuffle then split; both parts keep the original subject order and
/// carry statistics of the training part.
pub fn split_dataset(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test_fraction must lie in (0, 1), got {test_fraction}")));
    }
    let n = ds.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::invalid(format!(
            "cannot split {n} subjects with test_fraction {test_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut test_idx = order[..n_test].to_vec();
    let mut train_idx = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let train_subjects: Vec<SubjectRecord> = train_idx.iter().map(|&i| ds.subjects[i].clone()).collect();
    let stats = NormStats::compute(&train_subjects, ds.rois())?;
    Ok((ds.subset(&train_idx, stats.clone()), ds.subset(&test_idx, stats)))
}

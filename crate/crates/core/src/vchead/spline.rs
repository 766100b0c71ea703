use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamped B-spline basis on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Builds the clamped knot vector from the interior knots.
    pub fn clamped(degree: usize, interior: &[f64]) -> Result<Self> {
        let mut knots = vec![0.0; degree + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::from_knots(degree, knots)
    }

    /// Evenly spaced interior knots, `count` of them.
    pub fn uniform(degree: usize, count: usize) -> Result<Self> {
        let interior: Vec<f64> = (1..=count).map(|i| i as f64 / (count + 1) as f64).collect();
        Self::clamped(degree, &interior)
    }

    pub fn from_knots(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::invalid(format!(
                "degree {degree} spline needs at least {} knots",
                2 * (degree + 1)
            )));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::invalid("spline knots must be nondecreasing"));
        }
        let m = knots.len();
        let clamped_low = knots[..=degree].iter().all(|&k| k == 0.0);
        let clamped_high = knots[m - degree - 1..].iter().all(|&k| k == 1.0);
        if !clamped_low || !clamped_high {
            return Err(Error::invalid("spline knots must be clamped to [0, 1]"));
        }
        if knots[degree + 1..m - degree - 1].iter().any(|&k| k <= 0.0 || k >= 1.0) {
            return Err(Error::invalid("interior knots must lie strictly inside (0, 1)"));
        }
        Ok(Self { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("treatment {t} outside [0, 1]")));
        }
        Ok(())
    }

    /// Degree-0 indicators; the last non-empty span is closed at `t = 1`.
    fn indicators(&self, t: f64) -> Vec<f64> {
        let k = &self.knots;
        let mut n = vec![0.0; k.len() - 1];
        let span = if t >= 1.0 {
            (0..k.len() - 1).rev().find(|&i| k[i] < k[i + 1]).unwrap_or(0)
        } else {
            (0..k.len() - 1).find(|&i| k[i] <= t && t < k[i + 1]).unwrap_or(0)
        };
        n[span] = 1.0;
        n
    }

    fn raise(&self, mut n: Vec<f64>, t: f64, to: usize) -> Vec<f64> {
        let k = &self.knots;
        for p in 1..=to {
            let next: Vec<f64> = (0..k.len() - 1 - p)
                .map(|i| {
                    let mut v = 0.0;
                    let left = k[i + p] - k[i];
                    if left > 0.0 {
                        v += (t - k[i]) / left * n[i];
                    }
                    let right = k[i + p + 1] - k[i + 1];
                    if right > 0.0 {
                        v += (k[i + p + 1] - t) / right * n[i + 1];
                    }
                    v
                })
                .collect();
            n = next;
        }
        n
    }

    /// `φ_0(t) … φ_{L−1}(t)` by the Cox–de Boor recursion.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        Self::check(t)?;
        Ok(self.raise(self.indicators(t), t, self.degree))
    }

    /// `dφ_l/dt`.
    pub fn derivative(&self, t: f64) -> Result<Vec<f64>> {
        Self::check(t)?;
        let p = self.degree;
        if p == 0 {
            return Ok(vec![0.0; self.len()]);
        }
        let lower = self.raise(self.indicators(t), t, p - 1);
        let k = &self.knots;
        Ok((0..self.len())
            .map(|i| {
                let mut d = 0.0;
                let left = k[i + p] - k[i];
                if left > 0.0 {
                    d += p as f64 / left * lower[i];
                }
                let right = k[i + p + 1] - k[i + 1];
                if right > 0.0 {
                    d -= p as f64 / right * lower[i + 1];
                }
                d
            })
            .collect())
    }
}

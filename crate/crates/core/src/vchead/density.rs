use crate::error::{Error, Result};

/// Softmax over `B+1` logits at the grid `t_b = b/B`. The logits come from
/// a linear layer on the latent vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DensityHead {
    pub intervals: usize,
}

impl DensityHead {
    pub fn new(intervals: usize) -> Result<Self> {
        if intervals < 2 {
            return Err(Error::invalid(format!("density grid needs B >= 2, got {intervals}")));
        }
        Ok(Self { intervals })
    }

    pub fn points(&self) -> usize {
        self.intervals + 1
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.intervals).map(|b| b as f64 / self.intervals as f64).collect()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Left grid index and weight on the right neighbour.
fn locate(t: f64, intervals: usize) -> (usize, f64) {
    let pos = t * intervals as f64;
    let idx = (pos.floor() as usize).min(intervals - 1);
    (idx, pos - idx as f64)
}

fn check(t: f64, probs: &[f64]) -> Result<usize> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("treatment {t} outside [0, 1]")));
    }
    if probs.len() < 3 {
        return Err(Error::shape("density grid points", ">= 3", probs.len()));
    }
    Ok(probs.len() - 1)
}

/// Trapezoid integral of the interpolated grid values over `[0, 1]`.
fn trapezoid(probs: &[f64]) -> f64 {
    let b = probs.len() - 1;
    (probs.iter().sum::<f64>() - 0.5 * (probs[0] + probs[b])) / b as f64
}

/// `p(t | z)`: linear interpolation of the grid probabilities, normalized to
/// integrate to one.
pub fn conditional_density(t: f64, probs: &[f64]) -> Result<f64> {
    let b = check(t, probs)?;
    let (idx, w) = locate(t, b);
    let interp = (1.0 - w) * probs[idx] + w * probs[idx + 1];
    Ok(interp / trapezoid(probs))
}

/// `−ln p(t | z)` and its gradient with respect to the logits.
pub fn density_nll(t: f64, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    let probs = softmax(logits);
    let b = check(t, &probs)?;
    let (idx, w) = locate(t, b);
    let interp = (1.0 - w) * probs[idx] + w * probs[idx + 1];
    let integral = trapezoid(&probs);
    let value = -(interp / integral).ln();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("density at t = {t}")));
    }
    let mut d_probs = vec![0.0; probs.len()];
    d_probs[idx] -= (1.0 - w) / interp;
    d_probs[idx + 1] -= w / interp;
    // ∂ ln I / ∂π_k is 1/(B·I), halved at the two endpoints
    let edge = -0.5 / (b as f64 * integral);
    d_probs[0] += edge;
    d_probs[b] += edge;
    let inner = 1.0 / (b as f64 * integral);
    for d in d_probs.iter_mut() {
        *d += inner;
    }
    let dot: f64 = d_probs.iter().zip(&probs).map(|(g, p)| g * p).sum();
    let d_logits = probs.iter().zip(&d_probs).map(|(p, g)| p * (g - dot)).collect();
    Ok((value, d_logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_points_for_ten_intervals() {
        let h = DensityHead::new(10).unwrap();
        assert_eq!(h.points(), 11);
        assert_eq!(h.grid().len(), 11);
        assert_eq!(h.grid()[0], 0.0);
        assert_eq!(h.grid()[10], 1.0);
        assert!(DensityHead::new(1).is_err());
    }

    #[test]
    fn softmax_symmetry_and_saturation() {
        let p = softmax(&[0.3; 11]);
        for v in &p {
            assert!((v - 1.0 / 11.0).abs() < 1e-15);
        }
        let mut l = vec![0.0; 11];
        l[4] = 50.0;
        let p = softmax(&l);
        assert!(p[4] > 1.0 - 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_probs_give_unit_density() {
        let p = vec![1.0 / 11.0; 11];
        for i in 0..=37 {
            let t = i as f64 / 37.0;
            assert!((conditional_density(t, &p).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_is_normalized_average() {
        let p = softmax(&[0.1, 0.5, -0.3, 1.2, 0.0, 0.4, -1.0, 0.7, 0.2, 0.9, -0.5]);
        let integral = (1.0 - 0.5 * (p[0] + p[10])) / 10.0;
        let got = conditional_density(0.35, &p).unwrap();
        assert!((got - 0.5 * (p[3] + p[4]) / integral).abs() < 1e-12);
    }

    #[test]
    fn integrates_to_one_on_fine_mesh() {
        let mut rng = crate::numerics::Rng::new(5);
        for _ in 0..20 {
            let p = softmax(&(0..11).map(|_| 2.0 * rng.normal()).collect::<Vec<_>>());
            let m = 10_000;
            let vals: Vec<f64> = (0..=m).map(|i| conditional_density(i as f64 / m as f64, &p).unwrap()).collect();
            let integral: f64 =
                vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / m as f64;
            assert!((integral - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nll_gradient_matches_finite_difference() {
        let mut rng = crate::numerics::Rng::new(8);
        for t in [0.0, 0.05, 0.33, 0.5, 0.999, 1.0] {
            let logits: Vec<f64> = (0..11).map(|_| rng.normal()).collect();
            let (_, g) = density_nll(t, &logits).unwrap();
            for k in 0..11 {
                let mut up = logits.clone();
                up[k] += 1e-6;
                let mut down = logits.clone();
                down[k] -= 1e-6;
                let fd = (density_nll(t, &up).unwrap().0 - density_nll(t, &down).unwrap().0) / 2e-6;
                assert!((g[k] - fd).abs() < 1e-7, "t={t} k={k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn outside_interval_is_rejected() {
        let p = vec![1.0 / 11.0; 11];
        assert!(conditional_density(1.5, &p).is_err());
        assert!(density_nll(-0.1, &[0.0; 11]).is_err());
    }
}

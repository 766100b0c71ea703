//! Dense linear algebra, seeded randomness, Adam and gradient checking.

mod gradcheck;
mod matrix;
mod params;
mod rng;

pub use gradcheck::{
    central_diff_gradient, check_gradients, compare_gradients, relative_error, Differentiable,
    EntryError, GradReport,
};
pub use matrix::{gemm, product, Matrix, Trans};
pub use params::{Adam, ParamEntry, ParamStore};
pub use rng::{mix, Rng};

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `n` evenly spaced points on `[0, 1]`, `i / (n − 1)`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

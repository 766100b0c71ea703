//! Varying-coefficient outcome head and conditional treatment density.
//!
//! A varying layer keeps its coefficients stacked as one
//! `(L·(in+1)) × out` matrix: block `l` (rows `l·(in+1) .. (l+1)·(in+1)`)
//! is `A_l`, the last row of each block being the bias. The layer's weights
//! at treatment `t` are `θ(t) = Σ_l φ_l(t) A_l`.

mod density;
mod spline;

pub use density::{conditional_density, density_nll, softmax, DensityHead};
pub use spline::SplineBasis;

use crate::error::{Error, Result};
use crate::netblocks::Activation;
use crate::numerics::{product, Matrix, Trans};

/// `φ(t_b)` for every sample, `B × L`.
pub fn basis_matrix(basis: &SplineBasis, t: &[f64]) -> Result<Matrix> {
    let mut out = Matrix::zeros(t.len(), basis.len());
    for (b, &tb) in t.iter().enumerate() {
        out.row_mut(b).copy_from_slice(&basis.eval(tb)?);
    }
    Ok(out)
}

/// Weights of a varying layer at one treatment value, `(in+1) × out`.
pub fn theta_of_t(coef: &Matrix, in_dim: usize, phi: &[f64]) -> Result<Matrix> {
    let block = in_dim + 1;
    if coef.rows() != phi.len() * block {
        return Err(Error::shape("varying coefficients rows", phi.len() * block, coef.rows()));
    }
    let mut theta = Matrix::zeros(block, coef.cols());
    for (l, &p) in phi.iter().enumerate() {
        theta.axpy(p, &coef.row_block(l * block, block))?;
    }
    Ok(theta)
}

/// Adjoint of [`theta_of_t`]: `∂/∂A_l = φ_l(t) ∂/∂θ`.
pub fn theta_of_t_backward(d_theta: &Matrix, phi: &[f64]) -> Matrix {
    let mut data = Vec::with_capacity(phi.len() * d_theta.len());
    for &p in phi {
        data.extend(d_theta.as_slice().iter().map(|g| p * g));
    }
    Matrix::from_vec(phi.len() * d_theta.rows(), d_theta.cols(), data)
        .expect("block sizes are consistent")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VaryingLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

pub struct VaryingTape {
    expanded: Matrix,
    pre: Matrix,
}

impl VaryingTape {
    pub fn pre_activation(&self) -> &Matrix {
        &self.pre
    }
}

pub struct VaryingGrads {
    pub coef: Matrix,
    pub input: Matrix,
}

impl VaryingLayer {
    pub fn coef_shape(&self, basis_len: usize) -> (usize, usize) {
        (basis_len * (self.in_dim + 1), self.out_dim)
    }

    /// Row `b` of the result is `φ(t_b) ⊗ [z_b; 1]`, so that the layer is a
    /// single product with the stacked coefficients.
    fn expand(&self, z: &Matrix, phi: &Matrix) -> Matrix {
        let block = self.in_dim + 1;
        let mut e = Matrix::zeros(z.rows(), phi.cols() * block);
        for b in 0..z.rows() {
            let zr = z.row(b);
            let row = e.row_mut(b);
            for (l, &p) in phi.row(b).iter().enumerate() {
                let dst = &mut row[l * block..(l + 1) * block];
                for (d, v) in dst.iter_mut().zip(zr) {
                    *d = p * v;
                }
                dst[block - 1] = p;
            }
        }
        e
    }

    pub fn forward(&self, z: &Matrix, phi: &Matrix, coef: &Matrix) -> Result<(Matrix, VaryingTape)> {
        if z.cols() != self.in_dim {
            return Err(Error::shape("varying layer input", self.in_dim, z.cols()));
        }
        if phi.rows() != z.rows() {
            return Err(Error::shape("spline basis rows", z.rows(), phi.rows()));
        }
        coef.expect_shape("varying coefficients", self.coef_shape(phi.cols()))?;
        let expanded = self.expand(z, phi);
        let pre = expanded.matmul(coef)?;
        Ok((self.activation.apply(&pre), VaryingTape { expanded, pre }))
    }

    pub fn backward(
        &self,
        phi: &Matrix,
        coef: &Matrix,
        tape: &VaryingTape,
        d_out: &Matrix,
    ) -> Result<VaryingGrads> {
        d_out.expect_shape("varying layer output gradient", tape.pre.shape())?;
        let d_pre = self.activation.backprop(&tape.pre, d_out);
        let d_coef = product(&tape.expanded, Trans::Yes, &d_pre, Trans::No)?;
        let d_exp = product(&d_pre, Trans::No, coef, Trans::Yes)?;
        let block = self.in_dim + 1;
        let mut d_z = Matrix::zeros(d_pre.rows(), self.in_dim);
        for b in 0..d_pre.rows() {
            let src = d_exp.row(b);
            let dst = d_z.row_mut(b);
            for (l, &p) in phi.row(b).iter().enumerate() {
                for (d, g) in dst.iter_mut().zip(&src[l * block..l * block + self.in_dim]) {
                    *d += p * g;
                }
            }
        }
        Ok(VaryingGrads { coef: d_coef, input: d_z })
    }
}

/// One subject through a hidden varying layer and a scalar varying output,
/// with weights materialized by [`theta_of_t`]. Returns the logit.
pub fn varying_forward(
    z: &[f64],
    t: f64,
    hidden: &Matrix,
    output: &Matrix,
    basis: &SplineBasis,
) -> Result<f64> {
    let phi = basis.eval(t)?;
    let mut input = z.to_vec();
    input.push(1.0);
    let th = theta_of_t(hidden, z.len(), &phi)?;
    let mut h: Vec<f64> = Matrix::row_vector(&input)
        .matmul(&th)?
        .into_vec()
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let to = theta_of_t(output, h.len(), &phi)?;
    if to.cols() != 1 {
        return Err(Error::shape("varying output width", 1, to.cols()));
    }
    h.push(1.0);
    Ok(Matrix::row_vector(&h).matmul(&to)?.get(0, 0))
}

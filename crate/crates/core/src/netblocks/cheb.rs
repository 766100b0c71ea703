//! Spectral graph convolution `σ(Σ_k T_k(L̃) X Θ_k)` over batches of graph
//! signals.
//!
//! A batch of `B` signals on an `N`-node graph is stored node-major: row
//! `i · B + b` holds the features of node `i` for sample `b`. Viewed as an
//! `N × (B·F)` matrix this is exactly the layout `L̃` multiplies, so one
//! product propagates the whole batch.

use super::Activation;
use crate::error::{Error, Result};
use crate::graph::ScaledLaplacian;
use crate::numerics::{product, Matrix, Trans};

/// Shape and nonlinearity of one Chebyshev layer. The filter coefficients
/// `Θ_0 … Θ_{K−1}` live in one stacked `(K·in_dim) × out_dim` matrix,
/// block `k` being rows `k·in_dim .. (k+1)·in_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChebConv {
    pub in_dim: usize,
    pub out_dim: usize,
    pub order: usize,
    pub activation: Activation,
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ChebTape {
    batch: usize,
    /// `[T_0X | T_1X | … ]`, `(N·B) × (K·in_dim)`.
    terms: Matrix,
    pre: Matrix,
}

impl ChebTape {
    pub fn pre_activation(&self) -> &Matrix {
        &self.pre
    }
}

pub struct ChebGrads {
    pub theta: Matrix,
    pub input: Matrix,
}

impl ChebConv {
    pub fn theta_shape(&self) -> (usize, usize) {
        (self.order * self.in_dim, self.out_dim)
    }

    /// Stacks per-order filter matrices into the layout `forward` expects.
    pub fn stack_theta(blocks: &[Matrix]) -> Result<Matrix> {
        let Some(first) = blocks.first() else {
            return Err(Error::invalid("at least one filter matrix required"));
        };
        let (fin, fout) = first.shape();
        let mut data = Vec::with_capacity(blocks.len() * fin * fout);
        for b in blocks {
            b.expect_shape("Chebyshev filter block", (fin, fout))?;
            data.extend_from_slice(b.as_slice());
        }
        Matrix::from_vec(blocks.len() * fin, fout, data)
    }

    fn check(&self, lt: &ScaledLaplacian, x: &Matrix, theta: &Matrix) -> Result<usize> {
        if self.order == 0 {
            return Err(Error::invalid("Chebyshev order K must be >= 1"));
        }
        theta.expect_shape("Chebyshev filters", self.theta_shape())?;
        let n = lt.nodes();
        if x.cols() != self.in_dim {
            return Err(Error::shape("Chebyshev input features", self.in_dim, x.cols()));
        }
        if n == 0 || x.rows() % n != 0 {
            return Err(Error::shape(
                "Chebyshev input rows",
                format!("a multiple of {n} nodes"),
                x.rows(),
            ));
        }
        Ok(x.rows() / n)
    }

    pub fn forward(
        &self,
        lt: &ScaledLaplacian,
        x: &Matrix,
        theta: &Matrix,
    ) -> Result<(Matrix, ChebTape)> {
        let batch = self.check(lt, x, theta)?;
        let mut terms: Vec<Matrix> = Vec::with_capacity(self.order);
        terms.push(x.clone());
        if self.order > 1 {
            terms.push(propagate(lt, x, batch, Trans::No)?);
        }
        for k in 2..self.order {
            let mut next = propagate(lt, &terms[k - 1], batch, Trans::No)?;
            next.scale(2.0);
            next.axpy(-1.0, &terms[k - 2])?;
            terms.push(next);
        }
        let refs: Vec<&Matrix> = terms.iter().collect();
        let terms = Matrix::hcat(&refs)?;
        let pre = terms.matmul(theta)?;
        let out = self.activation.apply(&pre);
        Ok((out, ChebTape { batch, terms, pre }))
    }

    pub fn backward(
        &self,
        lt: &ScaledLaplacian,
        theta: &Matrix,
        tape: &ChebTape,
        d_out: &Matrix,
    ) -> Result<ChebGrads> {
        d_out.expect_shape("Chebyshev output gradient", tape.pre.shape())?;
        let d_pre = self.activation.backprop(&tape.pre, d_out);
        let d_theta = product(&tape.terms, Trans::Yes, &d_pre, Trans::No)?;
        let d_terms = product(&d_pre, Trans::No, theta, Trans::Yes)?;
        let f = self.in_dim;
        let mut grads: Vec<Matrix> = (0..self.order).map(|k| d_terms.columns(k * f, f)).collect();
        // adjoint of T_k = 2 L̃ T_{k−1} − T_{k−2}, walked from the top order down
        for k in (2..self.order).rev() {
            let dk = std::mem::replace(&mut grads[k], Matrix::zeros(0, 0));
            let mut up = propagate(lt, &dk, tape.batch, Trans::Yes)?;
            up.scale(2.0);
            grads[k - 1].add_assign(&up)?;
            grads[k - 2].axpy(-1.0, &dk)?;
        }
        if self.order > 1 {
            let d1 = propagate(lt, &grads[1], tape.batch, Trans::Yes)?;
            grads[0].add_assign(&d1)?;
        }
        Ok(ChebGrads {
            theta: d_theta,
            input: grads.swap_remove(0),
        })
    }
}

/// `L̃ · X` (or `L̃ᵀ · X`) for every sample of a node-major batch.
fn propagate(lt: &ScaledLaplacian, x: &Matrix, batch: usize, t: Trans) -> Result<Matrix> {
    let n = lt.nodes();
    let width = batch * x.cols();
    let wide = Matrix::from_vec(n, width, x.as_slice().to_vec())?;
    product(&lt.matrix, t, &wide, Trans::No)?.reshape(x.rows(), x.cols())
}

/// Mean over the nodes of each sample: `(N·B) × F → B × F`.
pub fn mean_pool(x: &Matrix, nodes: usize) -> Result<Matrix> {
    if nodes == 0 || x.rows() % nodes != 0 {
        return Err(Error::shape("mean_pool rows", format!("multiple of {nodes}"), x.rows()));
    }
    let batch = x.rows() / nodes;
    let mut out = Matrix::zeros(batch, x.cols());
    for i in 0..nodes {
        for b in 0..batch {
            let src = x.row(i * batch + b);
            for (o, v) in out.row_mut(b).iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    out.scale(1.0 / nodes as f64);
    Ok(out)
}

pub fn mean_pool_backward(d_out: &Matrix, nodes: usize) -> Matrix {
    let batch = d_out.rows();
    let mut dx = Matrix::zeros(nodes * batch, d_out.cols());
    let inv = 1.0 / nodes as f64;
    for i in 0..nodes {
        for b in 0..batch {
            for (d, g) in dx.row_mut(i * batch + b).iter_mut().zip(d_out.row(b)) {
                *d = g * inv;
            }
        }
    }
    dx
}

/// Node-major batch from per-sample `N × F` signals.
pub fn stack_node_major(samples: &[Matrix]) -> Result<Matrix> {
    let Some(first) = samples.first() else {
        return Ok(Matrix::zeros(0, 0));
    };
    let (n, f) = first.shape();
    let batch = samples.len();
    let mut out = Matrix::zeros(n * batch, f);
    for (b, s) in samples.iter().enumerate() {
        s.expect_shape("graph signal", (n, f))?;
        for i in 0..n {
            out.row_mut(i * batch + b).copy_from_slice(s.row(i));
        }
    }
    Ok(out)
}

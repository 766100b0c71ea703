//! Deep & Cross network pieces: embedding/stack input, cross layers, dense
//! layers and the combination layer. Every function works on a batch, one
//! sample per row.

use super::Activation;
use crate::error::{Error, Result};
use crate::numerics::{product, Matrix, Trans};

/// `x_0 = [embed(level) ∥ dense]` for every row.
///
/// `table` holds one embedding row per categorical level; `dense` is
/// expected to be normalized already.
pub fn embed_and_stack(levels: &[usize], dense: &Matrix, table: &Matrix) -> Result<Matrix> {
    if dense.rows() != levels.len() {
        return Err(Error::shape("dense features rows", levels.len(), dense.rows()));
    }
    let e = table.cols();
    let mut out = Matrix::zeros(levels.len(), e + dense.cols());
    for (b, &level) in levels.iter().enumerate() {
        if level >= table.rows() {
            return Err(Error::invalid(format!(
                "unseen categorical level {level} (embedding has {} levels)",
                table.rows()
            )));
        }
        let row = out.row_mut(b);
        row[..e].copy_from_slice(table.row(level));
        row[e..].copy_from_slice(dense.row(b));
    }
    Ok(out)
}

/// Gradient of the embedding table given `∂/∂x_0`.
pub fn embed_backward(levels: &[usize], d_x0: &Matrix, table_shape: (usize, usize)) -> Matrix {
    let (rows, e) = table_shape;
    let mut d_table = Matrix::zeros(rows, e);
    for (b, &level) in levels.iter().enumerate() {
        for (d, g) in d_table.row_mut(level).iter_mut().zip(&d_x0.row(b)[..e]) {
            *d += g;
        }
    }
    d_table
}

/// One cross layer, `x_{l+1} = x_0 (x_lᵀ w) + b + x_l`.
///
/// `w` is `d × 1`, `b` is `1 × d`. The outer product `x_0 x_lᵀ` is never
/// formed: each row needs only the scalar `x_lᵀ w`, which is returned for
/// the backward pass.
pub fn cross_layer(x0: &Matrix, xl: &Matrix, w: &Matrix, b: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let d = x0.cols();
    xl.expect_shape("cross layer x_l", x0.shape())?;
    w.expect_shape("cross layer weight", (d, 1))?;
    b.expect_shape("cross layer bias", (1, d))?;
    let wv = w.as_slice();
    let bv = b.as_slice();
    let mut out = Matrix::zeros(x0.rows(), d);
    let mut dots = Vec::with_capacity(x0.rows());
    for r in 0..x0.rows() {
        let s: f64 = xl.row(r).iter().zip(wv).map(|(a, c)| a * c).sum();
        dots.push(s);
        let (x0r, xlr) = (x0.row(r), xl.row(r));
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = x0r[j] * s + bv[j] + xlr[j];
        }
    }
    Ok((out, dots))
}

pub struct CrossGrads {
    pub x0: Matrix,
    pub xl: Matrix,
    pub w: Matrix,
    pub b: Matrix,
}

pub fn cross_layer_backward(
    x0: &Matrix,
    xl: &Matrix,
    w: &Matrix,
    dots: &[f64],
    d_out: &Matrix,
) -> Result<CrossGrads> {
    d_out.expect_shape("cross layer output gradient", x0.shape())?;
    let d = x0.cols();
    let wv = w.as_slice();
    let mut g = CrossGrads {
        x0: Matrix::zeros(x0.rows(), d),
        xl: d_out.clone(),
        w: Matrix::zeros(d, 1),
        b: d_out.column_sums(),
    };
    for r in 0..x0.rows() {
        let dy = d_out.row(r);
        let x0r = x0.row(r);
        let ds: f64 = dy.iter().zip(x0r).map(|(a, c)| a * c).sum();
        for (o, v) in g.x0.row_mut(r).iter_mut().zip(dy) {
            *o = dots[r] * v;
        }
        for (j, o) in g.xl.row_mut(r).iter_mut().enumerate() {
            *o += ds * wv[j];
        }
        for (j, x) in xl.row(r).iter().enumerate() {
            g.w.as_mut_slice()[j] += ds * x;
        }
    }
    Ok(g)
}

/// Fully connected layer `σ(x W + b)`; `W` is `in × out`, `b` is `1 × out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

pub struct DenseGrads {
    pub input: Matrix,
    pub w: Matrix,
    pub b: Matrix,
}

impl Dense {
    /// Returns the output and the pre-activation.
    pub fn forward(&self, x: &Matrix, w: &Matrix, b: &Matrix) -> Result<(Matrix, Matrix)> {
        if x.cols() != self.in_dim {
            return Err(Error::shape("dense layer input", self.in_dim, x.cols()));
        }
        w.expect_shape("dense weight", (self.in_dim, self.out_dim))?;
        b.expect_shape("dense bias", (1, self.out_dim))?;
        let mut pre = x.matmul(w)?;
        let bv = b.as_slice();
        for r in 0..pre.rows() {
            for (p, c) in pre.row_mut(r).iter_mut().zip(bv) {
                *p += c;
            }
        }
        Ok((self.activation.apply(&pre), pre))
    }

    pub fn backward(&self, x: &Matrix, w: &Matrix, pre: &Matrix, d_out: &Matrix) -> Result<DenseGrads> {
        d_out.expect_shape("dense output gradient", pre.shape())?;
        let d_pre = self.activation.backprop(pre, d_out);
        Ok(DenseGrads {
            input: product(&d_pre, Trans::No, w, Trans::Yes)?,
            w: product(x, Trans::Yes, &d_pre, Trans::No)?,
            b: d_pre.column_sums(),
        })
    }
}

/// Linear map over `[cross_out ∥ deep_out]`.
pub fn combine(cross_out: &Matrix, deep_out: &Matrix, w: &Matrix, b: &Matrix) -> Result<(Matrix, Matrix)> {
    let joined = Matrix::hcat(&[cross_out, deep_out])?;
    let layer = Dense {
        in_dim: joined.cols(),
        out_dim: w.cols(),
        activation: Activation::Identity,
    };
    let (out, _) = layer.forward(&joined, w, b)?;
    Ok((out, joined))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_dimension_is_embedding_plus_dense() {
        let table = Matrix::from_rows(&[[0.1; 4], [0.2; 4]]);
        let dense = Matrix::from_rows(&[[1.0, 2.0, 3.0]]);
        let x0 = embed_and_stack(&[1], &dense, &table).unwrap();
        assert_eq!(x0.shape(), (1, 7));
        assert_eq!(x0.row(0), &[0.2, 0.2, 0.2, 0.2, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_embeddings_and_centered_features_give_zero() {
        let table = Matrix::zeros(2, 4);
        let x0 = embed_and_stack(&[0, 1], &Matrix::zeros(2, 3), &table).unwrap();
        assert_eq!(x0, Matrix::zeros(2, 7));
    }

    #[test]
    fn sex_only_changes_embedding_block() {
        let table = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [-1.0, 0.5, 0.0, 2.0]]);
        let dense = Matrix::from_rows(&[[0.3, -0.2, 1.1], [0.3, -0.2, 1.1]]);
        let x0 = embed_and_stack(&[0, 1], &dense, &table).unwrap();
        assert_ne!(&x0.row(0)[..4], &x0.row(1)[..4]);
        assert_eq!(&x0.row(0)[4..], &x0.row(1)[4..]);
    }

    #[test]
    fn unseen_level_is_rejected() {
        let table = Matrix::zeros(2, 4);
        assert!(embed_and_stack(&[2], &Matrix::zeros(1, 3), &table).is_err());
    }

    #[test]
    fn cross_with_zero_weights_is_residual() {
        let x0 = Matrix::from_rows(&[[1.0, -2.0, 0.5]]);
        let xl = Matrix::from_rows(&[[0.3, 0.7, -1.0]]);
        let (y, _) = cross_layer(&x0, &xl, &Matrix::zeros(3, 1), &Matrix::zeros(1, 3)).unwrap();
        assert_eq!(y, xl);
    }

    #[test]
    fn cross_by_hand() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        let w = Matrix::column(&[1.0, 0.0]);
        let (y, _) = cross_layer(&x, &x, &w, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(y, Matrix::from_rows(&[[2.0, 4.0]]));
    }

    #[test]
    fn cross_dimension_mismatch() {
        let x = Matrix::zeros(1, 2);
        assert!(cross_layer(&x, &x, &Matrix::zeros(3, 1), &Matrix::zeros(1, 2)).is_err());
        assert!(cross_layer(&x, &Matrix::zeros(1, 3), &Matrix::zeros(2, 1), &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn zero_weight_deep_layers_return_last_bias() {
        let l1 = Dense { in_dim: 3, out_dim: 4, activation: Activation::Relu };
        let l2 = Dense { in_dim: 4, out_dim: 2, activation: Activation::Relu };
        let x = Matrix::from_rows(&[[1.0, -1.0, 2.0]]);
        let (h, _) = l1.forward(&x, &Matrix::zeros(3, 4), &Matrix::filled(1, 4, -0.5)).unwrap();
        let b2 = Matrix::from_rows(&[[0.25, 0.75]]);
        let (y, _) = l2.forward(&h, &Matrix::zeros(4, 2), &b2).unwrap();
        assert_eq!(y, b2);
    }

    #[test]
    fn identity_layer_passes_positive_input() {
        let l = Dense { in_dim: 3, out_dim: 3, activation: Activation::Relu };
        let x = Matrix::from_rows(&[[0.5, 1.5, 2.5]]);
        let (y, _) = l.forward(&x, &Matrix::identity(3), &Matrix::zeros(1, 3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn deep_matches_two_loop_oracle() {
        let mut rng = crate::numerics::Rng::new(11);
        let mut rand = |r: usize, c: usize| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
        };
        let x = rand(1, 5);
        let (w1, b1, w2, b2) = (rand(5, 6), rand(1, 6), rand(6, 3), rand(1, 3));
        let l1 = Dense { in_dim: 5, out_dim: 6, activation: Activation::Relu };
        let l2 = Dense { in_dim: 6, out_dim: 3, activation: Activation::Relu };
        let (h, _) = l1.forward(&x, &w1, &b1).unwrap();
        let (y, _) = l2.forward(&h, &w2, &b2).unwrap();

        let layer = |input: &[f64], w: &Matrix, b: &Matrix| -> Vec<f64> {
            (0..w.cols())
                .map(|j| {
                    let mut s = b.get(0, j);
                    for (i, v) in input.iter().enumerate() {
                        s += v * w.get(i, j);
                    }
                    s.max(0.0)
                })
                .collect()
        };
        let expect = layer(&layer(x.row(0), &w1, &b1), &w2, &b2);
        for (a, e) in y.row(0).iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_identity_and_zero() {
        let c = Matrix::from_rows(&[[1.0, 2.0]]);
        let d = Matrix::from_rows(&[[3.0]]);
        let (y, _) = combine(&c, &d, &Matrix::identity(3), &Matrix::zeros(1, 3)).unwrap();
        assert_eq!(y, Matrix::from_rows(&[[1.0, 2.0, 3.0]]));
        let (z, _) = combine(&c, &d, &Matrix::zeros(3, 2), &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(z, Matrix::zeros(1, 2));
        assert!(combine(&c, &d, &Matrix::zeros(4, 2), &Matrix::zeros(1, 2)).is_err());
    }
    fn forward_difference(values: &[f64], order: usize) -> Vec<f64> {
        let mut v = values.to_vec();
        for _ in 0..order {
            v = v.windows(2).map(|w| w[1] - w[0]).collect();
        }
        v
    }

    #[test]
    fn scalar_cross_network_has_degree_depth_plus_one() {
        for depth in 1..=3 {
            let values: Vec<f64> = (0..8)
                .map(|i| {
                    let x0 = Matrix::from_rows(&[[i as f64 - 3.0]]);
                    let mut xl = x0.clone();
                    for _ in 0..depth {
                        xl = cross_layer(&x0, &xl, &Matrix::filled(1, 1, 1.0), &Matrix::zeros(1, 1))
                            .unwrap()
                            .0;
                    }
                    xl.get(0, 0)
                })
                .collect();
            let top = forward_difference(&values, depth + 1);
            let factorial: f64 = (1..=depth + 1).map(|k| k as f64).product();
            for v in &top {
                assert_eq!(*v, factorial);
            }
            assert!(forward_difference(&values, depth + 2).iter().all(|v| *v == 0.0));
        }
    }
}

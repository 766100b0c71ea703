//! Forward and backward passes of the graph convolution and Deep & Cross
//! building blocks.

pub mod cheb;
pub mod dcn;

use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

pub use cheb::{mean_pool, mean_pool_backward, stack_node_major, ChebConv, ChebGrads, ChebTape};
pub use dcn::{
    combine, cross_layer, cross_layer_backward, embed_and_stack, embed_backward, CrossGrads,
    Dense, DenseGrads,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, pre: &Matrix) -> Matrix {
        match self {
            Activation::Relu => pre.map(|x| x.max(0.0)),
            Activation::Identity => pre.clone(),
        }
    }

    /// `d_out ∘ σ'(pre)`
    pub fn backprop(self, pre: &Matrix, d_out: &Matrix) -> Matrix {
        match self {
            Activation::Identity => d_out.clone(),
            Activation::Relu => {
                let mut d = d_out.clone();
                for (g, p) in d.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if *p <= 0.0 {
                        *g = 0.0;
                    }
                }
                d
            }
        }
    }
}

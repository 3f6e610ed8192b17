//! Parameter handles for the building blocks shared by every module.

use trisleep_numcore::{init, Graph, ParamId, ParamStore, Scalar, SeedStream, Tensor, Var};

use crate::error::Result;

/// Affine map `x W + b` with `W: [fan_in, fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Registers `{name}.weight` (Xavier) and, if requested, a zero `{name}.bias`.
    pub fn new(store: &mut ParamStore, seed: SeedStream, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        let w_name = format!("{name}.weight");
        let weight = store.add(&w_name, init::xavier_uniform(seed.split_str(&w_name), fan_in, fan_out))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: &Var<S>) -> Result<Var<S>> {
        let w = g.param(self.weight)?;
        let y = g.matmul(x, &w)?;
        Ok(match self.bias {
            Some(b) => {
                let b = g.param(b)?;
                g.add_row(&y, &b)?
            }
            None => y,
        })
    }
}

/// Layer normalization over the last dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?,
            eps,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: &Var<S>) -> Result<Var<S>> {
        let gamma = g.param(self.gamma)?;
        let beta = g.param(self.beta)?;
        Ok(g.layer_norm(x, &gamma, &beta, S::from_f64(self.eps))?)
    }
}

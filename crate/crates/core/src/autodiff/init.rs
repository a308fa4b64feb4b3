use rand::Rng;

use super::graph::{Graph, Var};
use super::optim::ParamSet;
use super::tensor::Tensor;
use crate::error::TensorError;

/// Uniform(−b, b) with b = gain·√(3 / fan_in), gain = √(2 / (1 + slope²)),
/// the fan-in Kaiming scaling for leaky-ReLU stacks.
pub fn kaiming_uniform<R: Rng>(shape: &[usize], fan_in: usize, slope: f64, rng: &mut R) -> Tensor {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Affine layer `x·W + b`, W stored `[in, out]`. Holds indices into a
/// [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        slope: f64,
        rng: &mut R,
    ) -> Self {
        let weight = params.push(format!("{name}.weight"), kaiming_uniform(&[d_in, d_out], d_in, slope, rng));
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    /// `x` is `[rows, d_in]`.
    pub fn apply(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var, TensorError> {
        let y = g.matmul(x, vars[self.weight])?;
        g.add(y, vars[self.bias])
    }
}

/// Shared per-row MLP: every layer is affine followed by leaky-ReLU, except
/// the last when `activate_last` is false.
pub fn pointwise_mlp(
    g: &mut Graph,
    vars: &[Var],
    layers: &[Linear],
    x: Var,
    slope: f64,
    activate_last: bool,
) -> Result<Var, TensorError> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.apply(g, vars, h)?;
        if activate_last || i + 1 < layers.len() {
            h = g.leaky_relu(h, slope);
        }
    }
    Ok(h)
}

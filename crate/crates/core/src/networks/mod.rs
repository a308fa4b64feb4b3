//! The variational point-cloud auto-encoder, the convolutional inverse
//! network and the PointNet forward surrogate.
//!
//! Models own their parameters in a [`ParamSet`] and build their forward
//! pass on a caller-supplied [`Graph`], so training can run one tape per
//! sample and freeze any model by binding its parameters as constants.

pub mod config;
pub mod forward;
pub mod inverse;
pub mod vae;

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{read_checkpoint, write_checkpoint, Graph, Linear, ParamSet, Tensor, Var};
use crate::error::{CheckpointError, TensorError};
use crate::geometry::PointCloud;

pub use config::{CnnLayer, NetworkConfig};
pub use forward::ForwardModel;
pub use inverse::InverseModel;
pub use vae::VaeModel;

/// Bounds applied to the log-variance head.
pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Puts every tensor of `params` on the tape, as trainable leaves or as
/// frozen constants.
pub fn bind(g: &mut Graph, params: &ParamSet, trainable: bool) -> Vec<Var> {
    params
        .tensors
        .iter()
        .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect()
}

/// `[P, 3]` tensor of a cloud.
pub fn cloud_tensor(pc: &PointCloud) -> Result<Tensor, TensorError> {
    Tensor::new(vec![pc.len(), 3], pc.to_flat())
}

/// How the latent code is drawn from (μ, logσ²).
#[derive(Debug, Clone, Copy)]
pub enum Sampling<'a> {
    /// z = μ.
    Mean,
    /// z = μ + exp(0.5·logσ²)⊙ε with the given ε.
    Noise(&'a [f64]),
}

/// ε ~ N(0, I) of length `m`.
pub fn draw_epsilon<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.sample(StandardNormal)).collect()
}

/// Tape handles of a latent code, each `[1, M]`.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

/// Values of a latent code. `epsilon` is empty when z = μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl LatentCode {
    pub fn from_vars(g: &Graph, v: &LatentVars, sampling: Sampling) -> Self {
        LatentCode {
            mu: g.value(v.mu).data().to_vec(),
            logvar: g.value(v.logvar).data().to_vec(),
            z: g.value(v.z).data().to_vec(),
            epsilon: match sampling {
                Sampling::Mean => Vec::new(),
                Sampling::Noise(e) => e.to_vec(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Affine μ and logσ² heads on a `[1, F]` feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariationalHeads {
    pub mu: Linear,
    pub logvar: Linear,
}

impl VariationalHeads {
    pub fn new<R: Rng>(params: &mut ParamSet, feature: usize, latent: usize, slope: f64, rng: &mut R) -> Self {
        VariationalHeads {
            mu: Linear::new(params, "mu", feature, latent, slope, rng),
            logvar: Linear::new(params, "logvar", feature, latent, slope, rng),
        }
    }

    /// Reparametrized sample from a `[1, F]` feature.
    pub fn sample(
        &self,
        g: &mut Graph,
        vars: &[Var],
        feature: Var,
        sampling: Sampling,
    ) -> Result<LatentVars, TensorError> {
        let mu = self.mu.apply(g, vars, feature)?;
        let raw = self.logvar.apply(g, vars, feature)?;
        let logvar = g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
        let z = match sampling {
            Sampling::Mean => mu,
            Sampling::Noise(eps) => {
                if eps.len() != self.mu.d_out {
                    return Err(TensorError::shape("variational sample", &[eps.len()], &[self.mu.d_out]));
                }
                let e = g.constant(Tensor::new(vec![1, eps.len()], eps.to_vec())?);
                let half = g.scale(logvar, 0.5);
                let sigma = g.exp(half);
                let noise = g.mul(sigma, e)?;
                g.add(mu, noise)?
            }
        };
        Ok(LatentVars { mu, logvar, z })
    }
}

/// Shared per-point MLP with leaky-ReLU after every layer, then a max over
/// points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointNet {
    pub layers: Vec<Linear>,
}

impl PointNet {
    pub fn new<R: Rng>(params: &mut ParamSet, prefix: &str, widths: &[usize], slope: f64, rng: &mut R) -> Self {
        let mut d_in = 3;
        let layers = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = Linear::new(params, &format!("{prefix}.{i}"), d_in, w, slope, rng);
                d_in = w;
                l
            })
            .collect();
        PointNet { layers }
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(3, |l| l.d_out)
    }

    /// `[P, 3]` cloud to a `[1, F]` global feature.
    pub fn encode(&self, g: &mut Graph, vars: &[Var], x: Var, slope: f64) -> Result<Var, TensorError> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != 3 || s[0] == 0 {
            return Err(TensorError::shape("pointnet", s, &[0, 3]));
        }
        let h = crate::autodiff::pointwise_mlp(g, vars, &self.layers, x, slope, true)?;
        let m = g.max_axis(h, 0)?;
        g.reshape(m, &[1, self.feature_dim()])
    }
}

/// Stack of affine layers with leaky-ReLU between them, no activation after
/// the last.
pub fn mlp_layers<R: Rng>(
    params: &mut ParamSet,
    prefix: &str,
    d_in: usize,
    hidden: &[usize],
    d_out: usize,
    slope: f64,
    rng: &mut R,
) -> Vec<Linear> {
    let mut dims = vec![d_in];
    dims.extend_from_slice(hidden);
    dims.push(d_out);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| Linear::new(params, &format!("{prefix}.{i}"), w[0], w[1], slope, rng))
        .collect()
}

/// Checkpoint metadata identifying the model kind and its configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    model: String,
    config: NetworkConfig,
}

pub(crate) fn save_model<W: Write>(
    w: W,
    kind: &str,
    config: &NetworkConfig,
    params: &ParamSet,
    step: u64,
) -> Result<(), CheckpointError> {
    let meta = serde_json::to_value(ModelMeta {
        model: kind.into(),
        config: config.clone(),
    })
    .map_err(|e| CheckpointError::Header(e.to_string()))?;
    write_checkpoint(w, params, step, meta)
}

/// Reads a checkpoint written by [`save_model`] for `kind`, returning the
/// stored config, parameters and step.
pub(crate) fn load_model<R: Read>(r: R, kind: &str) -> Result<(NetworkConfig, ParamSet, u64), CheckpointError> {
    let (header, params) = read_checkpoint(r)?;
    let meta: ModelMeta =
        serde_json::from_value(header.metadata).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if meta.model != kind {
        return Err(CheckpointError::Mismatch(format!(
            "expected a {kind} checkpoint, found {}",
            meta.model
        )));
    }
    meta.config
        .validate()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok((meta.config, params, header.step))
}

/// Deterministic reconstruction: generator(μ of the inverse code of `field`).
pub fn end_to_end(
    inverse: &InverseModel,
    vae: &VaeModel,
    field: &crate::solver::FarFieldGrid,
) -> Result<PointCloud, TensorError> {
    let code = inverse.encode_field(field)?;
    vae.generate(&code.mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moments_of_reparametrized_samples() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let heads = VariationalHeads::new(&mut p, 2, 1, 1e-2, &mut rng);
        // μ = 0 and logσ² = 0 whatever the feature
        for t in &mut p.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let mut g = Graph::new();
            let vars = bind(&mut g, &p, false);
            let f = g.constant(Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap());
            let eps = draw_epsilon(&mut rng, 1);
            let lv = heads.sample(&mut g, &vars, f, Sampling::Noise(&eps)).unwrap();
            let z = g.value(lv.z).item();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn clamped_logvar_gives_mean() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let heads = VariationalHeads::new(&mut p, 3, 4, 1e-2, &mut rng);
        let bias = p.index_of("logvar.bias").unwrap();
        p.tensors[bias] = Tensor::full(&[4], -1e6);
        let mut g = Graph::new();
        let vars = bind(&mut g, &p, false);
        let f = g.constant(Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap());
        let eps = draw_epsilon(&mut rng, 4);
        let lv = heads.sample(&mut g, &vars, f, Sampling::Noise(&eps)).unwrap();
        assert!(g.value(lv.logvar).data().iter().all(|&v| v == LOGVAR_MIN));
        for (z, m) in g.value(lv.z).data().iter().zip(g.value(lv.mu).data()) {
            assert!((z - m).abs() < 1e-4);
        }
    }

    #[test]
    fn same_seed_same_epsilon() {
        let a = draw_epsilon(&mut ChaCha8Rng::seed_from_u64(9), 32);
        let b = draw_epsilon(&mut ChaCha8Rng::seed_from_u64(9), 32);
        let c = draw_epsilon(&mut ChaCha8Rng::seed_from_u64(10), 32);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn heads_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut p = ParamSet::new();
            let heads = VariationalHeads::new(&mut p, 5, 3, 1e-2, &mut rng);
            let eps = draw_epsilon(&mut rng, 3);
            let mut inputs = p.tensors.clone();
            inputs.push(crate::autodiff::kaiming_uniform(&[1, 5], 1, 0.0, &mut rng));
            let err = gradient_check(&inputs, 1e-6, |g, v| {
                let lv = heads.sample(g, v, v[4], Sampling::Noise(&eps))?;
                let s = g.square(lv.z);
                Ok(g.sum_all(s))
            })
            .unwrap();
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn epsilon_length_checked() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let heads = VariationalHeads::new(&mut p, 2, 3, 1e-2, &mut rng);
        let mut g = Graph::new();
        let vars = bind(&mut g, &p, false);
        let f = g.constant(Tensor::zeros(&[1, 2]));
        assert!(heads.sample(&mut g, &vars, f, Sampling::Noise(&[0.0; 2])).is_err());
    }
}

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bind, load_model, save_model, CnnLayer, LatentCode, LatentVars, NetworkConfig, Sampling, VariationalHeads};
use crate::autodiff::{kaiming_uniform, load_into, Graph, Linear, ParamSet, Tensor, Var};
use crate::error::{CheckpointError, TensorError};
use crate::solver::FarFieldGrid;

const KIND: &str = "inverse";

/// One stride-2 convolution with its parameter indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub kernel: usize,
    pub bias: usize,
    pub plan: CnnLayer,
}

/// CNN over the magnitude grid, flatten, affine feature layer and
/// variational heads.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseModel {
    pub config: NetworkConfig,
    pub params: ParamSet,
    pub convs: Vec<ConvLayer>,
    pub feature: Linear,
    pub heads: VariationalHeads,
}

impl InverseModel {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, TensorError> {
        config.validate()?;
        let plan = config.cnn_plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let (s, k) = (config.leaky_slope, config.cnn_kernel);
        let convs = plan
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let fan_in = layer.c_in * k * k;
                let w = kaiming_uniform(&[layer.c_out, layer.c_in, k, k], fan_in, s, &mut rng);
                ConvLayer {
                    kernel: params.push(format!("conv.{i}.weight"), w),
                    bias: params.push(format!("conv.{i}.bias"), Tensor::zeros(&[layer.c_out])),
                    plan: *layer,
                }
            })
            .collect::<Vec<_>>();
        let last = plan.last().expect("validated plan is non-empty");
        let flat = last.c_out * last.h_out * last.w_out;
        let feature = Linear::new(&mut params, "feature", flat, config.inverse_feature_dim, s, &mut rng);
        let heads = VariationalHeads::new(&mut params, config.inverse_feature_dim, config.latent_dim, s, &mut rng);
        Ok(InverseModel {
            config,
            params,
            convs,
            feature,
            heads,
        })
    }

    /// `[n_lat, n_lon]` magnitude grid to a latent code.
    pub fn encode(&self, g: &mut Graph, vars: &[Var], field: Var, sampling: Sampling) -> Result<LatentVars, TensorError> {
        let (h, w) = (self.config.n_lat, self.config.n_lon);
        if g.shape(field) != [h, w] {
            return Err(TensorError::shape("inverse input", g.shape(field), &[h, w]));
        }
        let slope = self.config.leaky_slope;
        let mut x = g.reshape(field, &[1, h, w])?;
        for conv in &self.convs {
            let y = g.conv2d(x, vars[conv.kernel], Some(vars[conv.bias]), 2, conv.plan.pad)?;
            x = g.leaky_relu(y, slope);
        }
        let n = g.value(x).len();
        let flat = g.reshape(x, &[1, n])?;
        let f = self.feature.apply(g, vars, flat)?;
        let f = g.leaky_relu(f, slope);
        self.heads.sample(g, vars, f, sampling)
    }

    fn field_tensor(&self, field: &FarFieldGrid) -> Result<Tensor, TensorError> {
        let dims = field.grid.dims();
        if dims != (self.config.n_lat, self.config.n_lon) {
            return Err(TensorError::shape(
                "inverse input",
                &[dims.0, dims.1],
                &[self.config.n_lat, self.config.n_lon],
            ));
        }
        Tensor::new(vec![dims.0, dims.1], field.magnitudes())
    }

    pub fn encode_field(&self, field: &FarFieldGrid) -> Result<LatentCode, TensorError> {
        let mut g = Graph::new();
        let vars = bind(&mut g, &self.params, false);
        let x = g.constant(self.field_tensor(field)?);
        let code = self.encode(&mut g, &vars, x, Sampling::Mean)?;
        Ok(LatentCode::from_vars(&g, &code, Sampling::Mean))
    }

    pub fn save<W: Write>(&self, w: W, step: u64) -> Result<(), CheckpointError> {
        save_model(w, KIND, &self.config, &self.params, step)
    }

    pub fn load<R: Read>(r: R) -> Result<(Self, u64), CheckpointError> {
        let (config, params, step) = load_model(r, KIND)?;
        let mut model = InverseModel::new(config, 0).map_err(|e| CheckpointError::Header(e.to_string()))?;
        load_into(&mut model.params, params)?;
        Ok((model, step))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use crate::networks::draw_epsilon;
    use crate::solver::make_direction_grid;
    use rand::Rng;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            latent_dim: 2,
            n_lat: 5,
            n_lon: 7,
            cnn_channels: vec![2, 3],
            inverse_feature_dim: 4,
            ..NetworkConfig::toy()
        }
    }

    fn field(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> FarFieldGrid {
        let grid = make_direction_grid(cfg.n_lat, cfg.n_lon).unwrap();
        let v = (0..cfg.grid_len()).map(|_| rng.random::<f64>()).collect();
        FarFieldGrid::magnitude(grid, 100.0, v).unwrap()
    }

    #[test]
    fn toy_code_dim_and_determinism() {
        let cfg = NetworkConfig::toy();
        let model = InverseModel::new(cfg.clone(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ff = field(&cfg, &mut rng);
        let a = model.encode_field(&ff).unwrap();
        let b = model.encode_field(&ff).unwrap();
        assert_eq!(a.dim(), 16);
        assert_eq!(a, b);
        assert!(a.mu.iter().chain(&a.logvar).all(|v| v.is_finite()));
    }

    #[test]
    fn default_code_dim() {
        let cfg = NetworkConfig::default();
        let model = InverseModel::new(cfg.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let code = model.encode_field(&field(&cfg, &mut rng)).unwrap();
        assert_eq!(code.dim(), 64);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let model = InverseModel::new(NetworkConfig::toy(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ff = field(&tiny(), &mut rng);
        assert!(model.encode_field(&ff).is_err());
    }

    #[test]
    fn inverse_fd() {
        let cfg = tiny();
        let model = InverseModel::new(cfg.clone(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let n = model.params.len();
            let mut inputs = model.params.tensors.clone();
            inputs.push(Tensor::new(vec![5, 7], field(&cfg, &mut rng).magnitudes()).unwrap());
            let eps = draw_epsilon(&mut rng, 2);
            let err = gradient_check(&inputs, 1e-6, |g, v| {
                let code = model.encode(g, &v[..n], v[n], Sampling::Noise(&eps))?;
                let s = g.square(code.z);
                Ok(g.sum_all(s))
            })
            .unwrap();
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = InverseModel::new(tiny(), 9).unwrap();
        let mut a = Vec::new();
        model.save(&mut a, 3).unwrap();
        let (loaded, _) = InverseModel::load(a.as_slice()).unwrap();
        let mut b = Vec::new();
        loaded.save(&mut b, 3).unwrap();
        assert_eq!(a, b);
    }
}

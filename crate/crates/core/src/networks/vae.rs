use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    bind, cloud_tensor, load_model, mlp_layers, save_model, LatentCode, LatentVars, NetworkConfig, PointNet,
    Sampling, VariationalHeads,
};
use crate::autodiff::{load_into, Graph, Linear, ParamSet, Tensor, Var};
use crate::error::{CheckpointError, TensorError};
use crate::geometry::PointCloud;

const KIND: &str = "vae";

/// PointNet encoder, variational heads and generator MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub config: NetworkConfig,
    pub params: ParamSet,
    pub encoder: PointNet,
    pub heads: VariationalHeads,
    pub generator: Vec<Linear>,
}

impl VaeModel {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, TensorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let s = config.leaky_slope;
        let encoder = PointNet::new(&mut params, "encoder", &config.encoder_widths, s, &mut rng);
        let heads = VariationalHeads::new(&mut params, encoder.feature_dim(), config.latent_dim, s, &mut rng);
        let generator = mlp_layers(
            &mut params,
            "generator",
            config.latent_dim,
            &config.generator_widths,
            3 * config.point_count,
            s,
            &mut rng,
        );
        Ok(VaeModel {
            config,
            params,
            encoder,
            heads,
            generator,
        })
    }

    /// Parameter indices owned by the generator.
    pub fn generator_params(&self) -> Vec<usize> {
        self.generator.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    fn check_points(&self, g: &Graph, x: Var) -> Result<(), TensorError> {
        let s = g.shape(x);
        if s != [self.config.point_count, 3] {
            return Err(TensorError::shape("vae input", s, &[self.config.point_count, 3]));
        }
        Ok(())
    }

    /// `[P, 3]` cloud to a latent code.
    pub fn encode(&self, g: &mut Graph, vars: &[Var], x: Var, sampling: Sampling) -> Result<LatentVars, TensorError> {
        self.check_points(g, x)?;
        let f = self.encoder.encode(g, vars, x, self.config.leaky_slope)?;
        self.heads.sample(g, vars, f, sampling)
    }

    /// `[1, M]` code to a `[P, 3]` cloud.
    pub fn decode(&self, g: &mut Graph, vars: &[Var], z: Var) -> Result<Var, TensorError> {
        let m = self.config.latent_dim;
        if g.shape(z) != [1, m] {
            return Err(TensorError::shape("generator input", g.shape(z), &[1, m]));
        }
        let mut h = z;
        for (i, layer) in self.generator.iter().enumerate() {
            h = layer.apply(g, vars, h)?;
            if i + 1 < self.generator.len() {
                h = g.leaky_relu(h, self.config.leaky_slope);
            }
        }
        g.reshape(h, &[self.config.point_count, 3])
    }

    /// Encode then decode; returns the code and the reconstruction.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        sampling: Sampling,
    ) -> Result<(LatentVars, Var), TensorError> {
        let code = self.encode(g, vars, x, sampling)?;
        let recon = self.decode(g, vars, code.z)?;
        Ok((code, recon))
    }

    pub fn encode_cloud(&self, pc: &PointCloud, sampling: Sampling) -> Result<LatentCode, TensorError> {
        let mut g = Graph::new();
        let vars = bind(&mut g, &self.params, false);
        let x = g.constant(cloud_tensor(pc)?);
        let code = self.encode(&mut g, &vars, x, sampling)?;
        Ok(LatentCode::from_vars(&g, &code, sampling))
    }

    pub fn generate(&self, z: &[f64]) -> Result<PointCloud, TensorError> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::invalid("generate", "latent code is not finite"));
        }
        let mut g = Graph::new();
        let vars = bind(&mut g, &self.params, false);
        let zv = g.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let out = self.decode(&mut g, &vars, zv)?;
        Ok(PointCloud::from_flat(g.value(out).data()))
    }

    /// generate(μ(pc)).
    pub fn reconstruct(&self, pc: &PointCloud) -> Result<PointCloud, TensorError> {
        let code = self.encode_cloud(pc, Sampling::Mean)?;
        self.generate(&code.mu)
    }

    pub fn save<W: Write>(&self, w: W, step: u64) -> Result<(), CheckpointError> {
        save_model(w, KIND, &self.config, &self.params, step)
    }

    pub fn load<R: Read>(r: R) -> Result<(Self, u64), CheckpointError> {
        let (config, params, step) = load_model(r, KIND)?;
        let mut model = VaeModel::new(config, 0).map_err(|e| CheckpointError::Header(e.to_string()))?;
        load_into(&mut model.params, params)?;
        Ok((model, step))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradient_check, Reduction};
    use crate::networks::draw_epsilon;
    use rand::seq::SliceRandom;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            latent_dim: 3,
            point_count: 8,
            encoder_widths: vec![5, 6],
            generator_widths: vec![7],
            ..NetworkConfig::toy()
        }
    }

    fn cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        use rand::Rng;
        PointCloud::new((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect())
    }

    #[test]
    fn encoder_permutation_invariant() {
        let model = VaeModel::new(NetworkConfig::toy(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pc = cloud(256, &mut rng);
        let base = model.encode_cloud(&pc, Sampling::Mean).unwrap();
        for _ in 0..50 {
            let mut pts = pc.points.clone();
            pts.shuffle(&mut rng);
            let c = model.encode_cloud(&PointCloud::new(pts), Sampling::Mean).unwrap();
            assert_eq!(c, base);
        }
    }

    #[test]
    fn duplicated_points_same_feature() {
        let cfg = tiny();
        let model = VaeModel::new(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pc = cloud(8, &mut rng);
        let mut g = Graph::new();
        let vars = bind(&mut g, &model.params, false);
        let x = g.constant(cloud_tensor(&pc).unwrap());
        let f = model.encoder.encode(&mut g, &vars, x, 1e-2).unwrap();
        let doubled: Vec<_> = pc.points.iter().chain(&pc.points).copied().collect();
        let x2 = g.constant(cloud_tensor(&PointCloud::new(doubled)).unwrap());
        let f2 = model.encoder.encode(&mut g, &vars, x2, 1e-2).unwrap();
        assert_eq!(g.value(f).data(), g.value(f2).data());
        assert!(g.value(f).all_finite());
    }

    #[test]
    fn generator_shape_and_continuity() {
        let model = VaeModel::new(NetworkConfig::toy(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = draw_epsilon(&mut rng, 16);
        let a = model.generate(&z).unwrap();
        assert_eq!(a.len(), 256);
        let mut zd = z.clone();
        zd[3] += 1e-6;
        let b = model.generate(&zd).unwrap();
        let diff: f64 = a.to_flat().iter().zip(b.to_flat()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff < 1e-4, "{diff}");
        assert!(model.generate(&[f64::NAN; 16]).is_err());
    }

    #[test]
    fn wrong_point_count_rejected() {
        let model = VaeModel::new(tiny(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(model.encode_cloud(&cloud(9, &mut rng), Sampling::Mean).is_err());
    }

    #[test]
    fn vae_loss_fd() {
        let model = VaeModel::new(tiny(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let pc = cloud(8, &mut rng);
            let eps = draw_epsilon(&mut rng, 3);
            let n = model.params.len();
            let mut inputs = model.params.tensors.clone();
            inputs.push(cloud_tensor(&pc).unwrap());
            let err = gradient_check(&inputs, 1e-6, |g, v| {
                let (code, recon) = model.forward(g, &v[..n], v[n], Sampling::Noise(&eps))?;
                let (loss, _) = crate::losses::vae_loss(g, v[n], recon, code.mu, code.logvar, 0.5, Reduction::Mean)
                    .map_err(|e| TensorError::invalid("vae loss", e.to_string()))?;
                Ok(loss)
            })
            .unwrap();
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = VaeModel::new(tiny(), 11).unwrap();
        let mut a = Vec::new();
        model.save(&mut a, 42).unwrap();
        let (loaded, step) = VaeModel::load(a.as_slice()).unwrap();
        assert_eq!(step, 42);
        assert_eq!(loaded, model);
        let mut b = Vec::new();
        loaded.save(&mut b, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_kind_rejected() {
        let model = VaeModel::new(tiny(), 12).unwrap();
        let mut buf = Vec::new();
        save_model(&mut buf, "forward", &model.config, &model.params, 0).unwrap();
        assert!(matches!(VaeModel::load(buf.as_slice()), Err(CheckpointError::Mismatch(_))));
    }
}

use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bind, cloud_tensor, load_model, mlp_layers, save_model, NetworkConfig, PointNet};
use crate::autodiff::{load_into, Graph, Linear, ParamSet, Var};
use crate::error::{CheckpointError, TensorError};
use crate::geometry::PointCloud;
use crate::solver::{make_direction_grid, FarFieldGrid};

const KIND: &str = "forward";

/// PointNet encoder and MLP decoder to a non-negative magnitude grid.
#[derive(Debug)]
pub struct ForwardModel {
    pub config: NetworkConfig,
    pub params: ParamSet,
    pub encoder: PointNet,
    pub decoder: Vec<Linear>,
    calls: AtomicUsize,
}

impl Clone for ForwardModel {
    fn clone(&self) -> Self {
        ForwardModel {
            config: self.config.clone(),
            params: self.params.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            calls: AtomicUsize::new(self.calls()),
        }
    }
}

impl PartialEq for ForwardModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl ForwardModel {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, TensorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let s = config.leaky_slope;
        let encoder = PointNet::new(&mut params, "encoder", &config.encoder_widths, s, &mut rng);
        let decoder = mlp_layers(
            &mut params,
            "decoder",
            encoder.feature_dim(),
            &config.forward_widths,
            config.grid_len(),
            s,
            &mut rng,
        );
        Ok(ForwardModel {
            config,
            params,
            encoder,
            decoder,
            calls: AtomicUsize::new(0),
        })
    }

    /// Number of forward passes built so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// `[P, 3]` cloud to an `[n_lat, n_lon]` magnitude grid.
    pub fn predict(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var, TensorError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let p = self.config.point_count;
        if g.shape(x) != [p, 3] {
            return Err(TensorError::shape("forward input", g.shape(x), &[p, 3]));
        }
        let slope = self.config.leaky_slope;
        let mut h = self.encoder.encode(g, vars, x, slope)?;
        for (i, layer) in self.decoder.iter().enumerate() {
            h = layer.apply(g, vars, h)?;
            if i + 1 < self.decoder.len() {
                h = g.leaky_relu(h, slope);
            }
        }
        let out = g.softplus(h);
        g.reshape(out, &[self.config.n_lat, self.config.n_lon])
    }

    pub fn predict_magnitudes(&self, pc: &PointCloud) -> Result<Vec<f64>, TensorError> {
        let mut g = Graph::new();
        let vars = bind(&mut g, &self.params, false);
        let x = g.constant(cloud_tensor(pc)?);
        let out = self.predict(&mut g, &vars, x)?;
        Ok(g.value(out).data().to_vec())
    }

    pub fn predict_field(&self, pc: &PointCloud, frequency: f64) -> Result<FarFieldGrid, TensorError> {
        let values = self.predict_magnitudes(pc)?;
        let invalid = |e: crate::error::SolverError| TensorError::invalid("forward output", e.to_string());
        let grid = make_direction_grid(self.config.n_lat, self.config.n_lon).map_err(invalid)?;
        FarFieldGrid::magnitude(grid, frequency, values).map_err(invalid)
    }

    pub fn save<W: Write>(&self, w: W, step: u64) -> Result<(), CheckpointError> {
        save_model(w, KIND, &self.config, &self.params, step)
    }

    pub fn load<R: Read>(r: R) -> Result<(Self, u64), CheckpointError> {
        let (config, params, step) = load_model(r, KIND)?;
        let mut model = ForwardModel::new(config, 0).map_err(|e| CheckpointError::Header(e.to_string()))?;
        load_into(&mut model.params, params)?;
        Ok((model, step))
    }
}

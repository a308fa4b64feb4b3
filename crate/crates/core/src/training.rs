//! Training loops for the three networks and test-set evaluation.
//!
//! Every sample gets its own tape; per-sample gradients are computed in
//! parallel and summed in batch order, so results do not depend on the
//! worker count.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{cosine_lr, Adam, AdamConfig, Graph, Gradients, ParamSet, Reduction, Tensor, Var};
use crate::dataset::{batch_ids, Sample};
use crate::error::{TensorError, TrainingError};
use crate::geometry::PointCloud;
use crate::losses::{self, inverse_loss, kld_gaussian, relative_l2_values, vae_loss, LossValue, KLD};
use crate::networks::{bind, cloud_tensor, draw_epsilon, ForwardModel, InverseModel, NetworkConfig, Sampling, VaeModel};
use crate::par;

/// Optimization hyperparameters shared by all stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Weight of the far-field term in the inverse loss.
    pub alpha_ff: f64,
    /// KLD weight in the VAE loss.
    pub beta: f64,
    /// Fraction of epochs over which β ramps linearly from 0.
    pub beta_warmup: f64,
    /// KLD weight on the inverse path.
    pub inverse_kld: f64,
    pub reduction: Reduction,
    /// Share of the training split held out to pick the kept epoch.
    pub val_fraction: f64,
    /// Seeds parameter initialization and sampling noise.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr_init: 5e-4,
            lr_min: 0.0,
            weight_decay: 1e-4,
            alpha_ff: 0.0,
            beta: 1.0,
            beta_warmup: 0.1,
            inverse_kld: 0.0,
            reduction: Reduction::Mean,
            val_fraction: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |msg: String| Err(TrainingError::Parameter(msg));
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if self.epochs < 1 || self.batch_size < 1 {
            return bad("training.epochs and training.batch_size must be >= 1".into());
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad(format!("training.lr_init must be > 0, got {}", self.lr_init));
        }
        if !(nonneg(self.lr_min) && self.lr_min <= self.lr_init) {
            return bad(format!("training.lr_min must be in [0, lr_init], got {}", self.lr_min));
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("alpha_ff", self.alpha_ff),
            ("beta", self.beta),
            ("inverse_kld", self.inverse_kld),
        ] {
            if !nonneg(v) {
                return bad(format!("training.{name} must be >= 0, got {v}"));
            }
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return bad(format!("training.val_fraction must be in [0, 0.5], got {}", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.beta_warmup) {
            return bad(format!("training.beta_warmup must be in [0, 1], got {}", self.beta_warmup));
        }
        Ok(())
    }

    /// β at `epoch` under the linear warm-up.
    pub fn beta_at(&self, epoch: usize) -> f64 {
        let ramp = self.beta_warmup * self.epochs as f64;
        if ramp <= 0.0 {
            self.beta
        } else {
            self.beta * (epoch as f64 / ramp).min(1.0)
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's samples.
    pub loss: LossValue,
    pub val_loss: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub steps: usize,
}

/// ε stream for one (epoch, sample) pair.
fn sample_rng(seed: u64, epoch: usize, index: usize, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(index as u64).to_le_bytes());
    key[24..].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn collect_grads(mut grads: Gradients, vars: &[Var], params: &ParamSet) -> Vec<Tensor> {
    vars.iter()
        .zip(&params.tensors)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect()
}

/// What a per-sample closure is asked to do.
#[derive(Debug, Clone, Copy)]
struct Pass {
    epoch: usize,
    index: usize,
    /// Stochastic codes and gradients when true; z = μ and no gradients
    /// otherwise.
    train: bool,
}

type SampleOut = (LossValue, Option<Vec<Tensor>>);

fn optimize<F>(
    params: &mut ParamSet,
    cfg: &TrainConfig,
    n_train: usize,
    n_val: usize,
    sample: F,
) -> Result<TrainReport, TrainingError>
where
    F: Fn(&ParamSet, Pass) -> Result<SampleOut, TrainingError> + Sync,
{
    cfg.validate()?;
    if n_train == 0 {
        return Err(TrainingError::Parameter("no training samples".into()));
    }
    let indices: Vec<u64> = (0..n_train as u64).collect();
    let per_epoch = n_train.div_ceil(cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut adam = Adam::new(params, cfg.adam());
    let mut step = 0;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let lr_epoch = cosine_lr(step, total, cfg.lr_init, cfg.lr_min)?;
        let mut epoch_loss = LossValue::default();
        for batch in batch_ids(&indices, cfg.batch_size, cfg.seed, epoch as u64)? {
            let results = par::map_range(batch.len(), |k| {
                sample(
                    params,
                    Pass {
                        epoch,
                        index: batch[k] as usize,
                        train: true,
                    },
                )
            });
            let mut sum = params.zeros_like();
            for r in results {
                let (loss, grads) = r?;
                epoch_loss.accumulate(&loss);
                let grads = grads.expect("training pass returns gradients");
                for (s, g) in sum.iter_mut().zip(&grads) {
                    s.add_assign(g);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for s in &mut sum {
                s.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            let lr = cosine_lr(step, total, cfg.lr_init, cfg.lr_min)?;
            adam.step(params, &sum, lr)?;
            step += 1;
        }
        let loss = epoch_loss.scaled(1.0 / n_train as f64);
        let val_loss = if n_val > 0 {
            let results = par::map_range(n_val, |index| {
                sample(
                    params,
                    Pass {
                        epoch,
                        index: n_train + index,
                        train: false,
                    },
                )
            });
            let mut total = 0.0;
            for r in results {
                total += r?.0.total;
            }
            Some(total / n_val as f64)
        } else {
            None
        };
        let score = val_loss.unwrap_or(loss.total);
        log::info!("epoch {epoch}: loss {:.6e} lr {lr_epoch:.3e}", loss.total);
        if !score.is_finite() {
            return Err(TrainingError::Parameter(format!("loss became non-finite at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, epoch, params.clone()));
        }
        records.push(EpochRecord {
            epoch,
            lr: lr_epoch,
            loss,
            val_loss,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    let (best_loss, best_epoch, best_params) = best.expect("at least one epoch");
    *params = best_params;
    Ok(TrainReport {
        records,
        best_epoch,
        best_loss,
        steps: step,
    })
}

fn check_samples(config: &NetworkConfig, samples: &[Sample], need_field: bool) -> Result<(), TrainingError> {
    for s in samples {
        if s.cloud.len() != config.point_count {
            return Err(TrainingError::Parameter(format!(
                "sample {} has {} points but the model expects {}",
                s.id,
                s.cloud.len(),
                config.point_count
            )));
        }
        if need_field && s.field.len() != config.grid_len() {
            return Err(TrainingError::Parameter(format!(
                "sample {} has {} far-field values but the model expects {}×{}",
                s.id,
                s.field.len(),
                config.n_lat,
                config.n_lon
            )));
        }
    }
    Ok(())
}

fn field_tensor(config: &NetworkConfig, s: &Sample) -> Result<Tensor, TensorError> {
    Tensor::new(vec![config.n_lat, config.n_lon], s.field.clone())
}

/// Trains the VAE on `train`; `val` (possibly empty) picks the kept epoch.
/// The model ends at the best epoch's parameters.
pub fn train_vae(
    model: &mut VaeModel,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainingError> {
    check_samples(&model.config, train, false)?;
    check_samples(&model.config, val, false)?;
    let layout = model.clone();
    let m = layout.config.latent_dim;
    optimize(&mut model.params, cfg, train.len(), val.len(), |params, pass| {
        let s = if pass.index < train.len() {
            &train[pass.index]
        } else {
            &val[pass.index - train.len()]
        };
        let mut g = Graph::new();
        let vars = bind(&mut g, params, pass.train);
        let x = g.constant(cloud_tensor(&s.cloud)?);
        let eps = draw_epsilon(&mut sample_rng(cfg.seed, pass.epoch, pass.index, 1), m);
        let sampling = if pass.train { Sampling::Noise(&eps) } else { Sampling::Mean };
        let (code, recon) = layout.forward(&mut g, &vars, x, sampling)?;
        let (loss, value) = vae_loss(&mut g, x, recon, code.mu, code.logvar, cfg.beta_at(pass.epoch), cfg.reduction)?;
        let grads = if pass.train {
            Some(collect_grads(g.backward(loss)?, &vars, params))
        } else {
            None
        };
        Ok((value, grads))
    })
}

/// Trains the forward surrogate with a mean-squared far-field loss.
pub fn train_forward(
    model: &mut ForwardModel,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainingError> {
    check_samples(&model.config, train, true)?;
    check_samples(&model.config, val, true)?;
    let layout = model.clone();
    optimize(&mut model.params, cfg, train.len(), val.len(), |params, pass| {
        let s = if pass.index < train.len() {
            &train[pass.index]
        } else {
            &val[pass.index - train.len()]
        };
        let mut g = Graph::new();
        let vars = bind(&mut g, params, pass.train);
        let x = g.constant(cloud_tensor(&s.cloud)?);
        let pred = layout.predict(&mut g, &vars, x)?;
        let target = g.constant(field_tensor(&layout.config, s)?);
        let loss = losses::mse(&mut g, pred, target)?;
        let v = g.value(loss).item();
        let value = LossValue {
            total: v,
            components: [(losses::FAR_FIELD.to_string(), v)].into(),
        };
        let grads = if pass.train {
            Some(collect_grads(g.backward(loss)?, &vars, params))
        } else {
            None
        };
        Ok((value, grads))
    })
}

/// Trains the inverse network against the frozen generator, and the frozen
/// forward surrogate when `alpha_ff > 0`.
pub fn train_inverse(
    model: &mut InverseModel,
    vae: &VaeModel,
    forward: Option<&ForwardModel>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainingError> {
    check_compatible(&model.config, &vae.config, forward.map(|f| &f.config))?;
    check_samples(&model.config, train, true)?;
    check_samples(&model.config, val, true)?;
    let forward = if cfg.alpha_ff > 0.0 {
        Some(forward.ok_or_else(|| {
            TrainingError::Dependency(format!("alpha_ff = {} needs a trained forward model", cfg.alpha_ff))
        })?)
    } else {
        None
    };
    let layout = model.clone();
    let m = layout.config.latent_dim;
    optimize(&mut model.params, cfg, train.len(), val.len(), |params, pass| {
        let s = if pass.index < train.len() {
            &train[pass.index]
        } else {
            &val[pass.index - train.len()]
        };
        let mut g = Graph::new();
        let vars = bind(&mut g, params, pass.train);
        let vae_vars = bind(&mut g, &vae.params, false);
        let field = g.constant(field_tensor(&layout.config, s)?);
        let eps = draw_epsilon(&mut sample_rng(cfg.seed, pass.epoch, pass.index, 2), m);
        let sampling = if pass.train { Sampling::Noise(&eps) } else { Sampling::Mean };
        let code = layout.encode(&mut g, &vars, field, sampling)?;
        let pred = vae.decode(&mut g, &vae_vars, code.z)?;
        let goal = g.constant(cloud_tensor(&s.cloud)?);
        let ff = match forward {
            Some(f) => {
                let fwd_vars = bind(&mut g, &f.params, false);
                Some((f.predict(&mut g, &fwd_vars, pred)?, field))
            }
            None => None,
        };
        let (mut loss, mut value) = inverse_loss(&mut g, pred, goal, ff, cfg.alpha_ff, cfg.reduction)?;
        if cfg.inverse_kld > 0.0 {
            let kld = kld_gaussian(&mut g, code.mu, code.logvar)?;
            value.components.insert(KLD.to_string(), g.value(kld).item());
            let w = g.scale(kld, cfg.inverse_kld);
            loss = g.add(loss, w)?;
            value.total = g.value(loss).item();
        }
        let grads = if pass.train {
            Some(collect_grads(g.backward(loss)?, &vars, params))
        } else {
            None
        };
        Ok((value, grads))
    })
}

/// Point count, latent size and grid must agree across the models.
pub fn check_compatible(
    inverse: &NetworkConfig,
    vae: &NetworkConfig,
    forward: Option<&NetworkConfig>,
) -> Result<(), TrainingError> {
    if inverse.latent_dim != vae.latent_dim || inverse.point_count != vae.point_count {
        return Err(TrainingError::Parameter(format!(
            "inverse (M={}, P={}) and VAE (M={}, P={}) disagree",
            inverse.latent_dim, inverse.point_count, vae.latent_dim, vae.point_count
        )));
    }
    if let Some(f) = forward {
        if (f.n_lat, f.n_lon, f.point_count) != (inverse.n_lat, inverse.n_lon, inverse.point_count) {
            return Err(TrainingError::Parameter(format!(
                "forward model grid {}×{} / P={} does not match {}×{} / P={}",
                f.n_lat, f.n_lon, f.point_count, inverse.n_lat, inverse.n_lon, inverse.point_count
            )));
        }
    }
    Ok(())
}

/// Per-row CSV log: epoch, lr, loss, shape, kld, far_field, val_loss,
/// wall_time_s. Absent components are left empty.
pub fn write_training_log<W: Write>(w: W, records: &[EpochRecord]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "lr", "loss", "shape", "kld", "far_field", "val_loss", "wall_time_s"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in records {
        out.write_record([
            r.epoch.to_string(),
            format!("{:e}", r.lr),
            format!("{:e}", r.loss.total),
            opt(r.loss.components.get(losses::SHAPE).copied()),
            opt(r.loss.components.get(KLD).copied()),
            opt(r.loss.components.get(losses::FAR_FIELD).copied()),
            opt(r.val_loss),
            format!("{:.3}", r.wall_time),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Index-wise mean of equally sized clouds.
pub fn mean_cloud(samples: &[Sample]) -> Result<PointCloud, TrainingError> {
    let first = samples
        .first()
        .ok_or_else(|| TrainingError::Parameter("mean of no clouds".into()))?;
    let mut acc = vec![0.0; first.cloud.len() * 3];
    for s in samples {
        if s.cloud.len() != first.cloud.len() {
            return Err(TrainingError::Parameter("clouds differ in size".into()));
        }
        for (a, v) in acc.iter_mut().zip(s.cloud.to_flat()) {
            *a += v;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    Ok(PointCloud::from_flat(&acc.iter().map(|a| a * inv).collect::<Vec<_>>()))
}

/// Metrics of one evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: u64,
    /// Chamfer between the reconstruction and the stored cloud.
    pub chamfer: f64,
    /// Chamfer between the mean training cloud and the stored cloud.
    pub baseline_chamfer: f64,
    /// Relative L2 of the surrogate's field for the stored cloud.
    pub field_rel_l2: Option<f64>,
    /// Relative L2 of the surrogate's field for the reconstruction.
    pub recon_field_rel_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    pub mean_chamfer: f64,
    pub median_chamfer: f64,
    pub mean_baseline_chamfer: f64,
    pub mean_field_rel_l2: Option<f64>,
    /// Wall time per sample in seconds; excluded from comparisons of
    /// repeated runs.
    pub seconds_per_sample: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Deterministic reconstruction of one sample's stored field.
pub fn reconstruct(inverse: &InverseModel, vae: &VaeModel, sample: &Sample) -> Result<PointCloud, TrainingError> {
    let mut g = Graph::new();
    let inv_vars = bind(&mut g, &inverse.params, false);
    let vae_vars = bind(&mut g, &vae.params, false);
    let field = g.constant(field_tensor(&inverse.config, sample)?);
    let code = inverse.encode(&mut g, &inv_vars, field, Sampling::Mean)?;
    let out = vae.decode(&mut g, &vae_vars, code.z)?;
    Ok(PointCloud::from_flat(g.value(out).data()))
}

/// Evaluates the inverse pipeline on `test` with z = μ. `baseline` is the
/// reference cloud for the mean-shape comparison.
pub fn evaluate(
    inverse: &InverseModel,
    vae: &VaeModel,
    forward: Option<&ForwardModel>,
    test: &[Sample],
    baseline: &PointCloud,
    reduction: Reduction,
) -> Result<EvalReport, TrainingError> {
    check_compatible(&inverse.config, &vae.config, forward.map(|f| &f.config))?;
    check_samples(&inverse.config, test, true)?;
    if test.is_empty() {
        return Err(TrainingError::Parameter("no samples to evaluate".into()));
    }
    let start = Instant::now();
    let results = par::map_range(test.len(), |k| -> Result<SampleMetrics, TrainingError> {
        let s = &test[k];
        let pred = reconstruct(inverse, vae, s)?;
        let chamfer = losses::chamfer_distance(&pred, &s.cloud, reduction)?;
        let baseline_chamfer = losses::chamfer_distance(baseline, &s.cloud, reduction)?;
        let (field_rel_l2, recon_field_rel_l2) = match forward {
            Some(f) => (
                Some(relative_l2_values(&f.predict_magnitudes(&s.cloud)?, &s.field)?),
                Some(relative_l2_values(&f.predict_magnitudes(&pred)?, &s.field)?),
            ),
            None => (None, None),
        };
        Ok(SampleMetrics {
            id: s.id,
            chamfer,
            baseline_chamfer,
            field_rel_l2,
            recon_field_rel_l2,
        })
    });
    let samples = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let elapsed = start.elapsed().as_secs_f64();
    let chamfers: Vec<f64> = samples.iter().map(|s| s.chamfer).collect();
    let baselines: Vec<f64> = samples.iter().map(|s| s.baseline_chamfer).collect();
    let fields: Vec<f64> = samples.iter().filter_map(|s| s.field_rel_l2).collect();
    Ok(EvalReport {
        mean_chamfer: mean(&chamfers),
        median_chamfer: median(&chamfers),
        mean_baseline_chamfer: mean(&baselines),
        mean_field_rel_l2: (!fields.is_empty()).then(|| mean(&fields)),
        seconds_per_sample: elapsed / samples.len() as f64,
        samples,
    })
}

/// Mean chamfer between each cloud and its VAE reconstruction (z = μ).
pub fn vae_reconstruction_chamfer(vae: &VaeModel, samples: &[Sample], reduction: Reduction) -> Result<f64, TrainingError> {
    let results = par::map_range(samples.len(), |k| -> Result<f64, TrainingError> {
        let recon = vae.reconstruct(&samples[k].cloud)?;
        Ok(losses::chamfer_distance(&recon, &samples[k].cloud, reduction)?)
    });
    let v = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(mean(&v))
}

/// Relative L2 of the surrogate per sample.
pub fn forward_relative_l2(forward: &ForwardModel, samples: &[Sample]) -> Result<Vec<f64>, TrainingError> {
    let results = par::map_range(samples.len(), |k| -> Result<f64, TrainingError> {
        let s = &samples[k];
        Ok(relative_l2_values(&forward.predict_magnitudes(&s.cloud)?, &s.field)?)
    });
    results.into_iter().collect()
}

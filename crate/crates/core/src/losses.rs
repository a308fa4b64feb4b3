//! Objective terms and evaluation metrics.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Reduction, Tensor, Var};
use crate::error::LossError;
use crate::geometry::PointCloud;
use crate::solver::FarFieldGrid;

pub const SHAPE: &str = "shape";
pub const KLD: &str = "kld";
pub const FAR_FIELD: &str = "far_field";

/// A loss total with its unweighted components.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

impl LossValue {
    pub fn component(&self, name: &str) -> f64 {
        self.components.get(name).copied().unwrap_or(0.0)
    }

    /// Running sum, used to average over a batch.
    pub fn accumulate(&mut self, other: &LossValue) {
        self.total += other.total;
        for (k, v) in &other.components {
            *self.components.entry(k.clone()).or_insert(0.0) += v;
        }
    }

    pub fn scaled(&self, s: f64) -> LossValue {
        LossValue {
            total: self.total * s,
            components: self.components.iter().map(|(k, v)| (k.clone(), v * s)).collect(),
        }
    }
}

fn cloud_tensor(pc: &PointCloud) -> Result<Tensor, LossError> {
    if pc.is_empty() {
        return Err(LossError::Parameter("point cloud is empty".into()));
    }
    Ok(Tensor::new(vec![pc.len(), 3], pc.to_flat())?)
}

/// Chamfer distance between two clouds (no gradient).
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud, reduction: Reduction) -> Result<f64, LossError> {
    let mut g = Graph::new();
    let va = g.constant(cloud_tensor(a)?);
    let vb = g.constant(cloud_tensor(b)?);
    let c = g.chamfer(va, vb, reduction)?;
    Ok(g.value(c).item())
}

/// 0.5·Σ (μ² + σ² − log σ² − 1) for a diagonal Gaussian against N(0, I).
pub fn kld_gaussian(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var, LossError> {
    let mu2 = g.square(mu);
    let var = g.exp(logvar);
    let a = g.add(mu2, var)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -1.0);
    let s = g.sum_all(c);
    Ok(g.scale(s, 0.5))
}

/// Mean squared error over all entries.
pub fn mse(g: &mut Graph, pred: Var, target: Var) -> Result<Var, LossError> {
    let d = g.sub(pred, target)?;
    let sq = g.square(d);
    Ok(g.mean_all(sq))
}

/// chamfer(x, x̄) + β·KLD.
pub fn vae_loss(
    g: &mut Graph,
    x: Var,
    recon: Var,
    mu: Var,
    logvar: Var,
    beta: f64,
    reduction: Reduction,
) -> Result<(Var, LossValue), LossError> {
    let shape = g.chamfer(x, recon, reduction)?;
    let kld = kld_gaussian(g, mu, logvar)?;
    let weighted = g.scale(kld, beta);
    let total = g.add(shape, weighted)?;
    let value = LossValue {
        total: g.value(total).item(),
        components: [
            (SHAPE.to_string(), g.value(shape).item()),
            (KLD.to_string(), g.value(kld).item()),
        ]
        .into(),
    };
    Ok((total, value))
}

/// chamfer(pred, goal) + α_FF·mse(ff_pred, ff_goal). With α_FF = 0 the
/// far-field inputs are ignored and the total is the chamfer node itself.
pub fn inverse_loss(
    g: &mut Graph,
    pc_pred: Var,
    pc_goal: Var,
    far_field: Option<(Var, Var)>,
    alpha_ff: f64,
    reduction: Reduction,
) -> Result<(Var, LossValue), LossError> {
    if !(alpha_ff >= 0.0 && alpha_ff.is_finite()) {
        return Err(LossError::Parameter(format!("α_FF must be >= 0, got {alpha_ff}")));
    }
    let shape = g.chamfer(pc_pred, pc_goal, reduction)?;
    let mut components: BTreeMap<String, f64> = [(SHAPE.to_string(), g.value(shape).item())].into();
    if alpha_ff == 0.0 {
        let value = LossValue {
            total: g.value(shape).item(),
            components,
        };
        return Ok((shape, value));
    }
    let (ff_pred, ff_goal) = far_field.ok_or_else(|| {
        LossError::Parameter(format!("α_FF = {alpha_ff} needs predicted and target far fields"))
    })?;
    let ff = mse(g, ff_pred, ff_goal)?;
    components.insert(FAR_FIELD.to_string(), g.value(ff).item());
    let weighted = g.scale(ff, alpha_ff);
    let total = g.add(shape, weighted)?;
    Ok((
        total,
        LossValue {
            total: g.value(total).item(),
            components,
        },
    ))
}

/// ‖truth − pred‖₂ / ‖truth‖₂ over flattened magnitudes (complex grids use
/// the complex difference).
pub fn relative_l2(pred: &FarFieldGrid, truth: &FarFieldGrid) -> Result<f64, LossError> {
    if pred.grid.dims() != truth.grid.dims() {
        return Err(LossError::Metric(format!(
            "grid mismatch: {:?} vs {:?}",
            pred.grid.dims(),
            truth.grid.dims()
        )));
    }
    let (num, den) = match (pred.complex_values(), truth.complex_values()) {
        (Some(p), Some(t)) => (
            p.iter().zip(t).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>(),
            t.iter().map(|b| b.norm_sqr()).sum::<f64>(),
        ),
        _ => {
            let (p, t) = (pred.magnitudes(), truth.magnitudes());
            relative_l2_parts(&p, &t)
        }
    };
    if den == 0.0 {
        return Err(LossError::Metric("truth has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

fn relative_l2_parts(p: &[f64], t: &[f64]) -> (f64, f64) {
    (
        p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum(),
        t.iter().map(|b| b * b).sum(),
    )
}

/// Relative L2 between raw magnitude arrays.
pub fn relative_l2_values(pred: &[f64], truth: &[f64]) -> Result<f64, LossError> {
    if pred.len() != truth.len() {
        return Err(LossError::Metric(format!("length mismatch: {} vs {}", pred.len(), truth.len())));
    }
    let (num, den) = relative_l2_parts(pred, truth);
    if den == 0.0 {
        return Err(LossError::Metric("truth has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// Uniform histogram over [min, max]. Returns `n_bins + 1` edges and the
/// counts; the maximum falls in the last bin.
pub fn error_histogram(errors: &[f64], n_bins: usize) -> Result<(Vec<f64>, Vec<usize>), LossError> {
    if errors.is_empty() || n_bins == 0 {
        return Err(LossError::Parameter(format!(
            "histogram needs values and bins, got {} values and {n_bins} bins",
            errors.len()
        )));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(LossError::Parameter("histogram input contains non-finite values".into()));
    }
    let lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; n_bins];
    for &e in errors {
        let bin = if width > 0.0 {
            (((e - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Ok((edges, counts))
}

/// Per-sample metric rows as CSV with columns `sample_id,metric,value`.
pub fn write_metric_csv<W: Write>(w: W, rows: &[(u64, String, f64)]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["sample_id", "metric", "value"])?;
    for (id, metric, value) in rows {
        wr.serialize((id, metric, value))?;
    }
    wr.flush()?;
    Ok(())
}

/// Histogram as CSV with columns `bin_lo,bin_hi,count`.
pub fn write_histogram_csv<W: Write>(w: W, edges: &[f64], counts: &[usize]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bin_lo", "bin_hi", "count"])?;
    for (i, c) in counts.iter().enumerate() {
        wr.serialize((edges[i], edges[i + 1], c))?;
    }
    wr.flush()?;
    Ok(())
}

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use phaseless::autodiff::Reduction;
use phaseless::dataset::{generate_dataset, holdout, split, Dataset, Sample, MANIFEST_FILE};
use phaseless::geometry::{read_point_cloud_off, write_point_cloud_off, PointCloud};
use phaseless::losses::{chamfer_distance, error_histogram, write_histogram_csv, write_metric_csv};
use phaseless::networks::{ForwardModel, InverseModel, VaeModel};
use phaseless::solver::FarFieldGrid;
use phaseless::training::{
    evaluate, mean_cloud, reconstruct, train_forward, train_inverse, train_vae, write_training_log, EvalReport,
    TrainConfig, TrainReport,
};

use crate::config::RunConfig;
use crate::error::CliError;

const HISTOGRAM_BINS: usize = 20;

fn compute<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Compute(e.to_string())
}

/// Writes through a temporary sibling so a failed write leaves no partial
/// file under `path`.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp)?);
    f(&mut w)?;
    w.flush()?;
    drop(w);
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.paths.dataset();
    let manifest = generate_dataset(&cfg.dataset, &dir)?;
    println!(
        "dataset: {} samples ({} failed) in {}",
        manifest.count,
        manifest.failures.len(),
        dir.display()
    );
    println!("manifest sha256: {}", manifest.hash());
    Ok(())
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = cfg.paths.dataset();
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(CliError::Dependency(format!(
            "no dataset at {} (run gen-data first)",
            dir.display()
        )));
    }
    let ds = Dataset::open(&dir)?;
    let (d, m) = (&ds.manifest.config, &cfg.model);
    if (d.point_count, d.n_lat, d.n_lon) != (m.point_count, m.n_lat, m.n_lon) {
        return Err(CliError::Compatibility(format!(
            "dataset has P={} and grid {}×{}, model expects P={} and grid {}×{}",
            d.point_count, d.n_lat, d.n_lon, m.point_count, m.n_lat, m.n_lon
        )));
    }
    Ok(ds)
}

struct Splits {
    train: Vec<Sample>,
    val: Vec<Sample>,
}

fn gather(ds: &Dataset, ids: &[u64]) -> Result<Vec<Sample>, CliError> {
    Ok(ids.iter().map(|&id| ds.get(id).cloned()).collect::<Result<_, _>>()?)
}

fn splits(ds: &Dataset, t: &TrainConfig) -> Result<Splits, CliError> {
    let (train_ids, _) = split(&ds.manifest, ds.manifest.config.seed);
    let (fit, val) = holdout(&train_ids, t.val_fraction, t.seed);
    Ok(Splits {
        train: gather(ds, &fit)?,
        val: gather(ds, &val)?,
    })
}

fn require(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Dependency(format!("{what} checkpoint {}: {e}", path.display())))
}

fn load_vae(cfg: &RunConfig) -> Result<VaeModel, CliError> {
    Ok(VaeModel::load(require(&cfg.paths.vae(), "VAE")?)?.0)
}

fn load_forward(cfg: &RunConfig) -> Result<ForwardModel, CliError> {
    Ok(ForwardModel::load(require(&cfg.paths.forward(), "forward")?)?.0)
}

fn load_inverse(cfg: &RunConfig) -> Result<InverseModel, CliError> {
    Ok(InverseModel::load(require(&cfg.paths.inverse(), "inverse")?)?.0)
}

fn finish(cfg: &RunConfig, stage: &str, report: &TrainReport, save: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>, ckpt: &Path) -> Result<(), CliError> {
    write_atomic(ckpt, save)?;
    write_atomic(&cfg.paths.log(stage), |w| write_training_log(w, &report.records).map_err(compute))?;
    println!(
        "{stage}: best epoch {} of {}, loss {:.6e}; checkpoint {}",
        report.best_epoch,
        report.records.len(),
        report.best_loss,
        ckpt.display()
    );
    Ok(())
}

pub fn train_vae_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = open_dataset(cfg)?;
    let t = &cfg.train_vae;
    let s = splits(&ds, t)?;
    let mut model = VaeModel::new(cfg.model.clone(), t.seed).map_err(compute)?;
    let report = train_vae(&mut model, &s.train, &s.val, t)?;
    let step = report.best_epoch as u64;
    finish(cfg, "vae", &report, |w| Ok(model.save(w, step)?), &cfg.paths.vae())
}

pub fn train_forward_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = open_dataset(cfg)?;
    let t = &cfg.train_forward;
    let s = splits(&ds, t)?;
    let mut model = ForwardModel::new(cfg.model.clone(), t.seed).map_err(compute)?;
    let report = train_forward(&mut model, &s.train, &s.val, t)?;
    let step = report.best_epoch as u64;
    finish(cfg, "forward", &report, |w| Ok(model.save(w, step)?), &cfg.paths.forward())
}

pub fn train_inverse_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let t = &cfg.train_inverse;
    let vae = load_vae(cfg)?;
    let forward = if t.alpha_ff > 0.0 { Some(load_forward(cfg)?) } else { None };
    let ds = open_dataset(cfg)?;
    let s = splits(&ds, t)?;
    let mut model = InverseModel::new(cfg.model.clone(), t.seed).map_err(compute)?;
    let report = train_inverse(&mut model, &vae, forward.as_ref(), &s.train, &s.val, t)?;
    println!("forward model calls: {}", forward.as_ref().map_or(0, |f| f.calls()));
    let step = report.best_epoch as u64;
    finish(cfg, "inverse", &report, |w| Ok(model.save(w, step)?), &cfg.paths.inverse())
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    test: EvalReport,
    train_mean_chamfer: f64,
    reduction: Reduction,
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let vae = load_vae(cfg)?;
    let inverse = load_inverse(cfg)?;
    let forward = if cfg.paths.forward().exists() { Some(load_forward(cfg)?) } else { None };
    let ds = open_dataset(cfg)?;
    let (train_ids, test_ids) = split(&ds.manifest, ds.manifest.config.seed);
    let train = gather(&ds, &train_ids)?;
    let test = gather(&ds, &test_ids)?;
    let red = cfg.train_inverse.reduction;
    let baseline = mean_cloud(&train)?;
    let report = evaluate(&inverse, &vae, forward.as_ref(), &test, &baseline, red)?;
    let train_report = evaluate(&inverse, &vae, None, &train, &baseline, red)?;
    let dir = cfg.paths.eval_dir();
    let mut rows = Vec::new();
    for m in &report.samples {
        rows.push((m.id, "chamfer".to_string(), m.chamfer));
        rows.push((m.id, "baseline_chamfer".to_string(), m.baseline_chamfer));
        if let Some(v) = m.field_rel_l2 {
            rows.push((m.id, "field_rel_l2".to_string(), v));
        }
        if let Some(v) = m.recon_field_rel_l2 {
            rows.push((m.id, "recon_field_rel_l2".to_string(), v));
        }
    }
    write_atomic(&dir.join("per_sample.csv"), |w| write_metric_csv(w, &rows).map_err(compute))?;
    let chamfers: Vec<f64> = report.samples.iter().map(|m| m.chamfer).collect();
    let (edges, counts) = error_histogram(&chamfers, HISTOGRAM_BINS).map_err(compute)?;
    write_atomic(&dir.join("chamfer_histogram.csv"), |w| {
        write_histogram_csv(w, &edges, &counts).map_err(compute)
    })?;
    let fields: Vec<f64> = report.samples.iter().filter_map(|m| m.field_rel_l2).collect();
    if !fields.is_empty() {
        let (edges, counts) = error_histogram(&fields, HISTOGRAM_BINS).map_err(compute)?;
        write_atomic(&dir.join("field_histogram.csv"), |w| {
            write_histogram_csv(w, &edges, &counts).map_err(compute)
        })?;
    }
    let summary = EvalSummary {
        train_mean_chamfer: train_report.mean_chamfer,
        test: report,
        reduction: red,
    };
    write_atomic(&dir.join("report.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary).map_err(compute)
    })?;
    let t = &summary.test;
    println!("test samples: {}", t.samples.len());
    println!("mean chamfer: {:.6e}", t.mean_chamfer);
    println!("median chamfer: {:.6e}", t.median_chamfer);
    println!("mean-shape baseline chamfer: {:.6e}", t.mean_baseline_chamfer);
    println!("train mean chamfer: {:.6e}", summary.train_mean_chamfer);
    if let Some(f) = t.mean_field_rel_l2 {
        println!("forward-net mean relative L2: {f:.6e}");
    }
    println!("time per sample: {:.4} s", t.seconds_per_sample);
    Ok(())
}

/// Input of `predict`.
pub enum PredictInput {
    /// Little-endian f32 magnitude grid.
    Field(PathBuf),
    /// A stored dataset sample, whose cloud doubles as the ground truth.
    Sample(u64),
}

pub fn predict_cmd(
    cfg: &RunConfig,
    input: PredictInput,
    truth: Option<&Path>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let vae = load_vae(cfg)?;
    let inverse = load_inverse(cfg)?;
    let (n_lat, n_lon) = (cfg.model.n_lat, cfg.model.n_lon);
    let (sample, stored_truth) = match input {
        PredictInput::Field(path) => {
            let bytes = fs::read(&path)?;
            if bytes.len() != n_lat * n_lon * 4 {
                return Err(CliError::Compatibility(format!(
                    "{} holds {} bytes, expected {n_lat}×{n_lon} f32 values",
                    path.display(),
                    bytes.len()
                )));
            }
            let grid = cfg.dataset.grid()?;
            let ff = FarFieldGrid::read_magnitudes_f32(bytes.as_slice(), grid, cfg.dataset.frequency)
                .map_err(|e| CliError::Compatibility(e.to_string()))?;
            let sample = Sample {
                id: 0,
                cloud: PointCloud::new(vec![[0.0; 3]; cfg.model.point_count]),
                field: ff.magnitudes(),
            };
            (sample, None)
        }
        PredictInput::Sample(id) => {
            let ds = open_dataset(cfg)?;
            let s = ds.get(id)?.clone();
            let cloud = s.cloud.clone();
            (s, Some(cloud))
        }
    };
    let pred = reconstruct(&inverse, &vae, &sample)?;
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.out.join("prediction.off"));
    write_atomic(&out, |w| Ok(write_point_cloud_off(&pred, w)?))?;
    println!("prediction: {} points in {}", pred.len(), out.display());
    let truth = match truth {
        Some(p) => Some(read_point_cloud_off(BufReader::new(File::open(p)?)).map_err(compute)?),
        None => stored_truth,
    };
    if let Some(t) = truth {
        let c = chamfer_distance(&pred, &t, cfg.train_inverse.reduction).map_err(compute)?;
        println!("chamfer: {c:.17e}");
    }
    Ok(())
}

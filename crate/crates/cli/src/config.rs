use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use phaseless::dataset::DatasetConfig;
use phaseless::networks::NetworkConfig;
use phaseless::training::TrainConfig;

use crate::error::CliError;

/// Output locations. Unset entries default to fixed names under `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub vae: Option<PathBuf>,
    pub forward: Option<PathBuf>,
    pub inverse: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out: PathBuf::from("run"),
            dataset: None,
            vae: None,
            forward: None,
            inverse: None,
        }
    }
}

impl Paths {
    pub fn dataset(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join("dataset"))
    }

    pub fn vae(&self) -> PathBuf {
        self.vae.clone().unwrap_or_else(|| self.out.join("vae.ckpt"))
    }

    pub fn forward(&self) -> PathBuf {
        self.forward.clone().unwrap_or_else(|| self.out.join("forward.ckpt"))
    }

    pub fn inverse(&self) -> PathBuf {
        self.inverse.clone().unwrap_or_else(|| self.out.join("inverse.ckpt"))
    }

    pub fn log(&self, stage: &str) -> PathBuf {
        self.out.join(format!("{stage}_log.csv"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: NetworkConfig,
    pub train_vae: TrainConfig,
    pub train_forward: TrainConfig,
    pub train_inverse: TrainConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            model: NetworkConfig::toy(),
            train_vae: TrainConfig::default(),
            train_forward: TrainConfig::default(),
            train_inverse: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

/// Overlays `top` onto `base`, recursing into tables.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

/// Applies one `section.key=value` override.
fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("--set expects section.key=value, got `{assignment}`")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("--set has an empty key segment in `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("--set `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any) over the defaults, applies overrides and
    /// validates. Sections may be partial.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| CliError::Validation(format!("default config: {e}")))?;
        merge(&mut table, user);
        for s in sets {
            apply_set(&mut table, s)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset
            .validate()
            .map_err(|e| CliError::Validation(format!("[dataset] {e}")))?;
        self.model
            .validate()
            .map_err(|e| CliError::Validation(format!("[model] {e}")))?;
        for (name, t) in [
            ("train_vae", &self.train_vae),
            ("train_forward", &self.train_forward),
            ("train_inverse", &self.train_inverse),
        ] {
            t.validate().map_err(|e| CliError::Validation(format!("[{name}] {e}")))?;
        }
        let (d, m) = (&self.dataset, &self.model);
        if (d.point_count, d.n_lat, d.n_lon) != (m.point_count, m.n_lat, m.n_lon) {
            return Err(CliError::Validation(format!(
                "dataset (P={}, grid {}×{}) and model (P={}, grid {}×{}) disagree",
                d.point_count, d.n_lat, d.n_lon, m.point_count, m.n_lat, m.n_lon
            )));
        }
        Ok(())
    }

    /// Sets every seed to `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.train_vae.seed = seed;
        self.train_forward.seed = seed;
        self.train_inverse.seed = seed;
    }
}

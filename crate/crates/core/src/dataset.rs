//! Dataset generation, storage, splitting and batching.
//!
//! A dataset directory holds `manifest.json` plus two packed files:
//! `clouds.bin` (per sample P×3 little-endian f32, row-major) and
//! `fields.bin` (per sample n_lat×n_lon little-endian f32 magnitudes,
//! latitude-major). Records are stored in increasing id order.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::DatasetError;
use crate::geometry::{furthest_point_sampling, normalize_to_bounding_sphere, random_particle, ParticleSpec, PointCloud};
use crate::par;
use crate::solver::{
    far_field, make_direction_grid, phaseless, solve_soft_with, BemOptions, DirectionGrid, FarFieldGrid, PlaneWave,
    DEFAULT_SOUND_SPEED,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLOUDS_FILE: &str = "clouds.bin";
pub const FIELDS_FILE: &str = "fields.bin";

/// Largest tolerated fraction of failed samples.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

/// Samples solved per parallel round before the ordered writer drains them.
const CHUNK: usize = 64;

/// Everything that determines a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n: usize,
    /// Sample `i` uses particle seed `seed + i`.
    pub seed: u64,
    pub frequency: f64,
    pub sound_speed: f64,
    pub n_lat: usize,
    pub n_lon: usize,
    pub point_count: usize,
    pub subdivisions: usize,
    pub max_degree: usize,
    pub coeff_decay: f64,
    /// Particles are rescaled so the farthest vertex sits at this radius.
    pub bounding_radius: f64,
    pub quad_order: usize,
    /// Incident direction.
    pub direction: [f64; 3],
    /// Train:test parts.
    pub split_ratio: [usize; 2],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n: 512,
            seed: 0,
            frequency: 600.0,
            sound_speed: DEFAULT_SOUND_SPEED,
            n_lat: 13,
            n_lon: 25,
            point_count: 256,
            subdivisions: 3,
            max_degree: 6,
            coeff_decay: 0.3,
            bounding_radius: 0.5,
            quad_order: BemOptions::default().quad_order,
            direction: [0.0, 0.0, 1.0],
            split_ratio: [9, 1],
        }
    }
}

impl DatasetConfig {
    pub fn particle_spec(&self, id: u64) -> ParticleSpec {
        ParticleSpec {
            base_radius: 1.0,
            max_degree: self.max_degree,
            coeff_decay: self.coeff_decay,
            seed: self.seed.wrapping_add(id),
            subdivisions: self.subdivisions,
        }
    }

    pub fn wave(&self) -> Result<PlaneWave, DatasetError> {
        PlaneWave::new(self.direction, self.frequency, self.sound_speed)
            .map_err(|e| DatasetError::Parameter(e.to_string()))
    }

    pub fn grid(&self) -> Result<DirectionGrid, DatasetError> {
        make_direction_grid(self.n_lat, self.n_lon).map_err(|e| DatasetError::Parameter(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: String| Err(DatasetError::Parameter(msg));
        if self.n < 1 {
            return bad("dataset.n must be >= 1".into());
        }
        if self.point_count < 1 {
            return bad("dataset.point_count must be >= 1".into());
        }
        if !(self.bounding_radius > 0.0 && self.bounding_radius.is_finite()) {
            return bad(format!("dataset.bounding_radius must be positive, got {}", self.bounding_radius));
        }
        if self.split_ratio[1] == 0 || self.split_ratio[0] + self.split_ratio[1] == 0 {
            return bad(format!("dataset.split_ratio needs a positive test part, got {:?}", self.split_ratio));
        }
        if self.quad_order == 0 {
            return bad("dataset.quad_order must be >= 1".into());
        }
        self.particle_spec(0).validate()?;
        self.wave()?;
        self.grid()?;
        Ok(())
    }
}

/// One stored sample's location in the packed files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub cloud_offset: u64,
    pub field_offset: u64,
    /// SHA-256 of the particle spec's JSON.
    pub spec_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: DatasetConfig,
    /// Successfully stored samples.
    pub count: usize,
    pub records: Vec<SampleRecord>,
    pub failures: Vec<FailureRecord>,
    pub clouds_sha256: String,
    pub fields_sha256: String,
}

impl DatasetManifest {
    pub fn ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.id).collect()
    }

    pub fn cloud_bytes(&self) -> usize {
        self.config.point_count * 3 * 4
    }

    pub fn field_bytes(&self) -> usize {
        self.config.n_lat * self.config.n_lon * 4
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: String| Err(DatasetError::Manifest(msg));
        if self.version != MANIFEST_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        self.config.validate()?;
        if self.count != self.records.len() {
            return bad(format!("count {} but {} records", self.count, self.records.len()));
        }
        for (k, r) in self.records.iter().enumerate() {
            let (c, f) = ((k * self.cloud_bytes()) as u64, (k * self.field_bytes()) as u64);
            if r.cloud_offset != c || r.field_offset != f {
                return bad(format!("record {} has offsets ({}, {}), expected ({c}, {f})", r.id, r.cloud_offset, r.field_offset));
            }
            if k > 0 && r.id <= self.records[k - 1].id {
                return bad(format!("ids not strictly increasing at record {k}"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the manifest's canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("manifest serializes");
        hex(&Sha256::digest(json))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn spec_hash(spec: &ParticleSpec) -> String {
    hex(&Sha256::digest(serde_json::to_vec(spec).expect("spec serializes")))
}

/// A point cloud and its phaseless far field.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub cloud: PointCloud,
    pub field: Vec<f64>,
}

/// Builds particle `id`, solves it and returns the FPS cloud and far-field
/// magnitudes at full precision.
pub fn generate_sample(config: &DatasetConfig, id: u64) -> Result<(PointCloud, FarFieldGrid), String> {
    let spec = config.particle_spec(id);
    let mesh = random_particle(&spec).map_err(|e| e.to_string())?;
    let mesh = normalize_to_bounding_sphere(&mesh, config.bounding_radius).map_err(|e| e.to_string())?;
    let wave = config.wave().map_err(|e| e.to_string())?;
    let grid = config.grid().map_err(|e| e.to_string())?;
    let options = BemOptions {
        quad_order: config.quad_order,
    };
    let sol = solve_soft_with(&mesh, &wave, &options).map_err(|e| e.to_string())?;
    let ff = phaseless(&far_field(&sol, &grid).map_err(|e| e.to_string())?);
    let cloud = furthest_point_sampling(&mesh, config.point_count, spec.seed).map_err(|e| e.to_string())?;
    Ok((cloud, ff))
}

fn f32_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn f64_values(buf: &[u8]) -> Vec<f64> {
    buf.chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

/// Generates `config.n` samples into `dir`, in parallel over samples with a
/// single writer appending in id order. Failed samples are logged and
/// skipped; more than [`MAX_FAILURE_FRACTION`] failures is an error and
/// leaves no manifest behind.
pub fn generate_dataset(config: &DatasetConfig, dir: &Path) -> Result<DatasetManifest, DatasetError> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path)?;
    }
    let mut clouds = BufWriter::new(File::create(dir.join(CLOUDS_FILE))?);
    let mut fields = BufWriter::new(File::create(dir.join(FIELDS_FILE))?);
    let (mut cloud_hash, mut field_hash) = (Sha256::new(), Sha256::new());
    let (mut records, mut failures) = (Vec::new(), Vec::new());
    let (mut cloud_offset, mut field_offset) = (0u64, 0u64);
    let mut start = 0;
    while start < config.n {
        let len = CHUNK.min(config.n - start);
        let results = par::map_range(len, |k| generate_sample(config, (start + k) as u64));
        for (k, result) in results.into_iter().enumerate() {
            let id = (start + k) as u64;
            match result {
                Ok((cloud, ff)) => {
                    let cb = f32_bytes(cloud.to_flat());
                    let fb = f32_bytes(ff.magnitudes());
                    clouds.write_all(&cb)?;
                    fields.write_all(&fb)?;
                    cloud_hash.update(&cb);
                    field_hash.update(&fb);
                    records.push(SampleRecord {
                        id,
                        cloud_offset,
                        field_offset,
                        spec_hash: spec_hash(&config.particle_spec(id)),
                    });
                    cloud_offset += cb.len() as u64;
                    field_offset += fb.len() as u64;
                }
                Err(reason) => {
                    log::warn!("sample {id} skipped: {reason}");
                    failures.push(FailureRecord { id, reason });
                }
            }
        }
        start += len;
        log::info!("generated {start}/{} samples", config.n);
    }
    clouds.flush()?;
    fields.flush()?;
    if failures.len() as f64 > MAX_FAILURE_FRACTION * config.n as f64 || records.is_empty() {
        drop((clouds, fields));
        let _ = fs::remove_file(dir.join(CLOUDS_FILE));
        let _ = fs::remove_file(dir.join(FIELDS_FILE));
        return Err(DatasetError::TooManyFailures {
            failed: failures.len(),
            total: config.n,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        config: config.clone(),
        count: records.len(),
        records,
        failures,
        clouds_sha256: hex(&cloud_hash.finalize()),
        fields_sha256: hex(&field_hash.finalize()),
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    fs::write(&manifest_path, json)?;
    Ok(manifest)
}

/// A dataset loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    samples: Vec<Sample>,
    index: BTreeMap<u64, usize>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        manifest.validate()?;
        let read = |name: &str, per: usize| -> Result<Vec<u8>, DatasetError> {
            let mut buf = Vec::new();
            File::open(dir.join(name))?.read_to_end(&mut buf)?;
            if buf.len() != per * manifest.count {
                return Err(DatasetError::Manifest(format!(
                    "{name} has {} bytes, expected {}",
                    buf.len(),
                    per * manifest.count
                )));
            }
            Ok(buf)
        };
        let cb = read(CLOUDS_FILE, manifest.cloud_bytes())?;
        let fb = read(FIELDS_FILE, manifest.field_bytes())?;
        if hex(&Sha256::digest(&cb)) != manifest.clouds_sha256 || hex(&Sha256::digest(&fb)) != manifest.fields_sha256 {
            return Err(DatasetError::Manifest("data files do not match the manifest checksums".into()));
        }
        let samples: Vec<Sample> = manifest
            .records
            .iter()
            .map(|r| {
                let c = r.cloud_offset as usize;
                let f = r.field_offset as usize;
                Sample {
                    id: r.id,
                    cloud: PointCloud::from_flat(&f64_values(&cb[c..c + manifest.cloud_bytes()])),
                    field: f64_values(&fb[f..f + manifest.field_bytes()]),
                }
            })
            .collect();
        let index = samples.iter().enumerate().map(|(k, s)| (s.id, k)).collect();
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            samples,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, id: u64) -> Result<&Sample, DatasetError> {
        self.index
            .get(&id)
            .map(|&k| &self.samples[k])
            .ok_or(DatasetError::UnknownId(id))
    }

    pub fn field_grid(&self, id: u64) -> Result<FarFieldGrid, DatasetError> {
        let s = self.get(id)?;
        FarFieldGrid::magnitude(self.manifest.config.grid()?, self.manifest.config.frequency, s.field.clone())
            .map_err(|e| DatasetError::Manifest(e.to_string()))
    }

    /// Resolves [`batch_ids`] to samples.
    pub fn batches(&self, ids: &[u64], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<&Sample>>, DatasetError> {
        batch_ids(ids, batch_size, seed, epoch)?
            .into_iter()
            .map(|b| b.into_iter().map(|id| self.get(id)).collect())
            .collect()
    }
}

/// Test-set size for `n` samples under a `train:test` ratio, rounded up.
pub fn test_count(n: usize, ratio: [usize; 2]) -> usize {
    let parts = ratio[0] + ratio[1];
    (n * ratio[1]).div_ceil(parts).max(1).min(n)
}

/// Deterministic shuffled partition of the manifest's ids.
pub fn split(manifest: &DatasetManifest, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut ids = manifest.ids();
    let n = ids.len();
    if n < 10 {
        log::warn!("only {n} samples; the test split keeps at least one");
    }
    let n_test = test_count(n, manifest.config.split_ratio);
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test: Vec<u64> = ids.split_off(n - n_test);
    let mut train = ids;
    train.sort_unstable();
    let mut test = test;
    test.sort_unstable();
    (train, test)
}

/// Moves `ceil(fraction·|ids|)` shuffled ids into a held-out set; both
/// halves come back sorted. A zero fraction holds out nothing.
pub fn holdout(ids: &[u64], fraction: f64, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let n_held = ((fraction * ids.len() as f64).ceil() as usize).min(ids.len().saturating_sub(1));
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held = order.split_off(order.len() - n_held);
    order.sort_unstable();
    held.sort_unstable();
    (order, held)
}

/// Shuffles `ids` with a stream keyed by `epoch` and cuts it into batches;
/// the last batch may be short.
pub fn batch_ids(ids: &[u64], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<u64>>, DatasetError> {
    if batch_size < 1 {
        return Err(DatasetError::Parameter("batch_size must be >= 1".into()));
    }
    let mut order = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[u64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> DatasetConfig {
        DatasetConfig {
            n,
            seed: 11,
            subdivisions: 2,
            point_count: 16,
            n_lat: 5,
            n_lon: 9,
            ..DatasetConfig::default()
        }
    }

    fn manifest_with(n: usize) -> DatasetManifest {
        DatasetManifest {
            version: MANIFEST_VERSION,
            config: DatasetConfig { n, ..DatasetConfig::default() },
            count: n,
            records: (0..n as u64)
                .map(|id| SampleRecord {
                    id,
                    cloud_offset: 0,
                    field_offset: 0,
                    spec_hash: String::new(),
                })
                .collect(),
            failures: vec![],
            clouds_sha256: String::new(),
            fields_sha256: String::new(),
        }
    }

    #[test]
    fn split_sizes() {
        for (n, train, test) in [(100, 90, 10), (512, 460, 52), (10, 9, 1), (3, 2, 1), (1, 0, 1)] {
            let (a, b) = split(&manifest_with(n), 4);
            assert_eq!((a.len(), b.len()), (train, test), "n = {n}");
        }
    }

    #[test]
    fn split_disjoint_exhaustive_deterministic() {
        let m = manifest_with(57);
        let (a, b) = split(&m, 9);
        let mut all: Vec<u64> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, m.ids());
        assert_eq!(split(&m, 9), (a.clone(), b.clone()));
        assert_ne!(split(&m, 10).1, b);
    }

    #[test]
    fn holdout_partitions() {
        let ids: Vec<u64> = (0..20).collect();
        let (rest, held) = holdout(&ids, 0.1, 1);
        assert_eq!((rest.len(), held.len()), (18, 2));
        let mut all = [rest, held].concat();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(holdout(&ids, 0.0, 1).1.len(), 0);
        assert_eq!(holdout(&[4], 0.5, 1), (vec![4], vec![]));
    }

    #[test]
    fn batches_cover_and_reshuffle() {
        let ids: Vec<u64> = (0..23).collect();
        let e0 = batch_ids(&ids, 5, 3, 0).unwrap();
        assert_eq!(e0.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5, 5, 5, 3]);
        let mut flat: Vec<u64> = e0.concat();
        flat.sort_unstable();
        assert_eq!(flat, ids);
        assert_eq!(batch_ids(&ids, 5, 3, 0).unwrap(), e0);
        assert_ne!(batch_ids(&ids, 5, 3, 1).unwrap(), e0);
        assert!(batch_ids(&ids, 0, 3, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DatasetConfig::default().validate().is_ok());
        assert!(DatasetConfig { n: 0, ..tiny(1) }.validate().is_err());
        assert!(DatasetConfig { n_lat: 1, ..tiny(1) }.validate().is_err());
        assert!(DatasetConfig { frequency: -1.0, ..tiny(1) }.validate().is_err());
        assert!(DatasetConfig { split_ratio: [9, 0], ..tiny(1) }.validate().is_err());
    }

    #[test]
    fn generation_round_trip_and_worker_independence() {
        let cfg = tiny(4);
        let d1 = tempfile::tempdir().unwrap();
        let d4 = tempfile::tempdir().unwrap();
        let m1 = par::with_workers(Some(1), || generate_dataset(&cfg, d1.path())).unwrap();
        let m4 = par::with_workers(Some(4), || generate_dataset(&cfg, d4.path())).unwrap();
        assert_eq!(m1, m4);
        for f in [MANIFEST_FILE, CLOUDS_FILE, FIELDS_FILE] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d4.path().join(f)).unwrap());
        }
        let ds = Dataset::open(d1.path()).unwrap();
        assert_eq!(ds.len(), 4);
        for s in ds.samples() {
            assert_eq!(s.cloud.len(), 16);
            assert_eq!(s.field.len(), 45);
            assert!(s.field.iter().all(|&v| v >= 0.0 && v.is_finite()));
            let (cloud, ff) = generate_sample(&cfg, s.id).unwrap();
            let as32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect::<Vec<_>>();
            assert_eq!(s.cloud.to_flat(), as32(cloud.to_flat()));
            assert_eq!(s.field, as32(ff.magnitudes()));
        }
        assert!(matches!(ds.get(99), Err(DatasetError::UnknownId(99))));
    }

    #[test]
    fn corrupted_files_rejected() {
        let cfg = tiny(2);
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, dir.path()).unwrap();
        let path = dir.path().join(FIELDS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 1;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(Dataset::open(dir.path()), Err(DatasetError::Manifest(_))));
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(Dataset::open(dir.path()), Err(DatasetError::Manifest(_))));
    }
}

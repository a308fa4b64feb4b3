//! Parameter checkpoints: an 8-byte little-endian header length, a JSON
//! header (names, shapes, step, free-form metadata), then every tensor's
//! values as little-endian f64 in header order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::optim::ParamSet;
use super::tensor::Tensor;
use crate::error::CheckpointError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub step: u64,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub const CHECKPOINT_FORMAT: &str = "phaseless-params-v1";

pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &ParamSet,
    step: u64,
    metadata: serde_json::Value,
) -> Result<(), CheckpointError> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        names: params.names.clone(),
        shapes: params.tensors.iter().map(|t| t.shape().to_vec()).collect(),
        step,
        metadata,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(params.num_values() * 8);
    for t in &params.tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, ParamSet), CheckpointError> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(CheckpointError::Header(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Header(format!("unknown format `{}`", header.format)));
    }
    if header.names.len() != header.shapes.len() {
        return Err(CheckpointError::Header("names and shapes differ in length".into()));
    }
    let mut params = ParamSet::new();
    for (name, shape) in header.names.iter().zip(&header.shapes) {
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape.clone(), data).map_err(|e| CheckpointError::Header(e.to_string()))?;
        params.push(name.clone(), t);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Header("trailing bytes after tensor data".into()));
    }
    Ok((header, params))
}

/// Copies checkpoint values into `target`, requiring identical names and shapes.
pub fn load_into(target: &mut ParamSet, loaded: ParamSet) -> Result<(), CheckpointError> {
    if target.names != loaded.names {
        return Err(CheckpointError::Mismatch(format!(
            "expected parameters {:?}, found {:?}",
            target.names, loaded.names
        )));
    }
    for (k, (t, l)) in target.tensors.iter().zip(&loaded.tensors).enumerate() {
        if t.shape() != l.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "`{}`: expected shape {:?}, found {:?}",
                target.names[k],
                t.shape(),
                l.shape()
            )));
        }
    }
    target.tensors = loaded.tensors;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.push("enc.w0", Tensor::new(vec![2, 3], vec![0.1, -2.5, 3.0, 1e-300, f64::MIN_POSITIVE, 7.0]).unwrap());
        p.push("enc.b0", Tensor::from_vec(vec![0.0, -0.0, 1.0]));
        p
    }

    #[test]
    fn roundtrip_bytes_identical() {
        let p = sample();
        let mut a = Vec::new();
        write_checkpoint(&mut a, &p, 42, serde_json::json!({"kind": "vae"})).unwrap();
        let (h, q) = read_checkpoint(&a[..]).unwrap();
        assert_eq!(h.step, 42);
        assert_eq!(q, p);
        let mut b = Vec::new();
        write_checkpoint(&mut b, &q, h.step, h.metadata).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_and_mismatched_rejected() {
        let p = sample();
        let mut a = Vec::new();
        write_checkpoint(&mut a, &p, 0, serde_json::Value::Null).unwrap();
        assert!(read_checkpoint(&a[..a.len() - 1]).is_err());
        let mut extra = a.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..]).is_err());

        let (_, loaded) = read_checkpoint(&a[..]).unwrap();
        let mut other = ParamSet::new();
        other.push("enc.w0", Tensor::zeros(&[3, 2]));
        other.push("enc.b0", Tensor::zeros(&[3]));
        assert!(matches!(load_into(&mut other, loaded), Err(CheckpointError::Mismatch(_))));
    }
}

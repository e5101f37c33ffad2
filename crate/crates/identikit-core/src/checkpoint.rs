//! Checkpoint archive: a single file holding every named tensor plus a JSON
//! manifest.
//!
//! Layout:
//!   bytes 0..8     magic "IDKTCKP1"
//!   bytes 8..16    u64 LE, JSON header length N
//!   bytes 16..16+N header: {version, dtype, tensors: [{name, rows, cols,
//!                  offset}], manifest}
//!   rest           tensor data, raw little-endian scalars, row-major,
//!                  at the stated offsets relative to the data section
//!
//! Tensor bytes are written verbatim from memory, so a save/load round trip
//! is bit-exact. The file's SHA-256 is the checkpoint hash used for
//! provenance chaining between training stages.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"IDKTCKP1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    tensors: Vec<TensorEntry>,
    manifest: Manifest,
}

/// Provenance and configuration snapshot stored inside every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Which training produced this ("mtd", "flow", "probe", "pose").
    pub kind: String,
    /// Optimization steps completed.
    pub step: usize,
    /// Data-order seed of the run.
    pub seed: u64,
    /// Hash of the training config with the seed field zeroed; isolates
    /// data-order changes from configuration changes.
    pub config_hash: String,
    /// Full training config as JSON.
    pub train_config: serde_json::Value,
    /// Model architecture config as JSON.
    pub model_config: serde_json::Value,
    /// Hash of the checkpoint this run warm-started from, if any.
    pub init_checkpoint_hash: Option<String>,
    /// Optimizer contract: decoupled weight decay, constant lr.
    pub optimizer: OptimizerInfo,
    /// Recorded resolution of unstated details (e.g. loss normalization).
    pub notes: IndexMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub name: String,
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
}

/// Everything a checkpoint holds once parsed.
pub struct Checkpoint<F: Scalar> {
    pub params: Params<F>,
    pub opt_state: IndexMap<String, Array2<F>>,
    pub manifest: Manifest,
}

pub fn save<F: Scalar>(
    path: &Path,
    params: &Params<F>,
    opt_state: &IndexMap<String, Array2<F>>,
    manifest: &Manifest,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let mut push = |name: &str, arr: &Array2<F>| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            rows: arr.dim().0,
            cols: arr.dim().1,
            offset: data.len(),
        });
        for &v in arr.iter() {
            v.write_le(&mut data);
        }
    };
    for (name, arr) in params.iter() {
        push(name, arr);
    }
    for (name, arr) in opt_state {
        push(name, arr);
    }

    let header = Header {
        version: VERSION,
        dtype: F::DTYPE.to_string(),
        tensors,
        manifest: manifest.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(16 + header_json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&data);
    fs::write(path, out)?;
    Ok(())
}

pub fn load<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint archive",
            path.display()
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    if header.dtype != F::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint dtype {} does not match requested {}",
            header.dtype,
            F::DTYPE
        )));
    }
    let data = &bytes[16 + hlen..];

    let mut params = Params::new();
    let mut opt_state = IndexMap::new();
    for entry in &header.tensors {
        let count = entry.rows * entry.cols;
        let start = entry.offset;
        let end = start + count * F::BYTES;
        if end > data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} overruns archive",
                entry.name
            )));
        }
        let mut arr = Array2::zeros((entry.rows, entry.cols));
        for (i, slot) in arr.iter_mut().enumerate() {
            *slot = F::read_le(&data[start + i * F::BYTES..]);
        }
        if entry.name.starts_with("opt.") {
            opt_state.insert(entry.name.clone(), arr);
        } else {
            params.insert(&entry.name, arr);
        }
    }

    Ok(Checkpoint {
        params,
        opt_state,
        manifest: header.manifest,
    })
}

/// SHA-256 of the file bytes, hex-encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_string(&hasher.finalize()))
}

/// SHA-256 of a JSON value in its canonical serde rendering.
pub fn json_hash(value: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(value.to_string().as_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn manifest() -> Manifest {
        Manifest {
            kind: "mtd".into(),
            step: 3,
            seed: 7,
            config_hash: "abc".into(),
            train_config: serde_json::json!({"steps": 3}),
            model_config: serde_json::json!({"channels": 8}),
            init_checkpoint_hash: None,
            optimizer: OptimizerInfo {
                name: "adamw".into(),
                lr: 1e-4,
                betas: (0.9, 0.999),
                weight_decay: 0.01,
            },
            notes: IndexMap::new(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");

        let mut params: Params<f32> = Params::new();
        params.insert("a.w", array![[0.1f32, -0.7], [3.3, 4.4]]);
        params.insert("b", array![[f32::MIN_POSITIVE, 1e30]]);
        let mut opt = IndexMap::new();
        opt.insert("opt.m.a.w".to_string(), array![[0.5f32, 0.25], [0.0, -0.0]]);

        save(&path, &params, &opt, &manifest()).unwrap();
        let loaded: Checkpoint<f32> = load(&path).unwrap();

        for (name, arr) in params.iter() {
            let got = loaded.params.get(name);
            for (a, b) in arr.iter().zip(got.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        let m = &loaded.opt_state["opt.m.a.w"];
        assert_eq!(m[(1, 1)].to_bits(), (-0.0f32).to_bits());
        assert_eq!(loaded.manifest.kind, "mtd");
        assert_eq!(loaded.manifest.step, 3);
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut params: Params<f32> = Params::new();
        params.insert("w", array![[1.0f32]]);
        save(&path, &params, &IndexMap::new(), &manifest()).unwrap();
        assert!(load::<f64>(&path).is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let mut params: Params<f32> = Params::new();
        params.insert("w", array![[1.0f32]]);
        save(&p1, &params, &IndexMap::new(), &manifest()).unwrap();
        let mut params2: Params<f32> = Params::new();
        params2.insert("w", array![[2.0f32]]);
        save(&p2, &params2, &IndexMap::new(), &manifest()).unwrap();
        assert_ne!(file_hash(&p1).unwrap(), file_hash(&p2).unwrap());
    }
}

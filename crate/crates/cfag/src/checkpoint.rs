//! Binary parameter checkpoints.
//!
//! Layout: magic `CFAGCKPT`, format version (u32 LE), tensor count (u32 LE),
//! then per tensor: name length (u32 LE) + UTF-8 name, rows (u64 LE),
//! cols (u64 LE), row-major little-endian f64 payload. A JSON sidecar at
//! `<path>.json` records the hyperparameters and graph sizes.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelParams};
use crate::numeric::DenseMatrix;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"CFAGCKPT";
const VERSION: u32 = 1;

/// Sidecar metadata stored next to the binary payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub hyperparams: HyperParams,
    pub n_users: usize,
    pub n_groups: usize,
    pub n_items: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

/// Write the model and its sidecar. Non-finite parameters are rejected.
pub fn save_model<T: Scalar>(
    path: impl AsRef<Path>,
    params: &ModelParams<T>,
    hp: &HyperParams,
) -> Result<()> {
    let path = path.as_ref();
    params.check_finite()?;
    let tensors = params.named_tensors();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            buf.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
        }
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))?;

    let meta = CheckpointMeta {
        hyperparams: hp.clone(),
        n_users: params.n_users(),
        n_groups: params.n_groups(),
        n_items: params.n_items(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Checkpoint(format!("sidecar serialization: {e}")))?;
    fs::write(&side, json).map_err(|e| Error::io(side, e))
}

/// Read the raw named tensors of a checkpoint.
pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, DenseMatrix<f64>)>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rows = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let payload = take(&mut pos, rows * cols * 8)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = DenseMatrix::from_vec(rows, cols, data);
        m.check_finite(&name)?;
        tensors.push((name, m));
    }
    Ok(tensors)
}

/// Load a full model: sidecar hyperparameters plus the binary tensors.
pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelParams<f64>, CheckpointMeta)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let meta: CheckpointMeta = serde_json::from_str(
        &fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?,
    )
    .map_err(|e| Error::Checkpoint(format!("sidecar parse: {e}")))?;

    let tensors = read_tensors(path)?;
    // rebuild an empty parameter set of the right structure, then fill it
    let mut params: ModelParams<f64> = ModelParams::init(
        &meta.hyperparams,
        meta.n_users,
        meta.n_groups,
        meta.n_items,
        0,
    )?;
    let expected: Vec<&'static str> = params.named_tensors().iter().map(|(n, _)| *n).collect();
    if tensors.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "tensor count mismatch: checkpoint has {}, model needs {}",
            tensors.len(),
            expected.len()
        )));
    }
    for ((name, value), (expect_name, slot)) in
        tensors.into_iter().zip(params.named_tensors_mut())
    {
        if name != expect_name {
            return Err(Error::Checkpoint(format!(
                "unexpected tensor {name:?} (wanted {expect_name:?})"
            )));
        }
        if value.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: shape {:?} does not match model {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MergeKind, PartitionKind};

    #[test]
    fn roundtrip_preserves_bits() {
        let hp = HyperParams {
            embed_dim: 4,
            partition: PartitionKind::Linear,
            merge: MergeKind::FcAfter,
            ..HyperParams::default()
        };
        let params: ModelParams<f64> = ModelParams::init(&hp, 3, 2, 2, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&path, &params, &hp).unwrap();
        let (loaded, meta) = load_model(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(meta.n_users, 3);
        assert_eq!(meta.hyperparams.partition, PartitionKind::Linear);
    }

    #[test]
    fn non_finite_params_are_rejected_on_save() {
        let hp = HyperParams {
            embed_dim: 4,
            ..HyperParams::default()
        };
        let mut params: ModelParams<f64> = ModelParams::init(&hp, 2, 2, 2, 1).unwrap();
        params.embed.set(0, 0, f64::INFINITY);
        let dir = tempfile::tempdir().unwrap();
        assert!(save_model(dir.path().join("bad.ckpt"), &params, &hp).is_err());
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(read_tensors(&path).is_err());
    }
}

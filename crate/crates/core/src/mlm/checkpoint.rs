//! Single-file checkpoints: an 8-byte little-endian manifest length, a JSON
//! manifest (config, tensor names, shapes, byte offsets), then every tensor
//! as contiguous little-endian f32.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ops::Scalar;
use super::{MlmError, ModelConfig, TransformerParams};

pub const CHECKPOINT_FORMAT: &str = "gamelm-mlm-f32/1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
    bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
}

pub fn save_checkpoint<T: Scalar>(
    params: &TransformerParams<T>,
    path: &Path,
) -> Result<(), MlmError> {
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.to_string(),
        config: *params.config(),
        tensors: params
            .specs()
            .iter()
            .map(|s| TensorEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
                offset: s.offset * 4,
                bytes: s.len() * 4,
            })
            .collect(),
        payload_bytes: params.len() * 4,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| MlmError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + json.len() + manifest.payload_bytes);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in params.data() {
        out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TransformerParams<f32>, MlmError> {
    let bytes = std::fs::read(path)?;
    let bad = |m: &str| MlmError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 8 {
        return Err(bad("file too short"));
    }
    let json_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(8..8usize.saturating_add(json_len))
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| bad(&format!("manifest: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(bad(&format!("unsupported format {:?}", manifest.format)));
    }
    let payload = &bytes[8 + json_len..];
    if payload.len() != manifest.payload_bytes {
        return Err(bad("payload length differs from the manifest"));
    }
    let mut params = TransformerParams::<f32>::zeros(manifest.config)?;
    if params.specs().len() != manifest.tensors.len() {
        return Err(bad("tensor list does not match the config"));
    }
    let specs = params.specs().to_vec();
    for (spec, entry) in specs.iter().zip(&manifest.tensors) {
        if spec.name != entry.name || spec.shape != entry.shape || entry.bytes != spec.len() * 4 {
            return Err(bad(&format!(
                "tensor {:?} does not match the config",
                entry.name
            )));
        }
        let raw = payload
            .get(entry.offset..entry.offset + entry.bytes)
            .ok_or_else(|| bad("tensor outside payload"))?;
        let dst = &mut params.data_mut()[spec.range()];
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if !params.all_finite() {
        return Err(bad("non-finite weights"));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::{forward, init_params};
    use crate::seed::rng_from_seed;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params: TransformerParams<f32> =
            init_params(ModelConfig::tiny(25, 10), &mut rng_from_seed(8)).unwrap();
        save_checkpoint(&params, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, params);
        let seq = vec![vec![2, 6, 7, 4, 3]];
        let a = forward(&params, &seq, None).unwrap();
        let b = forward(&back, &seq, None).unwrap();
        assert_eq!(
            a[0].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b[0].iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params: TransformerParams<f32> =
            init_params(ModelConfig::tiny(25, 10), &mut rng_from_seed(8)).unwrap();
        save_checkpoint(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::write(&path, b"short").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}

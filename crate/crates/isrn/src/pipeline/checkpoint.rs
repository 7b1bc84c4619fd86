//! Checkpoint file format: one line of JSON (format version, model config,
//! training counters, and a table of named tensor entries with byte
//! offsets), a newline, then the raw little-endian 32-bit tensor blobs
//! back-to-back. Values round-trip bit-exactly and the text header keeps
//! files inspectable with `head -1`.
//!
//! The tensor table holds every model parameter under its hierarchical path
//! plus, when saved mid-training, the optimizer's first/second moments under
//! `optim.m.<path>` / `optim.v.<path>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{IsrnModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const MAGIC: &str = "isrn.ckpt";
const VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct Entry {
    path: String,
    shape: [usize; 4],
    /// Byte offset into the blob section (starts right after the header
    /// newline).
    offset: u64,
    /// Byte length; must equal `4 · product(shape)`.
    len: u64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    magic: String,
    version: u32,
    config: ModelConfig,
    epoch: u64,
    seed: u64,
    adam_step: u64,
    entries: Vec<Entry>,
}

/// A saved training (or inference) state: architecture config, counters and
/// all named tensors.
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Completed epochs; resuming starts at this epoch index.
    pub epoch: u64,
    /// Master RNG seed of the run; per-epoch streams derive from it, so an
    /// epoch-boundary resume is exact.
    pub seed: u64,
    /// Optimizer step counter (bias correction depends on it).
    pub adam_step: u64,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let s = t.shape();
            let len = (t.numel() * 4) as u64;
            entries.push(Entry {
                path: name.clone(),
                shape: [s.n, s.c, s.h, s.w],
                offset,
                len,
            });
            offset += len;
        }
        let header = Header {
            magic: MAGIC.into(),
            version: VERSION,
            config: self.config,
            epoch: self.epoch,
            seed: self.seed,
            adam_step: self.adam_step,
            entries,
        };
        let mut bytes = serde_json::to_string(&header)?.into_bytes();
        bytes.push(b'\n');
        bytes.reserve(offset as usize);
        for t in self.tensors.values() {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(Error::io(dir))?;
            }
        }
        fs::write(path, bytes).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::CheckpointIntegrity("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::CheckpointIntegrity(format!("unreadable header: {e}")))?;
        if header.magic != MAGIC {
            return Err(Error::CheckpointIntegrity(format!(
                "bad magic '{}'",
                header.magic
            )));
        }
        if header.version != VERSION {
            return Err(Error::CheckpointIntegrity(format!(
                "format version {} (this build reads {VERSION})",
                header.version
            )));
        }
        let blobs = &bytes[newline + 1..];
        let mut tensors = BTreeMap::new();
        let mut expected_len = 0u64;
        for e in &header.entries {
            let [n, c, h, w] = e.shape;
            let shape = Shape::new(n, c, h, w);
            if e.len != (shape.numel() * 4) as u64 {
                return Err(Error::CheckpointIntegrity(format!(
                    "entry '{}': blob length {} does not match shape {shape}",
                    e.path, e.len
                )));
            }
            let (start, end) = (e.offset as usize, (e.offset + e.len) as usize);
            if end > blobs.len() {
                return Err(Error::CheckpointIntegrity(format!(
                    "entry '{}': file truncated ({} blob bytes, need {end})",
                    e.path,
                    blobs.len()
                )));
            }
            let data: Vec<f32> = blobs[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if tensors.insert(e.path.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(Error::CheckpointIntegrity(format!(
                    "duplicate entry '{}'",
                    e.path
                )));
            }
            expected_len = expected_len.max(e.offset + e.len);
        }
        if blobs.len() as u64 != expected_len {
            return Err(Error::CheckpointIntegrity(format!(
                "{} trailing blob bytes",
                blobs.len() as u64 - expected_len
            )));
        }
        Ok(Checkpoint {
            config: header.config,
            epoch: header.epoch,
            seed: header.seed,
            adam_step: header.adam_step,
            tensors,
        })
    }
}

impl IsrnModel<f32> {
    /// Snapshot every parameter (plus any extra named tensors, e.g.
    /// optimizer moments) into a checkpoint.
    pub fn to_checkpoint(
        &self,
        epoch: u64,
        seed: u64,
        adam_step: u64,
        extra: BTreeMap<String, Tensor<f32>>,
    ) -> Checkpoint {
        let mut tensors = extra;
        for p in self.params() {
            tensors.insert(p.path().to_string(), p.value());
        }
        Checkpoint {
            config: *self.config(),
            epoch,
            seed,
            adam_step,
            tensors,
        }
    }

    /// Overwrite this model's parameters from a checkpoint. The checkpoint
    /// must carry the identical config and every parameter path; nothing is
    /// written until all lookups succeed.
    pub fn apply_checkpoint(&self, ckpt: &Checkpoint) -> Result<()> {
        if *self.config() != ckpt.config {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint built for {:?}, model is {:?}",
                ckpt.config,
                self.config()
            )));
        }
        let params = self.params();
        let mut pending = Vec::with_capacity(params.len());
        for p in &params {
            let t = ckpt.tensors.get(p.path()).ok_or_else(|| {
                Error::CheckpointIntegrity(format!("missing parameter '{}'", p.path()))
            })?;
            pending.push((p, t));
        }
        for (p, t) in pending {
            p.set_value(t.clone())?;
        }
        Ok(())
    }

    /// Build a model directly from a checkpoint's config and parameters.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<IsrnModel<f32>> {
        // Initialization is immediately overwritten, so any seed works.
        let model = IsrnModel::new(ckpt.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        model.apply_checkpoint(ckpt)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn toy_model() -> IsrnModel<f32> {
        let cfg = ModelConfig::toy(2, 2);
        IsrnModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    #[test]
    fn round_trip_restores_bit_identical_state_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = toy_model();
        let lr = Tensor::from_fn(Shape::new(1, 3, 6, 6), |_, c, y, x| {
            ((13 * ((y * 6 + x) * 3 + c) + 5) % 71) as f32 / 70.0
        });
        let (before, _) = model.forward_infer(&lr).unwrap();

        let mut extra = BTreeMap::new();
        extra.insert(
            "optim.m.solver_sr.head.weight".to_string(),
            Tensor::full(Shape::new(1, 1, 1, 3), 0.5f32),
        );
        model.to_checkpoint(7, 42, 1300, extra).save(&path).unwrap();

        let ckpt = Checkpoint::load(&path).unwrap();
        assert_eq!((ckpt.epoch, ckpt.seed, ckpt.adam_step), (7, 42, 1300));
        assert_eq!(
            ckpt.tensors["optim.m.solver_sr.head.weight"].data(),
            &[0.5, 0.5, 0.5]
        );
        let restored = IsrnModel::from_checkpoint(&ckpt).unwrap();
        for (a, b) in model.params().iter().zip(restored.params()) {
            assert_eq!(a.path(), b.path());
            assert_eq!(a.value().data(), b.value().data(), "{}", a.path());
        }
        let (after, _) = restored.forward_infer(&lr).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn config_mismatch_is_rejected_without_partial_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        toy_model()
            .to_checkpoint(0, 0, 0, BTreeMap::new())
            .save(&path)
            .unwrap();
        let ckpt = Checkpoint::load(&path).unwrap();

        let other = IsrnModel::new(ModelConfig::toy(2, 3), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let snapshot: Vec<_> = other.params().iter().map(|p| p.value()).collect();
        assert!(matches!(
            other.apply_checkpoint(&ckpt),
            Err(Error::ConfigMismatch(_))
        ));
        for (p, s) in other.params().iter().zip(&snapshot) {
            assert_eq!(p.value().data(), s.data(), "parameter mutated on failed load");
        }
    }

    #[test]
    fn missing_parameter_is_an_integrity_error_without_partial_load() {
        let model = toy_model();
        let mut ckpt = model.to_checkpoint(0, 0, 0, BTreeMap::new());
        let victim = model.params()[3].path().to_string();
        ckpt.tensors.remove(&victim);
        let snapshot: Vec<_> = model.params().iter().map(|p| p.value()).collect();
        assert!(matches!(
            model.apply_checkpoint(&ckpt),
            Err(Error::CheckpointIntegrity(_))
        ));
        for (p, s) in model.params().iter().zip(&snapshot) {
            assert_eq!(p.value().data(), s.data());
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        toy_model()
            .to_checkpoint(0, 0, 0, BTreeMap::new())
            .save(&path)
            .unwrap();
        let bytes = fs::read(&path).unwrap();

        // Truncated blob section.
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::CheckpointIntegrity(_))
        ));

        // Trailing garbage.
        let mut padded = bytes.clone();
        padded.extend_from_slice(b"????");
        fs::write(&path, &padded).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::CheckpointIntegrity(_))
        ));

        // Broken header magic.
        let mut broken = bytes.clone();
        let pos = broken.windows(9).position(|w| w == b"isrn.ckpt").unwrap();
        broken[pos] = b'x';
        fs::write(&path, &broken).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::CheckpointIntegrity(_))
        ));

        // No newline at all.
        fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::CheckpointIntegrity(_))
        ));
    }
}

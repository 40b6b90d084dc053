//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "GAINCKPT"  u32 version
//! u64 header length, header bytes (canonical JSON: model config, vocabulary, stage, seed)
//! u32 entry count, then per entry:
//!     u32 name length, name bytes (UTF-8), u32 ndims, ndims × u64 dims, u64 byte offset
//! u64 data length, data (f64 values, entry after entry)
//! ```
//!
//! Optimizer moments are not stored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GainError, Result};
use crate::model::{ModelBundle, ModelConfig, Stage, Vocab};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GAINCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab: Vocab,
    stage: Stage,
    seed: u64,
}

pub fn checkpoint_to_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let header = Header {
        model: bundle.config.clone(),
        vocab: bundle.encoder.vocab.clone(),
        stage: bundle.stage,
        seed: bundle.seed,
    };
    let json = serde_json::to_vec(&header).map_err(|e| GainError::Data(format!("checkpoint header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);

    let mut data = Vec::with_capacity(bundle.params.num_values() * 8);
    out.extend_from_slice(&(bundle.params.len() as u32).to_le_bytes());
    for (_, p) in bundle.params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in p.value.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(&data);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            GainError::Data(format!("checkpoint truncated while reading {what} at byte {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| GainError::Data(format!("{what} does not fit in memory")))
    }
}

/// Parses a checkpoint. Nothing is returned unless every byte checks out.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(GainError::Data("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(GainError::Data(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = r.len("header length")?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| GainError::Data(format!("checkpoint header: {e}")))?;

    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| GainError::Data("parameter name is not UTF-8".into()))?
            .to_string();
        let ndims = r.u32("rank")? as usize;
        if ndims > 2 {
            return Err(GainError::Data(format!("{name}: rank {ndims} is not supported")));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.len("dimension")?);
        }
        let offset = r.len("offset")?;
        entries.push((name, dims, offset));
    }
    let data_len = r.len("data length")?;
    let data = r.take(data_len, "parameter data")?;
    if r.at != bytes.len() {
        return Err(GainError::Data(format!("{} trailing bytes after checkpoint", bytes.len() - r.at)));
    }

    let mut bundle = ModelBundle::new(header.model, header.vocab, header.seed)
        .map_err(|e| GainError::Data(format!("checkpoint config: {e}")))?;
    if entries.len() != bundle.params.len() {
        return Err(GainError::Data(format!(
            "checkpoint has {} parameters, model expects {}",
            entries.len(),
            bundle.params.len()
        )));
    }
    for (name, dims, offset) in entries {
        let id = bundle
            .params
            .id(&name)
            .ok_or_else(|| GainError::Data(format!("unexpected parameter {name}")))?;
        let n: usize = dims.iter().product();
        let end = n
            .checked_mul(8)
            .and_then(|b| b.checked_add(offset))
            .filter(|&e| e <= data.len())
            .ok_or_else(|| GainError::Data(format!("{name}: data out of range")))?;
        let values = data[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Tensor::new(dims, values)?;
        let p = bundle.params.get_mut(id);
        if !p.value.same_shape(&value) {
            return Err(GainError::Data(format!("{name}: shape {:?} does not match model {:?}", value.shape(), p.value.shape())));
        }
        p.value = value;
    }
    bundle.stage = header.stage;
    Ok(bundle)
}

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(bundle)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
    checkpoint_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, Sentence};
    use crate::model::{ClassifierKind, IntegrationMode};

    fn bundle() -> ModelBundle {
        let data = Dataset::new("v", vec![Sentence::untagged(vec!["a".into(), "b".into()])]);
        let cfg = ModelConfig {
            embed_dim: 3,
            hidden: 4,
            gaz_hidden: 2,
            classifier: ClassifierKind::Crf,
            integration: IntegrationMode::WeightedSum,
            ..ModelConfig::default()
        };
        let mut b = ModelBundle::new(cfg, Vocab::build([&data], 1), 9).unwrap();
        // Values a fresh init would not reproduce.
        for (i, p) in b.params.iter_mut().enumerate() {
            for (j, v) in p.value.data_mut().iter_mut().enumerate() {
                *v = (i as f64 + 1.0).sqrt() * (j as f64 - 0.3).sin();
            }
        }
        b.stage = Stage::Adapted;
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let b = bundle();
        let bytes = checkpoint_to_bytes(&b).unwrap();
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back.params.snapshot(), b.params.snapshot());
        assert_eq!(back.stage, Stage::Adapted);
        assert_eq!(back.seed, 9);
        assert_eq!(back.config, b.config);
        assert_eq!(checkpoint_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_version_are_data_errors() {
        let bytes = checkpoint_to_bytes(&bundle()).unwrap();
        for cut in [0, 7, 12, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(checkpoint_from_bytes(&bytes[..cut]), Err(GainError::Data(_))), "cut {cut}");
        }
        let mut v2 = bytes.clone();
        v2[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = checkpoint_from_bytes(&v2).unwrap_err().to_string();
        assert!(err.contains('7') && err.contains('1'), "{err}");
        let mut extra = bytes;
        extra.push(0);
        assert!(checkpoint_from_bytes(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let b = bundle();
        save_checkpoint(&b, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().params.snapshot(), b.params.snapshot());
        assert!(matches!(load_checkpoint(dir.path().join("missing")), Err(GainError::Io(_))));
    }
}

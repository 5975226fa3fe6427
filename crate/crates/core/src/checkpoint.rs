//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "BSCK" | version u32 | header_len u64 | JSON header | f64 payload | sha256
//! ```
//!
//! The header records the model config, the vocabulary hash and each
//! parameter's name and shape; the payload holds the parameter values in that
//! order. The trailing digest covers every preceding byte.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::LabelVocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"BSCK";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: Option<String>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

/// A loaded model plus the hash of the vocabulary it was trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab_hash: Option<String>,
}

impl Checkpoint {
    /// Fails when the head width or the stored vocabulary hash disagree with `vocab`.
    pub fn check_vocab(&self, vocab: &LabelVocabulary) -> Result<()> {
        if self.model.num_outputs() != vocab.len() {
            return Err(Error::config(format!(
                "checkpoint head has {} outputs but the vocabulary has {} labels",
                self.model.num_outputs(),
                vocab.len()
            )));
        }
        match &self.vocab_hash {
            Some(h) if *h != vocab.content_hash() => Err(Error::Checkpoint(
                "checkpoint was trained against a different label vocabulary".into(),
            )),
            _ => Ok(()),
        }
    }
}

pub fn checkpoint_bytes(model: &Model, vocab: Option<&LabelVocabulary>) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config().clone(),
        vocab_hash: vocab.map(LabelVocabulary::content_hash),
        params: model
            .params()
            .iter()
            .map(|p| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.param_count() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_owned());
    if bytes.len() < 16 + DIGEST_LEN {
        return Err(bad("file is truncated"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(16))
        .filter(|&end| end <= body.len())
        .ok_or_else(|| bad("file is truncated"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let payload = &body[header_end..];
    if payload.len() != 8 * expected {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, header describes {} values (truncated or corrupt)",
            payload.len(),
            expected
        )));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch: file is corrupt"));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut parts = Vec::with_capacity(header.params.len());
    for entry in header.params {
        let n = entry.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        let t = Tensor::new(entry.shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        parts.push((entry.name, t));
    }
    Ok(Checkpoint { model: Model::from_parts(header.config, parts)?, vocab_hash: header.vocab_hash })
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
pub fn save_checkpoint(model: &Model, vocab: Option<&LabelVocabulary>, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model, vocab)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&fs::read(path)?)
}

/// Loads stored weights as a backbone and attaches a fresh head with `k` outputs.
pub fn load_backbone(path: &Path, k: usize, rng: &mut impl Rng) -> Result<Model> {
    load_checkpoint(path)?.model.replace_head(k, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn model() -> Model {
        Model::build(ModelConfig::desk(3), &mut seeded(5)).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let vocab = LabelVocabulary::from_names(&["a", "b", "c"]).unwrap();
        let ck = parse_checkpoint(&checkpoint_bytes(&m, Some(&vocab)).unwrap()).unwrap();
        assert_eq!(ck.model, m);
        ck.check_vocab(&vocab).unwrap();
    }

    #[test]
    fn vocabulary_guards() {
        let m = model();
        let vocab = LabelVocabulary::from_names(&["a", "b", "c"]).unwrap();
        let ck = parse_checkpoint(&checkpoint_bytes(&m, Some(&vocab)).unwrap()).unwrap();
        let four = LabelVocabulary::from_names(&["a", "b", "c", "d"]).unwrap();
        assert!(matches!(ck.check_vocab(&four), Err(Error::Config(_))));
        let renamed = LabelVocabulary::from_names(&["a", "b", "x"]).unwrap();
        assert!(matches!(ck.check_vocab(&renamed), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corruption_and_truncation_are_detected() {
        let bytes = checkpoint_bytes(&model(), None).unwrap();
        let mut flipped = bytes.clone();
        let i = bytes.len() - DIGEST_LEN - 20;
        flipped[i] ^= 0x01;
        match parse_checkpoint(&flipped) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("checksum")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_checkpoint(&bytes[..bytes.len() - 9]), Err(Error::Checkpoint(_))));
        assert!(matches!(parse_checkpoint(&bytes[..10]), Err(Error::Checkpoint(_))));
        let mut versioned = bytes;
        versioned[4] = 9;
        match parse_checkpoint(&versioned) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn backbone_hook_swaps_head() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, None, &path).unwrap();
        let b = load_backbone(&path, 7, &mut seeded(1)).unwrap();
        assert_eq!(b.num_outputs(), 7);
        let n = m.params().len() - 2;
        assert_eq!(&b.params()[..n], &m.params()[..n]);
    }
}

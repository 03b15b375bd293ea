//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "TSLMCKPT"
//! version    u32 LE
//! header     u64 LE length + canonical JSON (config, seed, epoch, step,
//!            optimizer step counter, RNG state)
//! records    u32 LE count, then per record:
//!              u16 LE name length + UTF-8 name
//!              u8 rank + rank x u32 LE extents
//!              values as f64 LE
//! trailer    u32 LE CRC32 of every preceding byte
//! ```
//!
//! Parameters are written in canonical layout order; Adam moments follow
//! as `adam.m.<name>` / `adam.v.<name>`. A file with a header and zero
//! records is a config-only checkpoint and loads as a fresh
//! initialization from the recorded seed.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::optim::AdamState;
use super::{LmConfig, Transformer};
use crate::rng::{sha256_hex, substream};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"TSLMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, CheckpointError> {
        use rand::SeedableRng;
        let bytes = hex::decode(&self.seed).map_err(|e| CheckpointError::Malformed(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CheckpointError::Malformed("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| CheckpointError::Malformed(format!("rng word_pos: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: LmConfig,
    seed: u64,
    epoch: usize,
    step: u64,
    adam_t: Option<u64>,
    rng: Option<RngState>,
}

/// Full training state of a language model at one point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct LmCheckpoint<S> {
    pub model: Transformer<S>,
    pub adam: Option<AdamState<S>>,
    pub rng: Option<RngState>,
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
}

impl<S: Scalar> LmCheckpoint<S> {
    /// Fresh initialization from the `init` substream of `seed`.
    pub fn init(config: LmConfig, seed: u64) -> Result<Self, super::ModelError> {
        let model = Transformer::init(config, &mut substream(seed, "init"))?;
        Ok(Self {
            model,
            adam: None,
            rng: None,
            seed,
            epoch: 0,
            step: 0,
        })
    }

    pub fn config(&self) -> &LmConfig {
        self.model.config()
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    fn header(&self) -> Header {
        Header {
            config: self.model.config().clone(),
            seed: self.seed,
            epoch: self.epoch,
            step: self.step,
            adam_t: self.adam.as_ref().map(|a| a.t),
            rng: self.rng.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.header(), Some(self))
    }

    /// Header-only encoding: loads back as a fresh initialization.
    pub fn config_only_bytes(config: &LmConfig, seed: u64) -> Vec<u8> {
        let header = Header {
            config: config.clone(),
            seed,
            epoch: 0,
            step: 0,
            adam_t: None,
            rng: None,
        };
        encode::<S>(&header, None)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
        let n = r.u32()? as usize;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| CheckpointError::Malformed("record name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut count = 1usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u32()? as usize;
                shape.push(d);
                count = count.saturating_mul(d);
            }
            let raw = r.take(count.saturating_mul(8))?;
            let values: Vec<S> = raw.chunks(8).map(|c| S::of(f64::read_le(c))).collect();
            records.push((name, shape, values));
        }
        let body_end = r.pos;
        let rest = &bytes[body_end..];
        if rest.len() < 4 {
            return Err(CheckpointError::Truncated);
        }
        if rest.len() > 4 {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", rest.len() - 4)));
        }
        let stored = u32::from_le_bytes(rest.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed });
        }
        build(header, records)
    }
}

fn encode<S: Scalar>(header: &Header, ckpt: Option<&LmCheckpoint<S>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(header).expect("header serializes");
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut records: Vec<(String, &[usize], &[S])> = Vec::new();
    if let Some(c) = ckpt {
        let layout = c.model.layout();
        for e in layout.entries() {
            records.push((e.name.clone(), &e.shape, &c.model.params()[e.range()]));
        }
        if let Some(adam) = &c.adam {
            for (prefix, data) in [("adam.m.", &adam.m), ("adam.v.", &adam.v)] {
                for e in layout.entries() {
                    records.push((format!("{prefix}{}", e.name), &e.shape, &data[e.range()]));
                }
            }
        }
    }
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, shape, values) in records {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in values {
            v.to_f64_lossy().write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

type Record<S> = (String, Vec<usize>, Vec<S>);

fn build<S: Scalar>(header: Header, records: Vec<Record<S>>) -> Result<LmCheckpoint<S>, CheckpointError> {
    let malformed = |m: String| CheckpointError::Malformed(m);
    header.config.validate().map_err(|e| malformed(e.to_string()))?;
    if records.is_empty() {
        let mut c = LmCheckpoint::init(header.config, header.seed).map_err(|e| malformed(e.to_string()))?;
        c.epoch = header.epoch;
        c.step = header.step;
        c.rng = header.rng;
        return Ok(c);
    }
    let layout = super::ParamLayout::for_config(&header.config);
    let n_entries = layout.entries().len();
    let expect = if header.adam_t.is_some() { 3 * n_entries } else { n_entries };
    if records.len() != expect {
        return Err(malformed(format!("expected {expect} records, found {}", records.len())));
    }
    let mut flat: [Vec<S>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, (name, shape, values)) in records.into_iter().enumerate() {
        let e = &layout.entries()[i % n_entries];
        let prefix = ["", "adam.m.", "adam.v."][i / n_entries];
        if name != format!("{prefix}{}", e.name) || shape != e.shape {
            return Err(malformed(format!("unexpected record `{name}` {shape:?}")));
        }
        flat[i / n_entries].extend(values);
    }
    let [params, m, v] = flat;
    let model = Transformer::from_params(header.config, params).map_err(|e| malformed(e.to_string()))?;
    let adam = header.adam_t.map(|t| AdamState { m, v, t });
    Ok(LmCheckpoint {
        model,
        adam,
        rng: header.rng,
        seed: header.seed,
        epoch: header.epoch,
        step: header.step,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn config() -> LmConfig {
        LmConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ffn: 16,
            vocab_size: 10,
            context_length: 6,
            dropout_rate: 0.1,
            tie_embeddings: true,
        }
    }

    fn trained_like() -> LmCheckpoint<f64> {
        let mut c = LmCheckpoint::<f64>::init(config(), 11).unwrap();
        let n = c.model.params().len();
        let mut adam = AdamState::new(n);
        adam.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 1e-3);
        adam.t = 17;
        c.adam = Some(adam);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: u64 = rng.random();
        c.rng = Some(RngState::capture(&rng));
        c.epoch = 3;
        c.step = 99;
        c
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = trained_like();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        c.save(&p).unwrap();
        let back = LmCheckpoint::<f64>::load(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), std::fs::read(&p).unwrap());
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _: [u64; 3] = rng.random();
        let saved = RngState::capture(&rng);
        let next: u64 = rng.random();
        let mut restored = saved.restore().unwrap();
        assert_eq!(restored.random::<u64>(), next);
    }

    #[test]
    fn corrupted_trailer_is_checksum_error() {
        let mut bytes = trained_like().to_bytes();
        let n = bytes.len();
        bytes[n - 1] ^= 0xff;
        assert!(matches!(
            LmCheckpoint::<f64>::from_bytes(&bytes),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));
        let mut bytes = trained_like().to_bytes();
        bytes[n - 10] ^= 0x01;
        assert!(matches!(
            LmCheckpoint::<f64>::from_bytes(&bytes),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn truncation_and_version_errors_are_distinct() {
        let bytes = trained_like().to_bytes();
        assert!(matches!(
            LmCheckpoint::<f64>::from_bytes(&bytes[..bytes.len() - 2]),
            Err(CheckpointError::Truncated)
        ));
        assert!(matches!(
            LmCheckpoint::<f64>::from_bytes(&bytes[..100]),
            Err(CheckpointError::Truncated)
        ));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            LmCheckpoint::<f64>::from_bytes(&v2),
            Err(CheckpointError::VersionMismatch { found: 2, expected: 1 })
        ));
        assert!(matches!(
            LmCheckpoint::<f64>::from_bytes(b"NOTACKPT...."),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn config_only_file_reinitializes_from_seed() {
        let bytes = LmCheckpoint::<f64>::config_only_bytes(&config(), 11);
        let loaded = LmCheckpoint::<f64>::from_bytes(&bytes).unwrap();
        let fresh = LmCheckpoint::<f64>::init(config(), 11).unwrap();
        assert_eq!(loaded.model.params(), fresh.model.params());
        let other = LmCheckpoint::<f64>::init(config(), 12).unwrap();
        assert_ne!(loaded.model.params(), other.model.params());
    }

    #[test]
    fn f32_models_round_trip_through_f64_file() {
        let c = LmCheckpoint::<f32>::init(config(), 3).unwrap();
        let back = LmCheckpoint::<f32>::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.model.params(), c.model.params());
    }
}

//! Versioned binary model file.
//!
//! ```text
//! "NNDWL" version:u8
//! K:u32  dims:(K+1) x u64  bias_flags:K x u8
//! source_vocab_sha256:[u8;32] target_vocab_sha256:[u8;32]
//! max_bigrams:u64 max_trigrams:u64 seed:u64
//! payload: K row-major weight matrices, then the enabled bias vectors (f64 LE)
//! sha256(payload):[u8;32]
//! ```
//! All integers are little-endian.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::NgramConfig;

use super::{Matrix, ModelMetadata, NetworkError, NetworkModel};

pub const MAGIC: &[u8; 5] = b"NNDWL";
pub const FORMAT_VERSION: u8 = 1;

/// Upper bound on K accepted when reading, to reject garbage headers early.
const MAX_LAYERS: u32 = 64;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("not an NNDWL model")]
    BadMagic,
    #[error("unsupported model format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u8),
    #[error("unexpected end of model file at byte {offset}")]
    Truncated { offset: usize },
    #[error("invalid model header at byte {offset}: {message}")]
    InvalidHeader { offset: usize, message: String },
    #[error("payload checksum mismatch")]
    ChecksumMismatch,
    #[error("non-finite value in payload at byte {offset}")]
    NonFinite { offset: usize },
    #[error("{0} trailing bytes after checksum")]
    TrailingBytes(usize),
    #[error(transparent)]
    Shape(#[from] NetworkError),
    #[error("cannot access model file: {0}")]
    Io(#[from] std::io::Error),
}

/// Hashing writer for the payload section.
struct PayloadWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> PayloadWriter<W> {
    fn put_f64s(&mut self, values: &[f64]) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in values.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            self.hasher.update(&buf);
            self.inner.write_all(&buf)?;
        }
        Ok(())
    }
}

impl NetworkModel {
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let meta = self.metadata();
        out.write_all(MAGIC)?;
        out.write_all(&[FORMAT_VERSION])?;
        out.write_all(&(self.depth() as u32).to_le_bytes())?;
        for &d in self.dims() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for b in self.biases() {
            out.write_all(&[b.is_some() as u8])?;
        }
        out.write_all(&meta.source_vocab_hash)?;
        out.write_all(&meta.target_vocab_hash)?;
        out.write_all(&(meta.ngram_config.max_bigrams as u64).to_le_bytes())?;
        out.write_all(&(meta.ngram_config.max_trigrams as u64).to_le_bytes())?;
        out.write_all(&meta.seed.to_le_bytes())?;

        let mut payload = PayloadWriter {
            inner: &mut out,
            hasher: Sha256::new(),
        };
        for w in self.weights() {
            payload.put_f64s(w.as_slice())?;
        }
        for b in self.biases().iter().flatten() {
            payload.put_f64s(b)?;
        }
        let digest = payload.hasher.finalize();
        out.write_all(&digest)?;
        out.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelFileError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).map_err(|_| ModelFileError::BadMagic)? != MAGIC {
            return Err(ModelFileError::BadMagic);
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(ModelFileError::UnsupportedVersion(version));
        }
        let at = r.pos;
        let depth = r.u32()?;
        if depth == 0 || depth > MAX_LAYERS {
            return Err(ModelFileError::InvalidHeader {
                offset: at,
                message: format!("layer count {depth}"),
            });
        }
        let mut dims = Vec::with_capacity(depth as usize + 1);
        for _ in 0..=depth {
            let at = r.pos;
            let d = r.u64()?;
            if d == 0 || d > usize::MAX as u64 {
                return Err(ModelFileError::InvalidHeader {
                    offset: at,
                    message: format!("layer size {d}"),
                });
            }
            dims.push(d as usize);
        }
        let mut has_bias = Vec::with_capacity(depth as usize);
        for _ in 0..depth {
            let at = r.pos;
            match r.u8()? {
                0 => has_bias.push(false),
                1 => has_bias.push(true),
                f => {
                    return Err(ModelFileError::InvalidHeader {
                        offset: at,
                        message: format!("bias flag {f}"),
                    })
                }
            }
        }
        let source_vocab_hash = r.array32()?;
        let target_vocab_hash = r.array32()?;
        let at = r.pos;
        let ngram_config = NgramConfig::new(r.u64()? as usize, r.u64()? as usize).map_err(|e| {
            ModelFileError::InvalidHeader {
                offset: at,
                message: e.to_string(),
            }
        })?;
        let seed = r.u64()?;

        let payload_start = r.pos;
        let mut weights = Vec::with_capacity(depth as usize);
        for w in dims.windows(2) {
            let n = w[0].checked_mul(w[1]).ok_or(ModelFileError::InvalidHeader {
                offset: payload_start,
                message: "matrix size overflows".into(),
            })?;
            weights.push(Matrix::from_vec(w[0], w[1], r.f64s(n)?));
        }
        let mut biases = Vec::with_capacity(depth as usize);
        for (k, &flag) in has_bias.iter().enumerate() {
            biases.push(if flag { Some(r.f64s(dims[k + 1])?) } else { None });
        }
        let digest = Sha256::digest(&bytes[payload_start..r.pos]);
        if r.take(32)? != digest.as_slice() {
            return Err(ModelFileError::ChecksumMismatch);
        }
        if r.pos != bytes.len() {
            return Err(ModelFileError::TrailingBytes(bytes.len() - r.pos));
        }
        let metadata = ModelMetadata {
            source_vocab_hash,
            target_vocab_hash,
            ngram_config,
            seed,
        };
        Ok(NetworkModel::new(weights, biases, metadata)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFileError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(ModelFileError::Truncated {
                offset: self.bytes.len(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelFileError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelFileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array32(&mut self) -> Result<[u8; 32], ModelFileError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelFileError> {
        let start = self.pos;
        let len = n.checked_mul(8).ok_or(ModelFileError::Truncated {
            offset: self.bytes.len(),
        })?;
        let raw = self.take(len)?;
        raw.chunks_exact(8)
            .enumerate()
            .map(|(i, c)| {
                let v = f64::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(ModelFileError::NonFinite {
                        offset: start + 8 * i,
                    })
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_model() -> NetworkModel {
        let mut m = NetworkModel::new(
            vec![
                Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.5),
                Matrix::from_fn(3, 2, |i, j| -((i + j) as f64) * 1e-300),
            ],
            vec![None, Some(vec![0.25, -0.0])],
            ModelMetadata {
                source_vocab_hash: [7; 32],
                target_vocab_hash: [9; 32],
                ngram_config: NgramConfig::new(5, 2).unwrap(),
                seed: 42,
            },
        )
        .unwrap();
        m.weights_mut()[0].set(0, 0, f64::MIN_POSITIVE / 3.0);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample_model();
        let bytes = m.to_bytes();
        let back = NetworkModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.metadata(), m.metadata());
        assert_eq!(back.dims(), m.dims());
        assert!(back.biases()[1].as_ref().unwrap()[1].is_sign_negative());
    }

    #[test]
    fn truncated_file() {
        let bytes = sample_model().to_bytes();
        for cut in [6, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = NetworkModel::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                err.to_string().starts_with("unexpected end of model file"),
                "cut {cut}: {err}"
            );
        }
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = sample_model().to_bytes();
        bytes[0] = b'X';
        assert_eq!(
            NetworkModel::from_bytes(&bytes).unwrap_err().to_string(),
            "not an NNDWL model"
        );
        assert!(matches!(
            NetworkModel::from_bytes(b"NN"),
            Err(ModelFileError::BadMagic)
        ));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = sample_model().to_bytes();
        bytes[5] = 9;
        assert!(matches!(
            NetworkModel::from_bytes(&bytes),
            Err(ModelFileError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn nan_in_payload() {
        let m = sample_model();
        let mut bytes = m.to_bytes();
        let header = 5 + 1 + 4 + 8 * 3 + 2 + 64 + 24;
        bytes[header..header + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            NetworkModel::from_bytes(&bytes),
            Err(ModelFileError::NonFinite { offset }) if offset == header
        ));
    }

    #[test]
    fn corrupted_payload() {
        let mut bytes = sample_model().to_bytes();
        let header = 5 + 1 + 4 + 8 * 3 + 2 + 64 + 24;
        bytes[header + 9] ^= 1;
        assert!(matches!(
            NetworkModel::from_bytes(&bytes),
            Err(ModelFileError::ChecksumMismatch)
        ));
    }

    #[test]
    fn huge_declared_dims_do_not_allocate() {
        let mut bytes = sample_model().to_bytes();
        bytes[10..18].copy_from_slice(&(1u64 << 40).to_le_bytes());
        assert!(NetworkModel::from_bytes(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_models_round_trip(
            dims in prop::collection::vec(1usize..6, 2..5),
            seed in any::<u64>(),
            bias in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let weights = dims.windows(2)
                .map(|d| Matrix::from_fn(d[0], d[1], |_, _| rng.gen_range(-1e3..1e3)))
                .collect();
            let biases = dims[1..].iter()
                .map(|&n| bias.then(|| (0..n).map(|_| rng.gen::<f64>()).collect()))
                .collect();
            let meta = ModelMetadata { seed, ..Default::default() };
            let m = NetworkModel::new(weights, biases, meta).unwrap();
            let back = NetworkModel::from_bytes(&m.to_bytes()).unwrap();
            prop_assert_eq!(&back, &m);
            for (a, b) in back.weights().iter().zip(m.weights()) {
                prop_assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
}

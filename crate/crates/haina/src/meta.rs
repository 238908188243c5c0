//! The user-held Meta File (`*.haina.meta`).
//!
//! A UTF-8 JSON object with exactly these fields:
//!
//! ```text
//! version, first_beginner, header_digest, mask, block_count,
//! cipher, mode, iv, hash_alg, file_length
//! ```
//!
//! Digests, the mask and the IV are lowercase hex.

use haina_core::crypto::{CipherConfig, CipherId, ModeId, PaddingId, CIPHER_BLOCK};
use haina_core::digest::HASH_ALG;
use haina_core::lock::Mask;
use haina_core::Digest;
use serde::{Deserialize, Serialize};

pub const META_VERSION: u32 = 1;
pub const META_EXTENSION: &str = "haina.meta";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaFile {
    pub version: u32,
    pub first_beginner: String,
    pub header_digest: Digest,
    pub mask: Mask,
    pub block_count: usize,
    pub cipher: CipherConfig,
    pub hash_alg: String,
    pub file_length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetaError {
    #[error("meta file is not a valid document: {0}")]
    Document(String),
    #[error("meta file field {field:?} is invalid: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("unsupported meta file version {0}")]
    Version(u32),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u32,
    first_beginner: String,
    header_digest: String,
    mask: String,
    block_count: usize,
    cipher: String,
    mode: String,
    iv: String,
    hash_alg: String,
    file_length: u64,
}

fn field(field: &'static str, reason: impl ToString) -> MetaError {
    MetaError::Field { field, reason: reason.to_string() }
}

impl MetaFile {
    pub fn new(
        first_beginner: String,
        header_digest: Digest,
        mask: Mask,
        block_count: usize,
        cipher: CipherConfig,
        file_length: u64,
    ) -> MetaFile {
        MetaFile {
            version: META_VERSION,
            first_beginner,
            header_digest,
            mask,
            block_count,
            cipher,
            hash_alg: HASH_ALG.to_string(),
            file_length,
        }
    }

    pub fn to_json(&self) -> String {
        let doc = Document {
            version: self.version,
            first_beginner: self.first_beginner.clone(),
            header_digest: self.header_digest.to_hex(),
            mask: self.mask.to_string(),
            block_count: self.block_count,
            cipher: self.cipher.cipher.as_str().into(),
            mode: self.cipher.mode.as_str().into(),
            iv: hex_encode(&self.cipher.iv),
            hash_alg: self.hash_alg.clone(),
            file_length: self.file_length,
        };
        serde_json::to_string_pretty(&doc).expect("meta document serializes")
    }

    pub fn parse(text: &[u8]) -> Result<MetaFile, MetaError> {
        let doc: Document = serde_json::from_slice(text).map_err(|e| MetaError::Document(e.to_string()))?;
        if doc.version != META_VERSION {
            return Err(MetaError::Version(doc.version));
        }
        if doc.first_beginner.rsplit_once(':').and_then(|(_, p)| p.parse::<u16>().ok()).is_none() {
            return Err(field("first_beginner", "expected host:port"));
        }
        let header_digest = Digest::from_hex(&doc.header_digest).map_err(|e| field("header_digest", e))?;
        let mask_bytes = Digest::from_hex(&doc.mask).map_err(|e| field("mask", e))?;
        let mask = Mask::new(mask_bytes.0).map_err(|e| field("mask", e))?;
        if doc.block_count == 0 {
            return Err(field("block_count", "must be at least 1"));
        }
        let cipher = CipherId::parse(&doc.cipher).ok_or_else(|| field("cipher", "unsupported cipher"))?;
        let mode = ModeId::parse(&doc.mode).ok_or_else(|| field("mode", "unsupported mode"))?;
        let iv_vec = hex_decode(&doc.iv).ok_or_else(|| field("iv", "invalid hex"))?;
        let iv: [u8; CIPHER_BLOCK] = iv_vec.try_into().map_err(|_| field("iv", "must be 16 bytes"))?;
        if doc.hash_alg != HASH_ALG {
            return Err(field("hash_alg", format!("unsupported hash {:?}", doc.hash_alg)));
        }
        Ok(MetaFile {
            version: doc.version,
            first_beginner: doc.first_beginner,
            header_digest,
            mask,
            block_count: doc.block_count,
            cipher: CipherConfig { cipher, mode, padding: PaddingId::Pkcs7, iv },
            hash_alg: doc.hash_alg,
            file_length: doc.file_length,
        })
    }
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || !s.is_ascii() {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok()).collect()
}

//! File pre-processing: key derivation, encryption, blocking and key sharding.
//!
//! Upload runs these in order:
//!
//! 1. `key = H(u64_be(timestamp_ns) ‖ H(file))`, plus a random nonzero mask.
//! 2. `EF = SM4-CBC(file)` with PKCS#7 padding, keyed by the first 16 key bytes.
//! 3. `EF` is cut into `N` contiguous slices.
//! 4. Key byte `i` is written to the front of block `(i mod N) + 1`.
//!
//! Download reverses steps 4 through 2.

use alloc::vec::Vec;

use cbc::cipher::block_padding::Pkcs7;
use cbc::cipher::{BlockCipherEncrypt, BlockModeDecrypt, BlockModeEncrypt, KeyInit, KeyIvInit};
use rand_core::RngCore;
use sm4::Sm4;

use crate::digest::{hash, hash_parts, DIGEST_LEN};
use crate::lock::Mask;

/// Cipher block size in bytes.
pub const CIPHER_BLOCK: usize = 16;

/// Length of the file key in bytes.
pub const KEY_LEN: usize = DIGEST_LEN;

/// The 256-bit per-file key. The cipher consumes its first 16 bytes; all 32
/// bytes are sharded into the chain.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct FileKey(pub [u8; KEY_LEN]);

impl FileKey {
    pub fn cipher_key(&self) -> [u8; 16] {
        let mut k = [0u8; 16];
        k.copy_from_slice(&self.0[..16]);
        k
    }
}

impl core::fmt::Debug for FileKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("FileKey(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CipherId {
    Sm4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeId {
    Cbc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingId {
    Pkcs7,
}

impl CipherId {
    pub fn as_str(&self) -> &'static str {
        "sm4"
    }

    pub fn parse(s: &str) -> Option<CipherId> {
        (s == "sm4").then_some(CipherId::Sm4)
    }
}

impl ModeId {
    pub fn as_str(&self) -> &'static str {
        "cbc"
    }

    pub fn parse(s: &str) -> Option<ModeId> {
        (s == "cbc").then_some(ModeId::Cbc)
    }
}

impl PaddingId {
    pub fn as_str(&self) -> &'static str {
        "pkcs7"
    }

    pub fn parse(s: &str) -> Option<PaddingId> {
        (s == "pkcs7").then_some(PaddingId::Pkcs7)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CipherConfig {
    pub cipher: CipherId,
    pub mode: ModeId,
    pub padding: PaddingId,
    pub iv: [u8; CIPHER_BLOCK],
}

impl CipherConfig {
    /// SM4-CBC with PKCS#7 padding and the given IV.
    pub fn sm4_cbc(iv: [u8; CIPHER_BLOCK]) -> CipherConfig {
        CipherConfig { cipher: CipherId::Sm4, mode: ModeId::Cbc, padding: PaddingId::Pkcs7, iv }
    }

    /// SM4-CBC with a fresh random IV.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> CipherConfig {
        let mut iv = [0u8; CIPHER_BLOCK];
        rng.fill_bytes(&mut iv);
        CipherConfig::sm4_cbc(iv)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("input file is empty")]
    EmptyFile,
    #[error("ciphertext length {0} is not a positive multiple of 16")]
    CiphertextLength(usize),
    #[error("decryption failed: bad padding or wrong key")]
    Integrity,
    #[error("block count must be at least 1")]
    ZeroBlocks,
    #[error("cannot split {len} ciphertext bytes into {blocks} non-empty blocks; use at most {len} blocks")]
    TooManyBlocks { len: usize, blocks: usize },
    #[error("data domain {block} holds {len} bytes but its key shard needs {needed}")]
    TruncatedShard { block: usize, len: usize, needed: usize },
}

/// Derives the file key from the file contents and a nanosecond timestamp.
pub fn generate_key(file: &[u8], timestamp_ns: u64) -> Result<FileKey, CryptoError> {
    if file.is_empty() {
        return Err(CryptoError::EmptyFile);
    }
    let file_hash = hash(file);
    let key = hash_parts(&[&timestamp_ns.to_be_bytes(), file_hash.as_bytes()]);
    Ok(FileKey(key.0))
}

/// Draws a uniformly random nonzero mask.
pub fn generate_mask<R: RngCore + ?Sized>(rng: &mut R) -> Mask {
    loop {
        let mut bytes = [0u8; DIGEST_LEN];
        rng.fill_bytes(&mut bytes);
        if let Ok(mask) = Mask::new(bytes) {
            return mask;
        }
    }
}

/// Ciphertext length for a plaintext of `len` bytes.
pub fn ciphertext_len(len: usize) -> usize {
    CIPHER_BLOCK * ((len + 1).div_ceil(CIPHER_BLOCK))
}

pub fn encrypt_file(file: &[u8], key: &FileKey, cfg: &CipherConfig) -> Result<Vec<u8>, CryptoError> {
    if file.is_empty() {
        return Err(CryptoError::EmptyFile);
    }
    let enc = cbc::Encryptor::<Sm4>::new(&key.cipher_key().into(), &cfg.iv.into());
    Ok(enc.encrypt_padded_vec::<Pkcs7>(file))
}

pub fn decrypt_file(ef: &[u8], key: &FileKey, cfg: &CipherConfig) -> Result<Vec<u8>, CryptoError> {
    if ef.is_empty() || !ef.len().is_multiple_of(CIPHER_BLOCK) {
        return Err(CryptoError::CiphertextLength(ef.len()));
    }
    let dec = cbc::Decryptor::<Sm4>::new(&key.cipher_key().into(), &cfg.iv.into());
    dec.decrypt_padded_vec::<Pkcs7>(ef).map_err(|_| CryptoError::Integrity)
}

/// Encrypts one raw 16-byte block with SM4 (no mode, no padding).
pub fn sm4_encrypt_block(key: &[u8; 16], block: &[u8; 16]) -> [u8; 16] {
    let cipher = Sm4::new(key.into());
    let mut b = (*block).into();
    cipher.encrypt_block(&mut b);
    b.into()
}

/// Cuts `ef` into `n` contiguous non-empty slices. The first `len mod n`
/// slices are one byte longer than the rest.
pub fn split_ciphertext(ef: &[u8], n: usize) -> Result<Vec<&[u8]>, CryptoError> {
    if n == 0 {
        return Err(CryptoError::ZeroBlocks);
    }
    if n > ef.len() {
        return Err(CryptoError::TooManyBlocks { len: ef.len(), blocks: n });
    }
    let base = ef.len() / n;
    let extra = ef.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut rest = ef;
    for j in 0..n {
        let (head, tail) = rest.split_at(base + usize::from(j < extra));
        out.push(head);
        rest = tail;
    }
    Ok(out)
}

/// Assignment of key bytes to blocks: byte `i` goes to block `i mod N`
/// (0-based), in increasing `i` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardLayout {
    pub key_len: usize,
    pub blocks: usize,
}

impl ShardLayout {
    pub fn new(key_len: usize, blocks: usize) -> ShardLayout {
        ShardLayout { key_len, blocks }
    }

    /// Number of key bytes carried by 0-based block `j`.
    pub fn shard_len(&self, j: usize) -> usize {
        if j >= self.key_len {
            0
        } else {
            (self.key_len - j).div_ceil(self.blocks)
        }
    }

    /// Key byte indices carried by 0-based block `j`.
    pub fn indices(&self, j: usize) -> impl Iterator<Item = usize> {
        (j..self.key_len).step_by(self.blocks.max(1))
    }
}

/// Prepends each block's key shard to its ciphertext slice.
pub fn embed_key_shards(slices: &[&[u8]], key: &FileKey) -> Vec<Vec<u8>> {
    let layout = ShardLayout::new(KEY_LEN, slices.len());
    slices
        .iter()
        .enumerate()
        .map(|(j, slice)| {
            let mut domain = Vec::with_capacity(layout.shard_len(j) + slice.len());
            domain.extend(layout.indices(j).map(|i| key.0[i]));
            domain.extend_from_slice(slice);
            domain
        })
        .collect()
}

/// Inverse of [`embed_key_shards`]: reassembles the key and strips the
/// shards, returning the ciphertext slices in order.
pub fn extract_key_shards<D: AsRef<[u8]>>(domains: &[D]) -> Result<(FileKey, Vec<&[u8]>), CryptoError> {
    if domains.is_empty() {
        return Err(CryptoError::ZeroBlocks);
    }
    let layout = ShardLayout::new(KEY_LEN, domains.len());
    let mut key = [0u8; KEY_LEN];
    let mut slices = Vec::with_capacity(domains.len());
    for (j, domain) in domains.iter().enumerate() {
        let domain = domain.as_ref();
        let needed = layout.shard_len(j);
        if domain.len() < needed {
            return Err(CryptoError::TruncatedShard { block: j, len: domain.len(), needed });
        }
        for (k, i) in layout.indices(j).enumerate() {
            key[i] = domain[k];
        }
        slices.push(&domain[needed..]);
    }
    Ok((FileKey(key), slices))
}

//! Node-side block storage keyed by content address.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use haina_core::chain::{Block, LockState};
use haina_core::digest::hash;
use haina_core::Digest;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("quota exceeded: need {needed} bytes, {free} free")]
    Quota { needed: u64, free: u64 },
    #[error("block bytes are not a valid encoded block: {0}")]
    Malformed(String),
    #[error("address {0} already holds a different block")]
    Conflict(Digest),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Encoded blocks held by one node, with quota accounting. When a data
/// directory is configured every block is also written to
/// `<dir>/<64-hex address>`.
#[derive(Debug)]
pub struct BlockStore {
    blocks: BTreeMap<Digest, Vec<u8>>,
    used: u64,
    quota: u64,
    dir: Option<PathBuf>,
}

impl BlockStore {
    pub fn in_memory(quota: u64) -> BlockStore {
        BlockStore { blocks: BTreeMap::new(), used: 0, quota, dir: None }
    }

    /// Opens (creating if needed) a directory-backed store and loads every
    /// well-formed block file in it. Files whose name does not match the hash
    /// of their data domain are skipped.
    pub fn open(dir: &Path, quota: u64) -> Result<BlockStore, StoreError> {
        fs::create_dir_all(dir)?;
        let mut store = BlockStore { blocks: BTreeMap::new(), used: 0, quota, dir: Some(dir.to_path_buf()) };
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let Some(addr) = name.to_str().and_then(|n| Digest::from_hex(n).ok()) else { continue };
            let bytes = fs::read(entry.path())?;
            match Block::decode(&bytes, LockState::Locked) {
                Ok(b) if hash(&b.data) == addr => {
                    store.used += bytes.len() as u64;
                    store.blocks.insert(addr, bytes);
                }
                _ => log::warn!("skipping invalid block file {}", entry.path().display()),
            }
        }
        Ok(store)
    }

    /// Stores encoded block bytes under `address`. Storing the same bytes
    /// again is a no-op; different bytes under a held address are refused.
    pub fn put(&mut self, address: Digest, bytes: Vec<u8>) -> Result<(), StoreError> {
        if let Some(held) = self.blocks.get(&address) {
            return if *held == bytes { Ok(()) } else { Err(StoreError::Conflict(address)) };
        }
        let needed = bytes.len() as u64;
        if needed > self.freespace() {
            return Err(StoreError::Quota { needed, free: self.freespace() });
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(address.to_hex());
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, &bytes)?;
            fs::rename(&tmp, &path)?;
        }
        self.used += needed;
        self.blocks.insert(address, bytes);
        Ok(())
    }

    pub fn get(&self, address: &Digest) -> Option<&[u8]> {
        self.blocks.get(address).map(Vec::as_slice)
    }

    pub fn contains(&self, address: &Digest) -> bool {
        self.blocks.contains_key(address)
    }

    /// Hash of the stored block's data domain, as a storage proof.
    pub fn data_digest(&self, address: &Digest) -> Option<Digest> {
        let bytes = self.get(address)?;
        Block::decode(bytes, LockState::Locked).ok().map(|b| hash(&b.data))
    }

    pub fn addresses(&self) -> impl Iterator<Item = &Digest> {
        self.blocks.keys()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn quota(&self) -> u64 {
        self.quota
    }

    pub fn freespace(&self) -> u64 {
        self.quota.saturating_sub(self.used)
    }
}

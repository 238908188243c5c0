//! Bidirectional circular linked chain of blocks.
//!
//! Each block carries a pointer domain of three digests and a data domain.
//! In the unlocked state, block `i` of an `M`-block chain satisfies
//!
//! ```text
//! previous_hash = H(data[(i - 1) mod M])
//! current_hash  = H(data[i])
//! next_hash     = H(data[(i + 1) mod M])
//! ```
//!
//! Pointers cover the data domain only, so a block's content address is
//! unchanged when its neighbour pointers are masked.

use alloc::vec::Vec;

use crate::digest::{hash, Digest, DIGEST_LEN};

/// Whether the neighbour pointers of a block are masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockState {
    Unlocked,
    Locked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PointerDomain {
    pub previous_hash: Digest,
    pub current_hash: Digest,
    pub next_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub pointers: PointerDomain,
    pub data: Vec<u8>,
    pub state: LockState,
}

/// An ordered chain of `M >= 1` blocks sharing one lock state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
    state: LockState,
}

/// The pointer field a [`Violation`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PointerField {
    Previous,
    Current,
    Next,
}

/// One broken link found by [`verify_chain`]. `block` is a 0-based index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub block: usize,
    pub field: PointerField,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("a chain needs at least one payload")]
    Empty,
    #[error("payload {0} is empty")]
    EmptyPayload(usize),
    #[error("chain is {actual:?}, operation requires {expected:?}")]
    State { expected: LockState, actual: LockState },
    #[error("blocks do not share one lock state")]
    MixedState,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlockDecodeError {
    #[error("encoded block is {0} bytes, shorter than the 104-byte header")]
    Truncated(usize),
    #[error("declared data length {declared} does not match {actual} trailing bytes")]
    LengthMismatch { declared: u64, actual: usize },
}

/// Size of the fixed part of an encoded block: three digests and a length.
pub const BLOCK_HEADER_LEN: usize = 3 * DIGEST_LEN + 8;

/// Builds an unlocked chain over `payloads`, wrapping around at both ends.
pub fn build_chain(payloads: Vec<Vec<u8>>) -> Result<Chain, ChainError> {
    if payloads.is_empty() {
        return Err(ChainError::Empty);
    }
    if let Some(i) = payloads.iter().position(|p| p.is_empty()) {
        return Err(ChainError::EmptyPayload(i));
    }
    let hashes: Vec<Digest> = payloads.iter().map(|p| hash(p)).collect();
    let m = hashes.len();
    let blocks = payloads
        .into_iter()
        .enumerate()
        .map(|(i, data)| Block {
            pointers: PointerDomain {
                previous_hash: hashes[(i + m - 1) % m],
                current_hash: hashes[i],
                next_hash: hashes[(i + 1) % m],
            },
            data,
            state: LockState::Unlocked,
        })
        .collect();
    Ok(Chain { blocks, state: LockState::Unlocked })
}

/// Lists every pointer that disagrees with the data it should reference.
///
/// The result is sorted by block index, then field.
pub fn verify_chain(chain: &Chain) -> Result<Vec<Violation>, ChainError> {
    if chain.state != LockState::Unlocked {
        return Err(ChainError::State { expected: LockState::Unlocked, actual: chain.state });
    }
    let hashes: Vec<Digest> = chain.blocks.iter().map(|b| hash(&b.data)).collect();
    let m = hashes.len();
    let mut violations = Vec::new();
    for (i, block) in chain.blocks.iter().enumerate() {
        let p = &block.pointers;
        if p.previous_hash != hashes[(i + m - 1) % m] {
            violations.push(Violation { block: i, field: PointerField::Previous });
        }
        if p.current_hash != hashes[i] {
            violations.push(Violation { block: i, field: PointerField::Current });
        }
        if p.next_hash != hashes[(i + 1) % m] {
            violations.push(Violation { block: i, field: PointerField::Next });
        }
    }
    Ok(violations)
}

/// Content address of a block: the hash of its data domain.
pub fn content_address(block: &Block) -> Digest {
    hash(&block.data)
}

impl Chain {
    /// Assembles a chain from blocks that all share one lock state.
    pub fn from_blocks(blocks: Vec<Block>) -> Result<Chain, ChainError> {
        let state = blocks.first().ok_or(ChainError::Empty)?.state;
        if blocks.iter().any(|b| b.state != state) {
            return Err(ChainError::MixedState);
        }
        Ok(Chain { blocks, state })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Mutable access for tamper tests and pointer rewriting. The lock state
    /// of the chain is not tracked through this handle.
    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn state(&self) -> LockState {
        self.state
    }

    pub(crate) fn set_state(&mut self, state: LockState) {
        self.state = state;
        for b in &mut self.blocks {
            b.state = state;
        }
    }

    /// Content addresses of all blocks in chain order.
    pub fn addresses(&self) -> Vec<Digest> {
        self.blocks.iter().map(content_address).collect()
    }

    /// Sum of encoded block sizes.
    pub fn encoded_len(&self) -> usize {
        self.blocks.iter().map(Block::encoded_len).sum()
    }
}

impl Block {
    pub fn encoded_len(&self) -> usize {
        BLOCK_HEADER_LEN + self.data.len()
    }

    /// `previous ‖ current ‖ next ‖ u64 BE data length ‖ data`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(self.pointers.previous_hash.as_bytes());
        out.extend_from_slice(self.pointers.current_hash.as_bytes());
        out.extend_from_slice(self.pointers.next_hash.as_bytes());
        out.extend_from_slice(&(self.data.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    /// Decodes a block. The encoding does not carry the lock state, so the
    /// caller supplies it (blocks held by nodes are always locked).
    pub fn decode(bytes: &[u8], state: LockState) -> Result<Block, BlockDecodeError> {
        if bytes.len() < BLOCK_HEADER_LEN {
            return Err(BlockDecodeError::Truncated(bytes.len()));
        }
        let digest_at = |off: usize| {
            let mut d = [0u8; DIGEST_LEN];
            d.copy_from_slice(&bytes[off..off + DIGEST_LEN]);
            Digest(d)
        };
        let mut len = [0u8; 8];
        len.copy_from_slice(&bytes[3 * DIGEST_LEN..BLOCK_HEADER_LEN]);
        let declared = u64::from_be_bytes(len);
        let data = &bytes[BLOCK_HEADER_LEN..];
        if declared != data.len() as u64 {
            return Err(BlockDecodeError::LengthMismatch { declared, actual: data.len() });
        }
        Ok(Block {
            pointers: PointerDomain {
                previous_hash: digest_at(0),
                current_hash: digest_at(DIGEST_LEN),
                next_hash: digest_at(2 * DIGEST_LEN),
            },
            data: data.to_vec(),
            state,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn payloads(n: usize) -> Vec<Vec<u8>> {
        (0..n).map(|i| vec![i as u8 + 1; 3 + i]).collect()
    }

    #[test]
    fn single_block_is_self_referential() {
        let c = build_chain(vec![b"P".to_vec()]).unwrap();
        let p = c.blocks()[0].pointers;
        let h = hash(b"P");
        assert_eq!((p.previous_hash, p.current_hash, p.next_hash), (h, h, h));
        assert!(verify_chain(&c).unwrap().is_empty());
    }

    #[test]
    fn three_blocks_wrap_around() {
        let c = build_chain(vec![b"A".to_vec(), b"B".to_vec(), b"C".to_vec()]).unwrap();
        let (a, b, cc) = (hash(b"A"), hash(b"B"), hash(b"C"));
        let b2 = c.blocks()[1].pointers;
        assert_eq!((b2.previous_hash, b2.current_hash, b2.next_hash), (a, b, cc));
        assert_eq!(c.blocks()[0].pointers.previous_hash, cc);
        assert_eq!(c.blocks()[2].pointers.next_hash, a);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert_eq!(build_chain(vec![]), Err(ChainError::Empty));
        assert_eq!(
            build_chain(vec![b"x".to_vec(), vec![]]),
            Err(ChainError::EmptyPayload(1))
        );
    }

    #[test]
    fn zeroed_next_pointer_is_single_violation() {
        let mut c = build_chain(payloads(4)).unwrap();
        c.blocks_mut()[0].pointers.next_hash = Digest::ZERO;
        assert_eq!(
            verify_chain(&c).unwrap(),
            vec![Violation { block: 0, field: PointerField::Next }]
        );
    }

    #[test]
    fn verify_refuses_locked_chain() {
        let mut c = build_chain(payloads(2)).unwrap();
        c.set_state(LockState::Locked);
        assert!(matches!(verify_chain(&c), Err(ChainError::State { .. })));
    }

    #[test]
    fn content_address_ignores_pointers_and_state() {
        let c = build_chain(payloads(3)).unwrap();
        let mut b = c.blocks()[1].clone();
        let before = content_address(&b);
        b.pointers.next_hash = Digest::ZERO;
        b.state = LockState::Locked;
        assert_eq!(content_address(&b), before);
        assert_eq!(before, hash(&b.data));
    }

    #[test]
    fn block_encoding_layout() {
        let c = build_chain(vec![b"hello".to_vec(), b"world".to_vec()]).unwrap();
        let b = &c.blocks()[0];
        let enc = b.encode();
        assert_eq!(enc.len(), 104 + 5);
        assert_eq!(&enc[0..32], hash(b"world").as_bytes());
        assert_eq!(&enc[32..64], hash(b"hello").as_bytes());
        assert_eq!(&enc[64..96], hash(b"world").as_bytes());
        assert_eq!(&enc[96..104], &[0, 0, 0, 0, 0, 0, 0, 5]);
        assert_eq!(&enc[104..], b"hello");
        assert_eq!(&Block::decode(&enc, LockState::Unlocked).unwrap(), b);
    }

    #[test]
    fn block_decode_errors() {
        assert_eq!(
            Block::decode(&[0u8; 10], LockState::Locked),
            Err(BlockDecodeError::Truncated(10))
        );
        let mut enc = build_chain(vec![b"abc".to_vec()]).unwrap().blocks()[0].encode();
        enc.push(0);
        assert_eq!(
            Block::decode(&enc, LockState::Locked),
            Err(BlockDecodeError::LengthMismatch { declared: 3, actual: 4 })
        );
    }

    #[test]
    fn from_blocks_rejects_mixed_state() {
        let c = build_chain(payloads(2)).unwrap();
        let mut blocks = c.into_blocks();
        blocks[1].state = LockState::Locked;
        assert_eq!(Chain::from_blocks(blocks), Err(ChainError::MixedState));
    }
}

//! Pointer locking: neighbour pointers are XORed with a secret nonzero mask.
//!
//! A locked block still answers to its content address (`current_hash` is
//! never masked), but its `previous_hash`/`next_hash` no longer name any
//! stored block until the mask is applied again.

use core::fmt;

use crate::chain::{Block, Chain, ChainError, LockState};
use crate::digest::{Digest, DIGEST_LEN};

/// A nonzero 256-bit XOR mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mask([u8; DIGEST_LEN]);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LockError {
    #[error("mask must be nonzero")]
    ZeroMask,
    #[error(transparent)]
    Chain(#[from] ChainError),
}

impl Mask {
    pub fn new(bytes: [u8; DIGEST_LEN]) -> Result<Mask, LockError> {
        if bytes.iter().all(|b| *b == 0) {
            return Err(LockError::ZeroMask);
        }
        Ok(Mask(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    /// Applies the mask to one digest. Applying it twice is the identity.
    pub fn apply(&self, d: &Digest) -> Digest {
        d.xor(&self.0)
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&Digest(self.0), f)
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mask({self})")
    }
}

fn toggle(mut chain: Chain, mask: &Mask, from: LockState, to: LockState) -> Result<Chain, LockError> {
    if chain.state() != from {
        return Err(ChainError::State { expected: from, actual: chain.state() }.into());
    }
    for b in chain.blocks_mut() {
        b.pointers.previous_hash = mask.apply(&b.pointers.previous_hash);
        b.pointers.next_hash = mask.apply(&b.pointers.next_hash);
    }
    chain.set_state(to);
    Ok(chain)
}

/// Masks every block's previous and next pointers.
pub fn lock_chain(chain: Chain, mask: &Mask) -> Result<Chain, LockError> {
    toggle(chain, mask, LockState::Unlocked, LockState::Locked)
}

/// Inverse of [`lock_chain`].
pub fn unlock_chain(chain: Chain, mask: &Mask) -> Result<Chain, LockError> {
    toggle(chain, mask, LockState::Locked, LockState::Unlocked)
}

/// Recovers the `(previous, next)` neighbour addresses of a locked block
/// without modifying it. A wrong mask yields addresses nothing answers to.
pub fn unlock_pointers(block: &Block, mask: &Mask) -> (Digest, Digest) {
    (mask.apply(&block.pointers.previous_hash), mask.apply(&block.pointers.next_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_chain, content_address, verify_chain};
    use alloc::vec;

    #[test]
    fn zero_mask_rejected() {
        assert_eq!(Mask::new([0; 32]), Err(LockError::ZeroMask));
    }

    #[test]
    fn xor_arithmetic() {
        let m = Mask::new([0x0f; 32]).unwrap();
        assert_eq!(m.apply(&Digest([0xff; 32])), Digest([0xf0; 32]));
    }

    #[test]
    fn lock_unlock_round_trip() {
        let c = build_chain(vec![b"a".to_vec(), b"bb".to_vec(), b"ccc".to_vec()]).unwrap();
        let m = Mask::new([0x5a; 32]).unwrap();
        let locked = lock_chain(c.clone(), &m).unwrap();
        assert_eq!(locked.state(), LockState::Locked);
        for (l, u) in locked.blocks().iter().zip(c.blocks()) {
            assert_eq!(l.pointers.current_hash, u.pointers.current_hash);
            assert_ne!(l.pointers.previous_hash, u.pointers.previous_hash);
            assert_eq!(content_address(l), content_address(u));
        }
        assert!(matches!(lock_chain(locked.clone(), &m), Err(LockError::Chain(_))));
        let back = unlock_chain(locked, &m).unwrap();
        assert_eq!(back, c);
        assert!(verify_chain(&back).unwrap().is_empty());
    }

    #[test]
    fn single_block_unlocks_to_itself() {
        let c = build_chain(vec![b"solo".to_vec()]).unwrap();
        let m = Mask::new([7; 32]).unwrap();
        let locked = lock_chain(c, &m).unwrap();
        let b = &locked.blocks()[0];
        let (p, n) = unlock_pointers(b, &m);
        assert_eq!(p, b.pointers.current_hash);
        assert_eq!(n, b.pointers.current_hash);
    }
}

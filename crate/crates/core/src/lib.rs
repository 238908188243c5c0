//! Core data structures and algorithms for Haina decentralized storage.
//!
//! This crate is `no_std` (it needs `alloc`) and performs no IO. It covers:
//!
//! - [`chain`]: the bidirectional circular linked chain of blocks, its
//!   verification and its bit-exact block encoding.
//! - [`crypto`]: file key derivation, SM4-CBC file encryption, ciphertext
//!   blocking and key sharding into the data domains.
//! - [`lock`]: the XOR pointer mask that locks a chain against traversal.
//! - [`por`]: the Proof-of-Resources storage-right election (node file,
//!   first Beginner draw, candidate scoring, fairness check).
//! - [`wire`]: the length-prefixed frame codec spoken between users and nodes.
//! - [`bdam`]: the two-cursor fetch planner used to recover a stored chain.
//!
//! Networking, persistence, the Meta File document and the CLI live in the
//! `haina` crate.

#![no_std]
#![forbid(unsafe_code)]
// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod bdam;
pub mod chain;
pub mod crypto;
pub mod digest;
pub mod lock;
pub mod por;
pub mod wire;

pub use chain::{build_chain, content_address, verify_chain, Block, Chain, LockState, PointerDomain};
pub use digest::{hash, Digest, HASH_ALG};
pub use lock::{lock_chain, unlock_chain, unlock_pointers, Mask};

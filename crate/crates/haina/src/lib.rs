//! Storage nodes, transports and user pipelines built on `haina-core`.
//!
//! The same node and client code runs over TCP ([`tcp`]) or over the
//! deterministic virtual-time simulator ([`sim`]).

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod client;
pub mod cluster;
pub mod error;
pub mod meta;
pub mod metrics;
pub mod node;
pub mod protocol;
pub mod resolver;
pub mod sim;
pub mod store;
pub mod tcp;
pub mod transport;

pub use error::{Error, ErrorClass, NetError, Result};

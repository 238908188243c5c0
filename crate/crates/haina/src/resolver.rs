//! Content-address resolution by `HAS_BLOCK` broadcast over the node file.

use std::time::Duration;

use haina_core::chain::{content_address, Block, LockState};
use haina_core::por::NodeFile;
use haina_core::wire::MessageKind;
use haina_core::Digest;

use crate::error::NetError;
use crate::protocol;
use crate::transport::{Call, Transport};

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    /// Nodes that answered `present`, fastest first, ties in node-file order.
    pub holders: Vec<String>,
    /// Time until the first positive answer, or until every query settled.
    pub elapsed: Duration,
}

/// Queries every node-file member at once. Never lists a node that answered
/// negatively or failed.
pub fn find_holders(
    net: &dyn Transport,
    from: &str,
    start: Duration,
    address: &Digest,
    nf: &NodeFile,
    timeout: Duration,
) -> Resolution {
    let calls = nf
        .addresses()
        .iter()
        .map(|a| Call::new(a.clone(), protocol::with_address(MessageKind::HasBlock, address)))
        .collect();
    let outcomes = net.call_many(from, start, calls, timeout);
    let settled = outcomes.iter().map(|o| o.elapsed).max().unwrap_or_default();
    let mut positive: Vec<(Duration, usize, String)> = outcomes
        .into_iter()
        .enumerate()
        .filter_map(|(i, o)| {
            let f = o.frame(MessageKind::HasBlockReply)?;
            (f.msg.get("present") == Some("1")).then(|| (f.at, i, o.to.clone()))
        })
        .collect();
    positive.sort();
    let elapsed = positive.first().map_or(settled, |p| p.0);
    Resolution { holders: positive.into_iter().map(|p| p.2).collect(), elapsed }
}

/// The node holding `address` that answered first.
pub fn resolve(
    net: &dyn Transport,
    from: &str,
    start: Duration,
    address: &Digest,
    nf: &NodeFile,
    timeout: Duration,
) -> Result<(String, Duration), NetError> {
    let r = find_holders(net, from, start, address, nf, timeout);
    match r.holders.into_iter().next() {
        Some(h) => Ok((h, r.elapsed)),
        None => Err(NetError::Remote { addr: from.to_string(), code: "not_found".into(), detail: address.to_hex() }),
    }
}

/// Requests a block from one node and checks that it hashes to `address`.
pub fn get_block(
    net: &dyn Transport,
    from: &str,
    start: Duration,
    node: &str,
    address: &Digest,
    timeout: Duration,
) -> (Result<Block, NetError>, Duration) {
    let outcome = net.call(from, start, node, protocol::with_address(MessageKind::GetBlock, address), timeout);
    let elapsed = outcome.elapsed;
    let result = outcome.into_frames().and_then(|frames| {
        let frame = frames
            .into_iter()
            .find(|f| f.msg.kind == MessageKind::BlockData)
            .ok_or_else(|| NetError::Protocol { addr: node.to_string(), reason: "no BLOCK_DATA".into() })?;
        let block = Block::decode(&frame.msg.body, LockState::Locked)
            .map_err(|e| NetError::Protocol { addr: node.to_string(), reason: e.to_string() })?;
        if content_address(&block) != *address {
            return Err(NetError::Protocol { addr: node.to_string(), reason: "block does not match its address".into() });
        }
        Ok(block)
    });
    (result, elapsed)
}

/// Resolves `address` and fetches it from the first holder whose copy is
/// intact and passes `accept`. Different blocks can share a data domain, and
/// so an address, when their data is only a byte or two long; `accept` lets
/// the caller tell them apart by their links.
pub fn locate_and_fetch(
    net: &dyn Transport,
    from: &str,
    start: Duration,
    address: &Digest,
    nf: &NodeFile,
    timeout: Duration,
    accept: &dyn Fn(&Block) -> bool,
) -> (Option<(String, Block)>, Duration) {
    let r = find_holders(net, from, start, address, nf, timeout);
    let mut t = start + r.elapsed;
    for holder in r.holders {
        let (result, elapsed) = get_block(net, from, t, &holder, address, timeout);
        t += elapsed;
        match result {
            Ok(block) if accept(&block) => return (Some((holder, block)), t - start),
            Ok(_) => log::debug!("{holder} holds an unrelated block at {}", address.to_hex()),
            Err(e) => log::warn!("fetching {} from {holder}: {e}", address.to_hex()),
        }
    }
    (None, t - start)
}

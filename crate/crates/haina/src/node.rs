//! The storage node role: block store service and campaign Beginner.

use std::sync::{Mutex, RwLock};
use std::time::Duration;

use haina_core::chain::{content_address, Block, LockState};
use haina_core::digest::hash;
use haina_core::por::{rank_candidates, CandidateRecord, NodeFile};
use haina_core::wire::{MessageKind, WireMessage};

use crate::protocol::{self, address_of};
use crate::store::{BlockStore, StoreError};
use crate::transport::{as_ms, error_reply, ms, Call, Transport};

/// Campaign timeout used when a `STORE_READY` does not carry one.
pub const DEFAULT_CAMPAIGN_TIMEOUT: Duration = Duration::from_millis(1000);

/// Fault-injection switch for simulated clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Behavior {
    #[default]
    Honest,
    /// Keeps an altered copy of every block it is asked to store.
    CorruptStore,
    /// Answers storage checks with an unrelated digest.
    FakeDigest,
}

/// Receives reply frames stamped with the node-local time they are sent.
pub trait ReplySink {
    fn send(&mut self, at: Duration, msg: WireMessage);
}

impl ReplySink for Vec<(Duration, WireMessage)> {
    fn send(&mut self, at: Duration, msg: WireMessage) {
        self.push((at, msg));
    }
}

pub struct NodeService {
    address: String,
    behavior: Behavior,
    store: Mutex<BlockStore>,
    node_file: RwLock<NodeFile>,
}

/// Result of one storage campaign run by a Beginner.
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub candidates: Vec<CandidateRecord>,
    pub elapsed: Duration,
}

/// Sends `ELECTION(next_size)` to every node-file member except `beginner`,
/// scores each `TAKEPART` by its round-trip time, and returns the candidates
/// sorted by value. Refusals, errors and timeouts are dropped.
pub fn run_campaign(
    net: &dyn Transport,
    beginner: &str,
    start: Duration,
    next_size: u64,
    nf: &NodeFile,
    k: f64,
    timeout: Duration,
) -> Campaign {
    let calls: Vec<Call> = nf
        .addresses()
        .iter()
        .filter(|a| a.as_str() != beginner)
        .map(|a| Call::new(a.clone(), protocol::election(next_size)))
        .collect();
    let outcomes = net.call_many(beginner, start, calls, timeout);
    let elapsed = outcomes.iter().map(|o| o.elapsed).max().unwrap_or_default();
    let mut candidates = Vec::new();
    for o in outcomes {
        let Some(reply) = o.frame(MessageKind::Takepart) else { continue };
        let (Ok(nc), Ok(free)) = (reply.msg.parse::<f64>("freespace_gb"), reply.msg.parse::<u64>("freespace_bytes"))
        else {
            continue;
        };
        if free < next_size {
            continue;
        }
        let index = nf.index_of(&o.to).unwrap_or(usize::MAX);
        if let Ok(c) = CandidateRecord::scored(o.to.clone(), index, nc, as_ms(reply.at), k) {
            candidates.push(c);
        }
    }
    Campaign { candidates: rank_candidates(candidates), elapsed }
}

impl NodeService {
    pub fn new(address: impl Into<String>, store: BlockStore, node_file: NodeFile, behavior: Behavior) -> NodeService {
        NodeService {
            address: address.into(),
            behavior,
            store: Mutex::new(store),
            node_file: RwLock::new(node_file),
        }
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn node_file(&self) -> NodeFile {
        self.node_file.read().unwrap().clone()
    }

    pub fn set_node_file(&self, nf: NodeFile) {
        *self.node_file.write().unwrap() = nf;
    }

    pub fn freespace(&self) -> u64 {
        self.store.lock().unwrap().freespace()
    }

    pub fn used(&self) -> u64 {
        self.store.lock().unwrap().used()
    }

    pub fn block_count(&self) -> usize {
        self.store.lock().unwrap().len()
    }

    pub fn addresses(&self) -> Vec<haina_core::Digest> {
        self.store.lock().unwrap().addresses().copied().collect()
    }

    pub fn block(&self, address: &haina_core::Digest) -> Option<Vec<u8>> {
        self.store.lock().unwrap().get(address).map(<[u8]>::to_vec)
    }

    /// Answers one request. `now` is the node-local time the request
    /// arrived; replies are stamped on the same clock.
    pub fn handle(&self, net: &dyn Transport, now: Duration, from: &str, req: &WireMessage, out: &mut dyn ReplySink) {
        log::trace!("{} <- {:?} from {from}", self.address, req.kind);
        let reply = match req.kind {
            MessageKind::Ping => WireMessage::new(MessageKind::Pong),
            MessageKind::GetNf => {
                let nf = self.node_file();
                WireMessage::new(MessageKind::NfData)
                    .with("digest", nf.digest().to_hex())
                    .with_body(nf.canonical_bytes())
            }
            MessageKind::StoreReady => return self.store_ready(net, now, req, out),
            MessageKind::Election => match req.parse::<u64>("size") {
                Ok(size) => {
                    let free = self.freespace();
                    if free >= size {
                        protocol::takepart(free)
                    } else {
                        WireMessage::new(MessageKind::Refuse).with("freespace_bytes", free)
                    }
                }
                Err(e) => error_reply("bad_request", e),
            },
            MessageKind::CheckStore => match address_of(req) {
                Ok(addr) => match self.store.lock().unwrap().data_digest(&addr) {
                    Some(d) => {
                        let d = match self.behavior {
                            Behavior::FakeDigest => hash(&[d.as_bytes().as_slice(), b"fake"].concat()),
                            _ => d,
                        };
                        WireMessage::new(MessageKind::CheckStoreReply).with("digest", d.to_hex())
                    }
                    None => error_reply("not_found", addr.to_hex()),
                },
                Err(e) => error_reply("bad_request", e),
            },
            MessageKind::GetBlock => match address_of(req) {
                Ok(addr) => match self.store.lock().unwrap().get(&addr) {
                    Some(bytes) => WireMessage::new(MessageKind::BlockData).with_body(bytes.to_vec()),
                    None => error_reply("not_found", addr.to_hex()),
                },
                Err(e) => error_reply("bad_request", e),
            },
            MessageKind::HasBlock => match address_of(req) {
                Ok(addr) => {
                    let present = self.store.lock().unwrap().contains(&addr);
                    WireMessage::new(MessageKind::HasBlockReply).with("present", u8::from(present))
                }
                Err(e) => error_reply("bad_request", e),
            },
            MessageKind::NewBeginner => {
                log::debug!("{} is Beginner for block {}", self.address, req.get("block").unwrap_or("?"));
                WireMessage::new(MessageKind::NewBeginner).with("ack", 1)
            }
            other => error_reply("unexpected", format!("{other:?}")),
        };
        out.send(now, reply);
    }

    fn store_ready(&self, net: &dyn Transport, now: Duration, req: &WireMessage, out: &mut dyn ReplySink) {
        let parsed = (|| {
            let next_size = req.parse::<u64>("next_size")?;
            let campaign = req.parse::<u8>("campaign")? == 1;
            let k = req.parse::<f64>("k").unwrap_or(1.0);
            let timeout = req.parse::<f64>("timeout_ms").map(ms).unwrap_or(DEFAULT_CAMPAIGN_TIMEOUT);
            Ok::<_, haina_core::wire::FrameError>((next_size, campaign, k, timeout))
        })();
        let (next_size, campaign, k, timeout) = match parsed {
            Ok(v) => v,
            Err(e) => return out.send(now, error_reply("bad_request", e)),
        };
        let block = match Block::decode(&req.body, LockState::Locked) {
            Ok(b) => b,
            Err(e) => return out.send(now, error_reply("bad_block", e)),
        };
        let address = content_address(&block);
        let bytes = match self.behavior {
            Behavior::CorruptStore => {
                let mut altered = block.clone();
                if let Some(last) = altered.data.last_mut() {
                    *last ^= 0xff;
                }
                altered.encode()
            }
            _ => req.body.clone(),
        };
        let stored = self.store.lock().unwrap().put(address, bytes);
        match stored {
            Ok(()) => out.send(now, protocol::with_address(MessageKind::StoreAck, &address)),
            Err(e @ StoreError::Quota { .. }) => return out.send(now, error_reply("quota", e)),
            Err(e @ StoreError::Conflict(_)) => return out.send(now, error_reply("conflict", e)),
            Err(e) => return out.send(now, error_reply("io", e)),
        }
        if campaign {
            let nf = self.node_file();
            let result = run_campaign(net, &self.address, now, next_size, &nf, k, timeout);
            out.send(now + result.elapsed, protocol::sorted_result(&result.candidates, result.elapsed));
        }
    }
}

//! Deterministic in-process network with virtual time.
//!
//! A call is delivered by invoking the destination node's handler directly,
//! with the request arrival time computed from the link model. Handlers that
//! make their own calls (a Beginner running a campaign) nest on the same
//! virtual clock. Every message still passes through the frame codec, and
//! the delivery schedule is recorded for replay comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use haina_core::wire::{decode_frame, encode_frame, MessageKind, WireMessage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::NetError;
use crate::node::{NodeService, ReplySink};
use crate::transport::{ms, Call, CallOutcome, Frame, Transport};

/// One-way latency per ordered pair, in milliseconds. `f64::INFINITY`
/// partitions a link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub default_ms: f64,
    pub pairs: BTreeMap<(String, String), f64>,
    /// Each message gets an extra uniform delay in `[0, jitter_ms)`.
    pub jitter_ms: f64,
    pub seed: u64,
}

impl LinkModel {
    pub fn uniform(latency_ms: f64, jitter_ms: f64, seed: u64) -> LinkModel {
        LinkModel { default_ms: latency_ms, pairs: BTreeMap::new(), jitter_ms, seed }
    }

    /// Sets the latency in both directions between `a` and `b`.
    pub fn set_link(&mut self, a: &str, b: &str, latency_ms: f64) {
        self.pairs.insert((a.to_string(), b.to_string()), latency_ms);
        self.pairs.insert((b.to_string(), a.to_string()), latency_ms);
    }

    pub fn latency(&self, from: &str, to: &str) -> f64 {
        self.pairs.get(&(from.to_string(), to.to_string())).copied().unwrap_or(self.default_ms)
    }
}

/// One delivered message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub at: Duration,
    pub from: String,
    pub to: String,
    pub kind: MessageKind,
    pub frame_len: usize,
}

pub struct SimNetwork {
    nodes: BTreeMap<String, Arc<NodeService>>,
    links: LinkModel,
    rng: Mutex<ChaCha8Rng>,
    offline: Mutex<BTreeSet<String>>,
    trace: Mutex<Vec<TraceEntry>>,
}

impl SimNetwork {
    pub fn new(links: LinkModel) -> SimNetwork {
        let rng = ChaCha8Rng::seed_from_u64(links.seed);
        SimNetwork {
            nodes: BTreeMap::new(),
            links,
            rng: Mutex::new(rng),
            offline: Mutex::new(BTreeSet::new()),
            trace: Mutex::new(Vec::new()),
        }
    }

    pub fn add_node(&mut self, node: NodeService) -> Arc<NodeService> {
        let node = Arc::new(node);
        self.nodes.insert(node.address().to_string(), Arc::clone(&node));
        node
    }

    pub fn node(&self, address: &str) -> Option<&Arc<NodeService>> {
        self.nodes.get(address)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Arc<NodeService>> {
        self.nodes.values()
    }

    pub fn links(&self) -> &LinkModel {
        &self.links
    }

    /// An offline node stays addressable but never answers.
    pub fn set_offline(&self, address: &str, offline: bool) {
        let mut set = self.offline.lock().unwrap();
        if offline {
            set.insert(address.to_string());
        } else {
            set.remove(address);
        }
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.trace.lock().unwrap().clone()
    }

    pub fn clear_trace(&self) {
        self.trace.lock().unwrap().clear();
    }

    /// Samples the delay of one message; `None` for a partitioned link.
    fn delay(&self, from: &str, to: &str) -> Option<Duration> {
        let base = self.links.latency(from, to);
        if !base.is_finite() {
            return None;
        }
        let jitter = if self.links.jitter_ms > 0.0 {
            self.rng.lock().unwrap().random_range(0.0..self.links.jitter_ms)
        } else {
            0.0
        };
        Some(ms(base + jitter))
    }

    fn transmit(&self, at: Duration, from: &str, to: &str, msg: &WireMessage) -> Result<WireMessage, NetError> {
        let bytes = encode_frame(msg).map_err(|e| NetError::Protocol { addr: to.to_string(), reason: e.to_string() })?;
        self.trace.lock().unwrap().push(TraceEntry {
            at,
            from: from.to_string(),
            to: to.to_string(),
            kind: msg.kind,
            frame_len: bytes.len(),
        });
        decode_frame(&bytes).map_err(|e| NetError::Protocol { addr: from.to_string(), reason: e.to_string() })
    }

    fn exchange(&self, from: &str, start: Duration, call: Call, timeout: Duration) -> CallOutcome {
        let to = call.to.clone();
        let fail = |e: NetError, elapsed: Duration| CallOutcome { to: to.clone(), result: Err(e), elapsed };
        let Some(node) = self.nodes.get(&call.to) else {
            return fail(NetError::Unreachable(to.clone()), Duration::ZERO);
        };
        if self.offline.lock().unwrap().contains(&call.to) {
            return fail(NetError::Timeout(to.clone()), timeout);
        }
        let Some(out) = self.delay(from, &call.to) else {
            return fail(NetError::Timeout(to.clone()), timeout);
        };
        let arrival = start + out;
        let request = match self.transmit(arrival, from, &call.to, &call.request) {
            Ok(r) => r,
            Err(e) => return fail(e, out),
        };
        let mut replies = Collected::default();
        node.handle(self, arrival, from, &request, &mut replies);

        let mut frames = Vec::new();
        let mut last = Duration::ZERO;
        for (sent, msg) in replies.0 {
            let Some(back) = self.delay(&call.to, from) else {
                return fail(NetError::Timeout(to.clone()), timeout);
            };
            // Frames on one connection arrive in order.
            let at = (sent.max(arrival) + back - start).max(last);
            if at > timeout {
                break;
            }
            last = at;
            match self.transmit(start + at, &call.to, from, &msg) {
                Ok(m) => frames.push(Frame { at, msg: m }),
                Err(e) => return fail(e, at),
            }
        }
        if frames.is_empty() {
            return fail(NetError::Timeout(to.clone()), timeout);
        }
        CallOutcome { to, result: Ok(frames), elapsed: last }
    }
}

#[derive(Default)]
struct Collected(Vec<(Duration, WireMessage)>);

impl ReplySink for Collected {
    fn send(&mut self, at: Duration, msg: WireMessage) {
        self.0.push((at, msg));
    }
}

impl Transport for SimNetwork {
    fn call_many(&self, from: &str, start: Duration, calls: Vec<Call>, timeout: Duration) -> Vec<CallOutcome> {
        calls.into_iter().map(|c| self.exchange(from, start, c, timeout)).collect()
    }
}

//! User-side upload and download pipelines.

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use haina_core::bdam::{Direction, FetchError, FetchMode, FetchPlan};
use haina_core::chain::{build_chain, verify_chain, Block, Chain};
use haina_core::crypto::{
    decrypt_file, embed_key_shards, encrypt_file, extract_key_shards, generate_key, generate_mask, split_ciphertext,
    CipherConfig,
};
use haina_core::lock::{lock_chain, unlock_chain, unlock_pointers, Mask};
use haina_core::por::{
    check_rate, pick_first_beginner, CandidateRecord, Escalation, NodeFile, PorConfig, ProvisionalRecords, RateRule,
};
use haina_core::wire::MessageKind;
use haina_core::Digest;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::meta::MetaFile;
use crate::protocol;
use crate::resolver::{get_block, locate_and_fetch};
use crate::transport::{as_ms, Job, Transport};

/// Name the user endpoint goes by in simulated link models.
pub const CLIENT_ADDRESS: &str = "client";

const IV_ATTEMPTS: usize = 256;

#[derive(Debug, Clone)]
pub struct UploadOptions {
    pub blocks: usize,
    pub por: PorConfig,
    pub seed: u64,
    /// Key-derivation timestamp; the current time when unset.
    pub timestamp_ns: Option<u64>,
}

impl UploadOptions {
    pub fn new(blocks: usize, por: PorConfig, seed: u64) -> UploadOptions {
        UploadOptions { blocks, por, seed, timestamp_ns: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub block: usize,
    pub node: String,
    pub address: Digest,
    pub size: usize,
    /// How the holder was admitted; `None` for the first Beginner.
    pub rule: Option<RateRule>,
    /// Failed placement attempts before this one succeeded.
    pub retries: u32,
    /// Send to `STORE_ACK`, on the transport clock.
    pub transfer_ms: f64,
    /// Campaign start to the user's decision, for blocks after the first.
    pub decision_ms: Option<f64>,
}

/// Stage timings. Local stages use the wall clock, network stages the
/// transport clock (virtual under simulation).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UploadTimings {
    pub encrypt_ms: f64,
    pub chain_ms: f64,
    pub network_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UploadReport {
    pub meta: MetaFile,
    pub placements: Vec<Placement>,
    pub timings: UploadTimings,
    pub escalations: Vec<Escalation>,
    pub final_rate: f64,
    /// Encoded size of the whole chain.
    pub chain_bytes: u64,
}

impl UploadReport {
    pub fn decision_times_ms(&self) -> impl Iterator<Item = f64> + '_ {
        self.placements.iter().filter_map(|p| p.decision_ms)
    }
}

struct Prepared {
    meta_parts: (Mask, CipherConfig),
    blocks: Vec<Vec<u8>>,
    addresses: Vec<Digest>,
    chain_bytes: u64,
}

fn prepare(file: &[u8], opts: &UploadOptions, rng: &mut ChaCha8Rng, timings: &mut UploadTimings) -> Result<Prepared> {
    let ts = opts.timestamp_ns.unwrap_or_else(|| {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0)
    });
    let clock = Instant::now();
    let key = generate_key(file, ts)?;
    let mask = generate_mask(rng);
    let mut encrypt_ms = as_ms(clock.elapsed());
    let mut chain_ms = 0.0;
    // Blocks are located by the hash of their data domain, so two blocks
    // with equal data would be indistinguishable. That only happens when
    // slices are a byte or two long; a fresh IV reshuffles every slice.
    for _ in 0..IV_ATTEMPTS {
        let clock = Instant::now();
        let cipher = CipherConfig::random(rng);
        let ef = encrypt_file(file, &key, &cipher)?;
        encrypt_ms += as_ms(clock.elapsed());

        let clock = Instant::now();
        let slices = split_ciphertext(&ef, opts.blocks)?;
        let chain = lock_chain(build_chain(embed_key_shards(&slices, &key))?, &mask)?;
        let addresses = chain.addresses();
        chain_ms += as_ms(clock.elapsed());
        if addresses.iter().collect::<BTreeSet<_>>().len() < addresses.len() {
            log::debug!("duplicate block address, drawing a new IV");
            continue;
        }
        timings.encrypt_ms = encrypt_ms;
        timings.chain_ms = chain_ms;
        let chain_bytes = chain.encoded_len() as u64;
        let blocks = chain.blocks().iter().map(Block::encode).collect();
        return Ok(Prepared { meta_parts: (mask, cipher), blocks, addresses, chain_bytes });
    }
    Err(Error::Usage(format!(
        "{} blocks are too small to get distinct addresses, use fewer blocks",
        opts.blocks
    )))
}

/// Outcome of one successful `STORE_READY` exchange.
struct Stored {
    candidates: Vec<CandidateRecord>,
    transfer: Duration,
    decision: Option<Duration>,
    elapsed: Duration,
}

enum PlaceError {
    /// The node is unusable for this block; try another.
    Node(String),
    /// The node stored the block but its campaign produced nobody.
    NoCandidates,
}

struct Uploader<'a> {
    net: &'a dyn Transport,
    cfg: &'a PorConfig,
    now: Duration,
}

impl Uploader<'_> {
    fn timeout(&self) -> Duration {
        Duration::from_millis(self.cfg.campaign_timeout_ms)
    }

    /// Tells the chosen holder of block `block` that it is the new Beginner.
    fn confirm(&mut self, node: &str, block: usize, address: &Digest) -> Result<(), PlaceError> {
        let req = protocol::with_address(MessageKind::NewBeginner, address).with("block", block);
        let outcome = self.net.call(CLIENT_ADDRESS, self.now, node, req, self.timeout());
        let elapsed = outcome.elapsed;
        outcome.into_frames().map_err(|e| PlaceError::Node(e.to_string()))?;
        self.now += elapsed;
        Ok(())
    }

    /// Stores block `i` on `node`, verifies it with `CHECK_STORE` and, when
    /// `campaign` is set, collects the node's election result.
    fn place(&mut self, node: &str, block: &[u8], address: &Digest, next_size: u64, campaign: bool) -> Result<Stored, PlaceError> {
        let call_timeout = self.timeout() * 3;
        let req = protocol::store_ready(block.to_vec(), next_size, campaign, self.cfg.k, self.timeout());
        let outcome = self.net.call(CLIENT_ADDRESS, self.now, node, req, call_timeout);
        let frames = outcome.into_frames().map_err(|e| PlaceError::Node(e.to_string()))?;
        let ack = frames
            .iter()
            .find(|f| f.msg.kind == MessageKind::StoreAck)
            .ok_or_else(|| PlaceError::Node("no STORE_ACK".into()))?;
        if protocol::address_of(&ack.msg).ok() != Some(*address) {
            return Err(PlaceError::Node("STORE_ACK names another block".into()));
        }

        let check = self.net.call(
            CLIENT_ADDRESS,
            self.now + ack.at,
            node,
            protocol::with_address(MessageKind::CheckStore, address),
            call_timeout,
        );
        let check_done = ack.at + check.elapsed;
        let reply = check.into_frames().map_err(|e| PlaceError::Node(e.to_string()))?;
        let digest = reply[0].msg.get("digest").and_then(|d| Digest::from_hex(d).ok());
        if digest != Some(*address) {
            return Err(PlaceError::Node(format!("CHECK_STORE mismatch on {node}")));
        }

        let mut stored = Stored { candidates: Vec::new(), transfer: ack.at, decision: None, elapsed: check_done };
        if campaign {
            let sorted = frames
                .iter()
                .find(|f| f.msg.kind == MessageKind::SortedResult)
                .ok_or(PlaceError::NoCandidates)?;
            let (candidates, campaign_time) =
                protocol::parse_sorted_result(&sorted.msg).map_err(|e| PlaceError::Node(e.to_string()))?;
            if candidates.is_empty() {
                return Err(PlaceError::NoCandidates);
            }
            // The result crosses one link after the campaign ends.
            let delivery = sorted.at.saturating_sub(campaign_time) / 2;
            stored.decision = Some(campaign_time + delivery);
            stored.candidates = candidates;
            stored.elapsed = stored.elapsed.max(sorted.at);
        }
        Ok(stored)
    }
}

/// Encrypts, chains, locks and places `file` on the cluster described by
/// `nf`. Block placement follows the storage campaigns; the returned Meta
/// File is all a later download needs besides the node file.
pub fn upload(net: &dyn Transport, nf: &NodeFile, file: &[u8], opts: &UploadOptions) -> Result<UploadReport> {
    opts.por.validate()?;
    if nf.len() < 2 {
        return Err(Error::Usage(format!("at least 2 nodes are required, node file lists {}", nf.len())));
    }
    if opts.blocks == 0 {
        return Err(Error::Usage("block count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut timings = UploadTimings::default();
    let prep = prepare(file, opts, &mut rng, &mut timings)?;
    let n = prep.blocks.len();
    let size = |i: usize| prep.blocks[i % n].len() as u64;

    let mut up = Uploader { net, cfg: &opts.por, now: Duration::ZERO };
    let mut records = ProvisionalRecords::new(n, &opts.por);
    let mut placements: Vec<Placement> = Vec::with_capacity(n);
    let aborted = |block: usize, placements: &[Placement], reason: String| Error::UploadAborted {
        block,
        placed: placements.iter().map(|p| p.node.clone()).collect(),
        reason,
    };

    // First Beginner: random draws over the node file, skipping nodes that
    // already failed.
    let mut tried = BTreeSet::new();
    let mut retries = 0;
    let mut stored = loop {
        if tried.len() == nf.len() || retries > opts.por.max_retries {
            return Err(aborted(0, &placements, "no first Beginner accepted the header block".into()));
        }
        let (_, node) = pick_first_beginner(nf, rng.next_u64())?;
        if !tried.insert(node.to_string()) {
            continue;
        }
        match up.place(node, &prep.blocks[0], &prep.addresses[0], size(1), n > 1) {
            Ok(s) => {
                placements.push(Placement {
                    block: 0,
                    node: node.to_string(),
                    address: prep.addresses[0],
                    size: prep.blocks[0].len(),
                    rule: None,
                    retries,
                    transfer_ms: as_ms(s.transfer),
                    decision_ms: None,
                });
                up.now += s.elapsed;
                break s;
            }
            Err(PlaceError::Node(reason)) => {
                log::warn!("first Beginner {node} failed: {reason}");
                retries += 1;
            }
            Err(PlaceError::NoCandidates) => return Err(Error::CampaignEmpty { block: 1 }),
        }
    };
    records.record(&placements[0].node);

    for i in 1..n {
        let first = placements[0].node.as_str();
        let previous = placements[i - 1].node.as_str();
        let mut pool: Vec<CandidateRecord> =
            stored.candidates.iter().filter(|c| c.address != previous).cloned().collect();
        // The tail block neighbours the header block around the circle.
        if i == n - 1 && n >= 3 && pool.iter().any(|c| c.address != first) {
            pool.retain(|c| c.address != first);
        }
        let decision_ms = stored.decision.map(as_ms);
        let mut retries = 0;
        loop {
            if pool.is_empty() {
                return Err(if retries == 0 {
                    Error::CampaignEmpty { block: i }
                } else {
                    aborted(i, &placements, "candidates exhausted".into())
                });
            }
            let decision = check_rate(&pool, &mut records, &opts.por, i)?;
            let node = pool[decision.index].address.clone();
            let placed = up
                .confirm(&node, i, &prep.addresses[i])
                .and_then(|()| up.place(&node, &prep.blocks[i], &prep.addresses[i], size(i + 1), i + 1 < n));
            match placed {
                Ok(s) => {
                    records.record(&node);
                    placements.push(Placement {
                        block: i,
                        node,
                        address: prep.addresses[i],
                        size: prep.blocks[i].len(),
                        rule: Some(decision.rule),
                        retries,
                        transfer_ms: as_ms(s.transfer),
                        decision_ms,
                    });
                    up.now += s.elapsed;
                    stored = s;
                    break;
                }
                Err(e) => {
                    let reason = match e {
                        PlaceError::Node(r) => r,
                        PlaceError::NoCandidates => format!("campaign by {node} found no candidates"),
                    };
                    log::warn!("placing block {i} on {node}: {reason}");
                    retries += 1;
                    if retries > opts.por.max_retries {
                        return Err(aborted(i, &placements, reason));
                    }
                    pool.remove(decision.index);
                }
            }
        }
    }

    timings.network_ms = as_ms(up.now);
    let summary = records.finish();
    let (mask, cipher) = prep.meta_parts;
    let meta = MetaFile::new(placements[0].node.clone(), prep.addresses[0], mask, n, cipher, file.len() as u64);
    Ok(UploadReport {
        meta,
        placements,
        timings,
        escalations: summary.escalations,
        final_rate: summary.final_rate,
        chain_bytes: prep.chain_bytes,
    })
}

/// A found block with its source, and the time spent looking.
type Fetched = (Option<(String, Block)>, Duration);

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutcome {
    /// Locked blocks in chain order, header first, with their sources.
    pub blocks: Vec<(Digest, String, Block)>,
    pub rounds: usize,
    pub elapsed: Duration,
}

/// Follows the chain from an already fetched header block. Each round
/// resolves and fetches one address per live cursor concurrently; the round
/// lasts as long as its slowest fetch.
#[allow(clippy::too_many_arguments)]
pub fn fetch_chain(
    net: &dyn Transport,
    nf: &NodeFile,
    start: Duration,
    header: (Digest, String, Block),
    mask: &Mask,
    expected: usize,
    mode: FetchMode,
    timeout: Duration,
) -> Result<FetchOutcome, FetchError> {
    let (address, source, block) = header;
    let (prev, next) = unlock_pointers(&block, mask);
    let mut plan = FetchPlan::new(address, prev, next, (source, block), expected, mode);
    let mut now = start;
    // Block each cursor last delivered; a fetched block must link back to it.
    let mut came_from = [address, address];
    loop {
        let targets = plan.next_targets();
        if targets.is_empty() {
            break;
        }
        let slots: Vec<Mutex<Option<Fetched>>> = targets.iter().map(|_| Mutex::new(None)).collect();
        let jobs: Vec<Job<'_>> = targets
            .iter()
            .zip(&slots)
            .map(|(&(dir, target), slot)| {
                let origin = came_from[dir as usize];
                let job: Job<'_> = Box::new(move || {
                    let links_back = |b: &Block| {
                        let (p, n) = unlock_pointers(b, mask);
                        match dir {
                            Direction::Forward => p == origin,
                            Direction::Backward => n == origin,
                        }
                    };
                    let r = locate_and_fetch(net, CLIENT_ADDRESS, now, &target, nf, timeout, &links_back);
                    *slot.lock().unwrap() = Some(r);
                });
                job
            })
            .collect();
        net.join(jobs);
        let mut round = Duration::ZERO;
        for ((dir, target), slot) in targets.into_iter().zip(slots) {
            let (found, elapsed) = slot.into_inner().unwrap().expect("job ran");
            round = round.max(elapsed);
            match found {
                Some((src, block)) => {
                    let (p, n) = unlock_pointers(&block, mask);
                    plan.deliver(dir, target, p, n, (src, block));
                    came_from[dir as usize] = target;
                }
                None => plan.fail(dir, target),
            }
        }
        now += round;
    }
    let rounds = plan.rounds();
    let blocks = plan.finish()?.into_iter().map(|(a, (s, b))| (a, s, b)).collect();
    Ok(FetchOutcome { blocks, rounds, elapsed: now - start })
}

pub fn bdam_fetch(
    net: &dyn Transport,
    nf: &NodeFile,
    start: Duration,
    header: (Digest, String, Block),
    mask: &Mask,
    expected: usize,
    timeout: Duration,
) -> Result<FetchOutcome, FetchError> {
    fetch_chain(net, nf, start, header, mask, expected, FetchMode::Bidirectional, timeout)
}

pub fn unidirectional_fetch(
    net: &dyn Transport,
    nf: &NodeFile,
    start: Duration,
    header: (Digest, String, Block),
    mask: &Mask,
    expected: usize,
    timeout: Duration,
) -> Result<FetchOutcome, FetchError> {
    fetch_chain(net, nf, start, header, mask, expected, FetchMode::Unidirectional, timeout)
}

#[derive(Debug, Clone)]
pub struct DownloadOptions {
    pub mode: FetchMode,
    pub timeout: Duration,
}

impl Default for DownloadOptions {
    fn default() -> Self {
        DownloadOptions { mode: FetchMode::Bidirectional, timeout: Duration::from_millis(1000) }
    }
}

/// Timings follow the same clock split as [`UploadTimings`].
#[derive(Debug, Clone, PartialEq)]
pub struct DownloadReport {
    pub plaintext: Vec<u8>,
    pub header_ms: f64,
    pub fetch_ms: f64,
    pub rounds: usize,
    pub decrypt_ms: f64,
    /// Node each block came from, in chain order.
    pub sources: Vec<(Digest, String)>,
}

impl DownloadReport {
    /// Network time spent recovering the chain.
    pub fn access_ms(&self) -> f64 {
        self.header_ms + self.fetch_ms
    }
}

pub fn download(net: &dyn Transport, nf: &NodeFile, meta: &MetaFile, opts: &DownloadOptions) -> Result<DownloadReport> {
    let hb1 = meta.header_digest;
    let (got, mut header_time) = get_block(net, CLIENT_ADDRESS, Duration::ZERO, &meta.first_beginner, &hb1, opts.timeout);
    let header = match got {
        Ok(b) => (hb1, meta.first_beginner.clone(), b),
        Err(e) => {
            log::info!("first Beginner could not serve the header block ({e}), resolving");
            let (found, elapsed) = locate_and_fetch(net, CLIENT_ADDRESS, header_time, &hb1, nf, opts.timeout, &|_| true);
            header_time += elapsed;
            let (src, b) = found.ok_or(Error::IncompleteChain { missing: vec![hb1] })?;
            (hb1, src, b)
        }
    };

    let fetched = fetch_chain(net, nf, header_time, header, &meta.mask, meta.block_count, opts.mode, opts.timeout)?;
    let sources = fetched.blocks.iter().map(|(a, s, _)| (*a, s.clone())).collect();
    let blocks: Vec<Block> = fetched.blocks.into_iter().map(|(_, _, b)| b).collect();

    let clock = Instant::now();
    let chain = unlock_chain(Chain::from_blocks(blocks)?, &meta.mask)?;
    let violations = verify_chain(&chain)?;
    if !violations.is_empty() {
        return Err(Error::Integrity(format!("{} chain pointer violations", violations.len())));
    }
    let domains: Vec<&[u8]> = chain.blocks().iter().map(|b| b.data.as_slice()).collect();
    let (key, slices) = extract_key_shards(&domains)?;
    let mut plaintext = decrypt_file(&slices.concat(), &key, &meta.cipher)?;
    if (plaintext.len() as u64) < meta.file_length {
        return Err(Error::Integrity("recovered file is shorter than recorded".into()));
    }
    plaintext.truncate(meta.file_length as usize);
    let decrypt_ms = as_ms(clock.elapsed());

    Ok(DownloadReport {
        plaintext,
        header_ms: as_ms(header_time),
        fetch_ms: as_ms(fetched.elapsed),
        rounds: fetched.rounds,
        decrypt_ms,
        sources,
    })
}


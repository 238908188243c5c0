//! Proof-of-Resources storage-right election.
//!
//! A storage event places the `M` blocks of one chain. The user draws the
//! first Beginner from the node file; each Beginner then runs a campaign for
//! the next block among all other nodes, scores replies with
//! `Value = k * NC / RTT`, and hands the sorted list to the user, who applies
//! the per-event fairness threshold `Rate` through [`check_rate`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::digest::{hash, Digest};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PorError {
    #[error("node file is empty")]
    EmptyNodeFile,
    #[error("invalid node address {0:?}: expected host:port")]
    BadAddress(String),
    #[error("node file is not canonical: {0}")]
    NotCanonical(&'static str),
    #[error("free space must be non-negative, got {0}")]
    NegativeCapacity(f64),
    #[error("no candidate answered the campaign")]
    NoCandidates,
    #[error("invalid PoR configuration: {0}")]
    Config(&'static str),
}

/// The shared roster of node addresses, kept sorted and de-duplicated so
/// every copy hashes identically.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeFile {
    addresses: Vec<String>,
}

fn valid_address(addr: &str) -> bool {
    match addr.rsplit_once(':') {
        Some((host, port)) => {
            !host.is_empty() && !addr.chars().any(char::is_whitespace) && port.parse::<u16>().is_ok()
        }
        None => false,
    }
}

impl NodeFile {
    /// Builds a node file from any address list, sorting and de-duplicating.
    pub fn new<I, S>(addresses: I) -> Result<NodeFile, PorError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut addresses: Vec<String> = addresses.into_iter().map(Into::into).collect();
        if let Some(bad) = addresses.iter().find(|a| !valid_address(a)) {
            return Err(PorError::BadAddress(bad.clone()));
        }
        addresses.sort();
        addresses.dedup();
        Ok(NodeFile { addresses })
    }

    /// Parses the canonical on-wire form: one address per line, sorted,
    /// unique, each line terminated by `\n`.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<NodeFile, PorError> {
        let text = core::str::from_utf8(bytes).map_err(|_| PorError::NotCanonical("not UTF-8"))?;
        if text.is_empty() {
            return Ok(NodeFile::default());
        }
        let body = text.strip_suffix('\n').ok_or(PorError::NotCanonical("missing trailing newline"))?;
        let addresses: Vec<String> = body.split('\n').map(ToString::to_string).collect();
        if let Some(bad) = addresses.iter().find(|a| !valid_address(a)) {
            return Err(PorError::BadAddress(bad.clone()));
        }
        if addresses.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PorError::NotCanonical("addresses not strictly sorted"));
        }
        Ok(NodeFile { addresses })
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for a in &self.addresses {
            out.extend_from_slice(a.as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn digest(&self) -> Digest {
        hash(&self.canonical_bytes())
    }

    pub fn addresses(&self) -> &[String] {
        &self.addresses
    }

    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    /// 0-based position of `addr` in canonical order.
    pub fn index_of(&self, addr: &str) -> Option<usize> {
        self.addresses.binary_search_by(|a| a.as_str().cmp(addr)).ok()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum UpdateError<E> {
    #[error("fetching remote node file failed: {0}")]
    Fetch(E),
    #[error("remote node file does not match its advertised digest")]
    Integrity,
    #[error(transparent)]
    Parse(PorError),
}

/// Keeps `local` if it already hashes to `remote_digest`; otherwise fetches
/// the remote copy and accepts it only if its bytes hash to that digest.
pub fn update_node_file<E, F>(local: NodeFile, remote_digest: &Digest, fetch: F) -> Result<NodeFile, UpdateError<E>>
where
    F: FnOnce() -> Result<Vec<u8>, E>,
{
    if local.digest() == *remote_digest {
        return Ok(local);
    }
    let body = fetch().map_err(UpdateError::Fetch)?;
    if hash(&body) != *remote_digest {
        return Err(UpdateError::Integrity);
    }
    let nf = NodeFile::from_canonical_bytes(&body).map_err(UpdateError::Parse)?;
    if nf.digest() != *remote_digest {
        return Err(UpdateError::Integrity);
    }
    Ok(nf)
}

/// Selects the first Beginner: 1-based index `(draw mod N) + 1`.
///
/// Returns the 1-based index together with the address.
pub fn pick_first_beginner(nf: &NodeFile, draw: u64) -> Result<(usize, &str), PorError> {
    if nf.is_empty() {
        return Err(PorError::EmptyNodeFile);
    }
    let idx = (draw % nf.len() as u64) as usize + 1;
    Ok((idx, &nf.addresses[idx - 1]))
}

/// Scores a follower: `k * nc / max(rtt, 1)`, with `nc` in GB and `rtt` in ms.
pub fn judge(nc_gb: f64, rtt_ms: f64, k: f64) -> Result<f64, PorError> {
    if nc_gb.is_nan() || nc_gb < 0.0 {
        return Err(PorError::NegativeCapacity(nc_gb));
    }
    Ok(k * nc_gb / rtt_ms.max(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub address: String,
    /// 0-based node-file position, used to break ties.
    pub node_index: usize,
    pub freespace_gb: f64,
    pub rtt_ms: f64,
    pub value: f64,
}

impl CandidateRecord {
    pub fn scored(address: String, node_index: usize, freespace_gb: f64, rtt_ms: f64, k: f64) -> Result<Self, PorError> {
        let value = judge(freespace_gb, rtt_ms, k)?;
        Ok(CandidateRecord { address, node_index, freespace_gb, rtt_ms: rtt_ms.max(1.0), value })
    }
}

/// Sorts by value descending; equal values keep node-file order.
pub fn rank_candidates(mut candidates: Vec<CandidateRecord>) -> Vec<CandidateRecord> {
    candidates.sort_by(|a, b| match b.value.total_cmp(&a.value) {
        Ordering::Equal => a.node_index.cmp(&b.node_index),
        o => o,
    });
    candidates
}

#[derive(Debug, Clone, PartialEq)]
pub struct PorConfig {
    /// Compression parameter of the value formula, `0 < k <= 1`.
    pub k: f64,
    /// Initial fairness threshold, `0 < rate <= 1`.
    pub rate: f64,
    /// Added to the threshold each time no candidate fits under it.
    pub rate_increment: f64,
    pub campaign_timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for PorConfig {
    fn default() -> Self {
        PorConfig { k: 1.0, rate: 0.1, rate_increment: 0.1, campaign_timeout_ms: 1000, max_retries: 3 }
    }
}

impl PorConfig {
    pub fn validate(&self) -> Result<(), PorError> {
        if !(self.k > 0.0 && self.k <= 1.0) {
            return Err(PorError::Config("k must satisfy 0 < k <= 1"));
        }
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(PorError::Config("rate must satisfy 0 < rate <= 1"));
        }
        if !(self.rate_increment > 0.0) {
            return Err(PorError::Config("rate increment must be positive"));
        }
        Ok(())
    }
}

/// A fairness-threshold increase during one storage event.
#[derive(Debug, Clone, PartialEq)]
pub struct Escalation {
    /// 0-based index of the block being placed.
    pub block: usize,
    pub from: f64,
    pub to: f64,
    pub assigned: String,
}

/// Per-event block counts. Consumed by [`ProvisionalRecords::finish`] once
/// the event completes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvisionalRecords {
    counts: BTreeMap<String, usize>,
    total: usize,
    rate: f64,
    escalations: Vec<Escalation>,
}

/// What remains of a storage event after its records are destroyed.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSummary {
    pub counts: BTreeMap<String, usize>,
    pub final_rate: f64,
    pub escalations: Vec<Escalation>,
}

impl ProvisionalRecords {
    pub fn new(total_blocks: usize, cfg: &PorConfig) -> ProvisionalRecords {
        ProvisionalRecords { counts: BTreeMap::new(), total: total_blocks, rate: cfg.rate, escalations: Vec::new() }
    }

    pub fn count(&self, addr: &str) -> usize {
        self.counts.get(addr).copied().unwrap_or(0)
    }

    pub fn record(&mut self, addr: &str) {
        *self.counts.entry(addr.to_string()).or_insert(0) += 1;
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn stored(&self) -> usize {
        self.counts.values().sum()
    }

    /// Largest per-node count the current rate allows.
    pub fn cap(&self) -> usize {
        // Truncation is floor for the non-negative values involved.
        (self.rate * self.total as f64 + 1e-9) as usize
    }

    pub fn escalations(&self) -> &[Escalation] {
        &self.escalations
    }

    pub fn finish(self) -> EventSummary {
        EventSummary { counts: self.counts, final_rate: self.rate, escalations: self.escalations }
    }
}

/// Which check admitted the chosen candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateRule {
    /// Holds no block of this event yet.
    Unused,
    /// Holding one more block keeps it within the rate.
    WithinRate,
    /// Nobody qualified; the top candidate was taken and the rate raised.
    Escalated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateDecision {
    /// Position of the chosen candidate in the sorted list.
    pub index: usize,
    pub rule: RateRule,
}

/// Chooses the holder of block `block` from a value-sorted candidate list.
///
/// The first candidate without a block in this event wins; failing that,
/// the first whose post-assignment share `(count + 1) / M` stays within the
/// rate; failing that, the top candidate, with the rate raised by
/// `cfg.rate_increment`.
pub fn check_rate(
    candidates: &[CandidateRecord],
    records: &mut ProvisionalRecords,
    cfg: &PorConfig,
    block: usize,
) -> Result<RateDecision, PorError> {
    if candidates.is_empty() {
        return Err(PorError::NoCandidates);
    }
    if let Some(index) = candidates.iter().position(|c| records.count(&c.address) == 0) {
        return Ok(RateDecision { index, rule: RateRule::Unused });
    }
    let cap = records.cap();
    if let Some(index) = candidates.iter().position(|c| records.count(&c.address) < cap) {
        return Ok(RateDecision { index, rule: RateRule::WithinRate });
    }
    let from = records.rate;
    records.rate += cfg.rate_increment;
    records.escalations.push(Escalation {
        block,
        from,
        to: records.rate,
        assigned: candidates[0].address.clone(),
    });
    Ok(RateDecision { index: 0, rule: RateRule::Escalated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn nf(n: usize) -> NodeFile {
        NodeFile::new((1..=n).map(|i| format!("10.0.0.1:{}", 17000 + i))).unwrap()
    }

    fn cand(addr: &str, idx: usize, value: f64) -> CandidateRecord {
        CandidateRecord { address: addr.into(), node_index: idx, freespace_gb: value, rtt_ms: 1.0, value }
    }

    #[test]
    fn node_file_canonical_form() {
        let f = NodeFile::new(["b.example:1", "a.example:2", "b.example:1"]).unwrap();
        assert_eq!(f.canonical_bytes(), b"a.example:2\nb.example:1\n");
        assert_eq!(NodeFile::from_canonical_bytes(&f.canonical_bytes()).unwrap(), f);
        assert_eq!(f.digest(), hash(b"a.example:2\nb.example:1\n"));
        assert!(NodeFile::from_canonical_bytes(b"b:1\na:2\n").is_err());
        assert!(NodeFile::from_canonical_bytes(b"a:1").is_err());
        assert!(matches!(NodeFile::new(["noport"]), Err(PorError::BadAddress(_))));
    }

    #[test]
    fn update_short_circuits_on_equal_digest() {
        let local = nf(3);
        let d = local.digest();
        let out = update_node_file::<(), _>(local.clone(), &d, || panic!("must not fetch")).unwrap();
        assert_eq!(out, local);
    }

    #[test]
    fn update_replaces_and_checks_integrity() {
        let remote = nf(5);
        let d = remote.digest();
        let got = update_node_file::<(), _>(nf(2), &d, || Ok(remote.canonical_bytes())).unwrap();
        assert_eq!(got.digest(), d);

        let mut tampered = remote.canonical_bytes();
        tampered[3] ^= 1;
        assert_ne!(hash(&tampered), d);
        let err = update_node_file::<(), _>(nf(2), &d, || Ok(tampered)).unwrap_err();
        assert!(matches!(err, UpdateError::Integrity));

        let err = update_node_file::<&str, _>(nf(2), &d, || Err("unreachable")).unwrap_err();
        assert!(matches!(err, UpdateError::Fetch("unreachable")));
    }

    #[test]
    fn first_beginner_modular_index() {
        let f = nf(47);
        assert_eq!(pick_first_beginner(&f, 52).unwrap().0, 6);
        assert_eq!(pick_first_beginner(&f, 0).unwrap().0, 1);
        assert_eq!(pick_first_beginner(&f, 52).unwrap().1, f.addresses()[5]);
        assert_eq!(pick_first_beginner(&NodeFile::default(), 3), Err(PorError::EmptyNodeFile));
    }

    #[test]
    fn judge_examples() {
        assert_eq!(judge(100.0, 50.0, 1.0).unwrap(), 2.0);
        assert_eq!(judge(0.0, 10.0, 1.0).unwrap(), 0.0);
        assert_eq!(judge(8.0, 0.25, 0.5).unwrap(), 4.0);
        assert!(matches!(judge(-1.0, 1.0, 1.0), Err(PorError::NegativeCapacity(_))));
    }

    #[test]
    fn ranking_example() {
        let recs = vec![
            CandidateRecord::scored("n1:1".into(), 0, 100.0, 50.0, 1.0).unwrap(),
            CandidateRecord::scored("n2:1".into(), 1, 100.0, 10.0, 1.0).unwrap(),
            CandidateRecord::scored("n3:1".into(), 2, 5.0, 1.0, 1.0).unwrap(),
        ];
        let ranked = rank_candidates(recs);
        let order: Vec<(&str, f64)> = ranked.iter().map(|c| (c.address.as_str(), c.value)).collect();
        assert_eq!(order, vec![("n2:1", 10.0), ("n3:1", 5.0), ("n1:1", 2.0)]);
    }

    #[test]
    fn ranking_ties_keep_node_file_order() {
        let ranked = rank_candidates(vec![cand("c:1", 2, 1.0), cand("a:1", 0, 1.0), cand("b:1", 1, 1.0)]);
        let idx: Vec<usize> = ranked.iter().map(|c| c.node_index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn check_rate_prefers_unused() {
        let cfg = PorConfig::default();
        let mut r = ProvisionalRecords::new(20, &cfg);
        let c = vec![cand("a:1", 0, 3.0), cand("b:1", 1, 2.0)];
        assert_eq!(check_rate(&c, &mut r, &cfg, 1).unwrap(), RateDecision { index: 0, rule: RateRule::Unused });
        r.record("a:1");
        assert_eq!(check_rate(&c, &mut r, &cfg, 2).unwrap().index, 1);
    }

    #[test]
    fn check_rate_skips_node_over_threshold() {
        // M = 20, rate 0.1: a node holding two blocks would reach 3/20.
        let cfg = PorConfig::default();
        let mut r = ProvisionalRecords::new(20, &cfg);
        for _ in 0..2 {
            r.record("a:1");
        }
        r.record("b:1");
        let c = vec![cand("a:1", 0, 9.0), cand("b:1", 1, 1.0)];
        assert_eq!(
            check_rate(&c, &mut r, &cfg, 5).unwrap(),
            RateDecision { index: 1, rule: RateRule::WithinRate }
        );
    }

    #[test]
    fn check_rate_escalates_when_nobody_fits() {
        let cfg = PorConfig::default();
        let mut r = ProvisionalRecords::new(20, &cfg);
        r.record("a:1");
        r.record("a:1");
        let c = vec![cand("a:1", 0, 1.0)];
        let d = check_rate(&c, &mut r, &cfg, 7).unwrap();
        assert_eq!(d, RateDecision { index: 0, rule: RateRule::Escalated });
        assert!((r.rate() - 0.2).abs() < 1e-12);
        assert_eq!(r.escalations().len(), 1);
        assert_eq!(r.escalations()[0].block, 7);
        let summary = r.finish();
        assert_eq!(summary.counts["a:1"], 2);
        assert_eq!(check_rate(&[], &mut ProvisionalRecords::new(1, &cfg), &cfg, 0), Err(PorError::NoCandidates));
    }

    #[test]
    fn config_validation() {
        assert!(PorConfig::default().validate().is_ok());
        assert!(PorConfig { k: 0.0, ..PorConfig::default() }.validate().is_err());
        assert!(PorConfig { rate: 1.5, ..PorConfig::default() }.validate().is_err());
    }
}

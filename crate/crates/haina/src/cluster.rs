//! Simulated clusters and the experiments run on them.

use std::collections::BTreeMap;
use std::time::Duration;

use haina_core::por::{NodeFile, PorConfig, RateRule};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::client::{download, upload, DownloadOptions, UploadOptions, UploadReport, CLIENT_ADDRESS};
use crate::error::{Error, Result};
use crate::metrics::{Clock, MetricKind, MetricsRow};
use crate::node::{Behavior, NodeService};
use crate::sim::{LinkModel, SimNetwork};
use crate::store::BlockStore;
use haina_core::bdam::{speedup, FetchMode};

/// Highest node count whose addresses keep node-file order equal to index
/// order.
pub const MAX_NODES: usize = 999;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PorSpec {
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
    /// Defaults to `rate`.
    #[serde(default)]
    pub rate_increment: Option<f64>,
    /// Campaign timeout; ten times the largest link latency when unset.
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_k() -> f64 {
    1.0
}
fn default_rate() -> f64 {
    0.1
}
fn default_retries() -> u32 {
    3
}

impl Default for PorSpec {
    fn default() -> Self {
        PorSpec { k: 1.0, rate: 0.1, rate_increment: None, timeout_ms: None, max_retries: 3 }
    }
}

/// Cluster and workload description for `sim` runs.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub nodes: usize,
    pub quota_gb: f64,
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
    /// Full one-way latency matrix between nodes; overrides `latency_ms`.
    #[serde(default)]
    pub latency_matrix: Option<Vec<Vec<f64>>>,
    /// One-way latency between the user and each node.
    #[serde(default)]
    pub client_latency_ms: Option<Vec<f64>>,
    pub seed: u64,
    #[serde(default)]
    pub por: PorSpec,
    #[serde(default = "default_events")]
    pub events: usize,
    #[serde(default = "default_file_bytes")]
    pub file_bytes: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
}

fn default_events() -> usize {
    20
}
fn default_file_bytes() -> usize {
    64 * 1024
}
fn default_blocks() -> usize {
    20
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Usage(format!("cluster spec field {field}: {}", reason.into()))
}

impl ClusterSpec {
    /// Equal nodes on uniform links.
    pub fn uniform(nodes: usize, latency_ms: f64, seed: u64) -> ClusterSpec {
        ClusterSpec {
            nodes,
            quota_gb: 100.0,
            latency_ms,
            jitter_ms: 0.0,
            latency_matrix: None,
            client_latency_ms: None,
            seed,
            por: PorSpec::default(),
            events: default_events(),
            file_bytes: default_file_bytes(),
            blocks: default_blocks(),
        }
    }

    pub fn from_json(text: &str) -> Result<ClusterSpec> {
        let spec: ClusterSpec =
            serde_json::from_str(text).map_err(|e| Error::Usage(format!("cluster spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_NODES).contains(&self.nodes) {
            return Err(invalid("nodes", format!("must be between 2 and {MAX_NODES}")));
        }
        if !(self.quota_gb >= 0.0 && self.quota_gb.is_finite()) {
            return Err(invalid("quota_gb", "must be a non-negative number"));
        }
        if !(self.latency_ms >= 0.0) {
            return Err(invalid("latency_ms", "must be non-negative"));
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return Err(invalid("jitter_ms", "must be a non-negative number"));
        }
        if let Some(m) = &self.latency_matrix {
            if m.len() != self.nodes || m.iter().any(|r| r.len() != self.nodes) {
                return Err(invalid("latency_matrix", format!("must be {0}x{0}", self.nodes)));
            }
            if m.iter().flatten().any(|v| !(*v >= 0.0)) {
                return Err(invalid("latency_matrix", "latencies must be non-negative"));
            }
        }
        if let Some(c) = &self.client_latency_ms {
            if c.len() != self.nodes {
                return Err(invalid("client_latency_ms", format!("must list {} latencies", self.nodes)));
            }
            if c.iter().any(|v| !(*v >= 0.0)) {
                return Err(invalid("client_latency_ms", "latencies must be non-negative"));
            }
        }
        if self.blocks == 0 {
            return Err(invalid("blocks", "must be at least 1"));
        }
        if self.file_bytes == 0 {
            return Err(invalid("file_bytes", "must be at least 1"));
        }
        self.por_config().validate().map_err(|e| invalid("por", e.to_string()))
    }

    pub fn max_latency_ms(&self) -> f64 {
        let finite = |v: &f64| v.is_finite();
        let mut max = if self.latency_matrix.is_some() { 0.0 } else { self.latency_ms };
        for v in self.latency_matrix.iter().flatten().flatten().chain(self.client_latency_ms.iter().flatten()) {
            if finite(v) {
                max = f64::max(max, *v);
            }
        }
        max + self.jitter_ms
    }

    pub fn por_config(&self) -> PorConfig {
        let timeout = self.por.timeout_ms.unwrap_or_else(|| ((self.max_latency_ms() * 10.0).ceil() as u64).max(10));
        PorConfig {
            k: self.por.k,
            rate: self.por.rate,
            rate_increment: self.por.rate_increment.unwrap_or(self.por.rate),
            campaign_timeout_ms: timeout,
            max_retries: self.por.max_retries,
        }
    }

    pub fn link_model(&self) -> LinkModel {
        let mut links = LinkModel::uniform(self.latency_ms, self.jitter_ms, self.seed);
        if let Some(m) = &self.latency_matrix {
            for (i, row) in m.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    links.pairs.insert((node_address(i), node_address(j)), *v);
                }
            }
        }
        if let Some(c) = &self.client_latency_ms {
            for (i, v) in c.iter().enumerate() {
                links.set_link(CLIENT_ADDRESS, &node_address(i), *v);
            }
        }
        links
    }
}

/// Address of the `i`-th (0-based) simulated node.
pub fn node_address(i: usize) -> String {
    format!("127.0.0.1:{}", 17001 + i)
}

pub struct SimCluster {
    pub net: SimNetwork,
    pub nf: NodeFile,
    pub por: PorConfig,
}

impl SimCluster {
    pub fn build(spec: &ClusterSpec) -> Result<SimCluster> {
        Self::build_with(spec, |_| Behavior::Honest)
    }

    /// Builds a cluster where node `i` gets `behavior(i)`.
    pub fn build_with(spec: &ClusterSpec, behavior: impl Fn(usize) -> Behavior) -> Result<SimCluster> {
        spec.validate()?;
        let nf = NodeFile::new((0..spec.nodes).map(node_address))?;
        let mut net = SimNetwork::new(spec.link_model());
        let quota = (spec.quota_gb * 1e9) as u64;
        for i in 0..spec.nodes {
            net.add_node(NodeService::new(node_address(i), BlockStore::in_memory(quota), nf.clone(), behavior(i)));
        }
        Ok(SimCluster { net, nf, por: spec.por_config() })
    }

    pub fn upload(&self, file: &[u8], blocks: usize, seed: u64) -> Result<UploadReport> {
        let mut opts = UploadOptions::new(blocks, self.por.clone(), seed);
        opts.timestamp_ns = Some(seed);
        upload(&self.net, &self.nf, file, &opts)
    }

    pub fn download_options(&self, mode: FetchMode) -> DownloadOptions {
        DownloadOptions { mode, timeout: Duration::from_millis(self.por.campaign_timeout_ms) }
    }

    /// Bytes held by each node, in node-file order.
    pub fn stored_bytes(&self) -> Vec<(String, u64)> {
        self.net.nodes().map(|n| (n.address().to_string(), n.used())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Fairness,
    DecisionTime,
    BdamSpeedup,
    Capacity,
}

impl std::str::FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "fairness" => Experiment::Fairness,
            "decision_time" => Experiment::DecisionTime,
            "bdam_speedup" => Experiment::BdamSpeedup,
            "capacity" => Experiment::Capacity,
            _ => return Err(format!("unknown experiment {s:?}")),
        })
    }
}

/// Per-event inputs drawn from the cluster seed.
fn workload(spec: &ClusterSpec) -> Vec<(u64, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.events)
        .map(|_| {
            let seed = rng.next_u64();
            let mut file = vec![0u8; spec.file_bytes];
            rng.fill(file.as_mut_slice());
            (seed, file)
        })
        .collect()
}

fn rule_name(rule: Option<RateRule>) -> &'static str {
    match rule {
        None => "first",
        Some(RateRule::Unused) => "unused",
        Some(RateRule::WithinRate) => "within_rate",
        Some(RateRule::Escalated) => "escalated",
    }
}

/// Runs one experiment. Every row uses the virtual clock or no clock, so
/// the output depends only on the `ClusterSpec`.
pub fn run_experiment(spec: &ClusterSpec, experiment: Experiment) -> Result<Vec<MetricsRow>> {
    let cluster = SimCluster::build(spec)?;
    let mut rows = Vec::new();
    for (event, (seed, file)) in workload(spec).into_iter().enumerate() {
        let event = event as u64;
        let report = cluster.upload(&file, spec.blocks, seed)?;
        match experiment {
            Experiment::Fairness => {
                let escalated: BTreeMap<usize, f64> = report.escalations.iter().map(|e| (e.block, e.to)).collect();
                for p in &report.placements {
                    let index = cluster.nf.index_of(&p.node).map_or(0, |i| i + 1);
                    let mut ctx = format!("block={};node={};rule={}", p.block + 1, p.node, rule_name(p.rule));
                    if let Some(rate) = escalated.get(&p.block) {
                        ctx.push_str(&format!(";rate={rate}"));
                    }
                    rows.push(MetricsRow::new(event, MetricKind::BlockNode, index as f64, Clock::None, ctx));
                }
            }
            Experiment::DecisionTime => {
                for p in &report.placements {
                    if let Some(d) = p.decision_ms {
                        rows.push(MetricsRow::new(
                            event,
                            MetricKind::DecisionMs,
                            d,
                            Clock::Virtual,
                            format!("block={};node={}", p.block + 1, p.node),
                        ));
                    }
                }
            }
            Experiment::BdamSpeedup => {
                let bi = download(&cluster.net, &cluster.nf, &report.meta, &cluster.download_options(FetchMode::Bidirectional))?;
                let uni = download(&cluster.net, &cluster.nf, &report.meta, &cluster.download_options(FetchMode::Unidirectional))?;
                if bi.plaintext != file || uni.plaintext != file {
                    return Err(Error::Integrity(format!("event {event}: recovered file differs")));
                }
                for (mode, r) in [("bi", &bi), ("uni", &uni)] {
                    rows.push(MetricsRow::new(
                        event,
                        MetricKind::StageMs,
                        r.access_ms(),
                        Clock::Virtual,
                        format!("mode={mode};stage=access;rounds={}", r.rounds),
                    ));
                    rows.push(MetricsRow::new(
                        event,
                        MetricKind::ProcessingRateKbps,
                        file.len() as f64 * 8.0 / 1000.0 / (r.access_ms() / 1000.0),
                        Clock::Virtual,
                        format!("mode={mode}"),
                    ));
                }
                let s = speedup(bi.access_ms(), uni.access_ms()).map_err(|e| Error::Usage(e.to_string()))?;
                rows.push(MetricsRow::new(
                    event,
                    MetricKind::SpeedupPct,
                    s * 100.0,
                    Clock::Virtual,
                    format!("blocks={}", report.placements.len()),
                ));
            }
            Experiment::Capacity => {
                rows.push(MetricsRow::new(event, MetricKind::StoredBytes, report.chain_bytes as f64, Clock::None, "scope=chain"));
            }
        }
    }
    if experiment == Experiment::Capacity {
        let stored = cluster.stored_bytes();
        let total: u64 = stored.iter().map(|s| s.1).sum();
        for (node, bytes) in stored {
            rows.push(MetricsRow::new(spec.events as u64, MetricKind::StoredBytes, bytes as f64, Clock::None, format!("scope=node;node={node}")));
        }
        rows.push(MetricsRow::new(spec.events as u64, MetricKind::StoredBytes, total as f64, Clock::None, "scope=total"));
    }
    Ok(rows)
}

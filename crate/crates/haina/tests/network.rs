use std::time::Duration;

use haina::client::CLIENT_ADDRESS;
use haina::cluster::{node_address, run_experiment, ClusterSpec, Experiment, SimCluster};
use haina::error::NetError;
use haina::metrics::to_csv_string;
use haina::node::{Behavior, NodeService};
use haina::resolver::{find_holders, resolve};
use haina::sim::{LinkModel, SimNetwork};
use haina::store::BlockStore;
use haina::transport::{as_ms, Transport};
use haina_core::chain::{build_chain, content_address};
use haina_core::lock::{lock_chain, Mask};
use haina_core::por::NodeFile;
use haina_core::wire::{decode_frame, encode_frame, MessageKind, WireMessage, MAX_FRAME};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sim(nodes: usize, links: LinkModel) -> (SimNetwork, NodeFile) {
    let nf = NodeFile::new((0..nodes).map(node_address)).unwrap();
    let mut net = SimNetwork::new(links);
    for i in 0..nodes {
        net.add_node(NodeService::new(node_address(i), BlockStore::in_memory(1 << 30), nf.clone(), Behavior::Honest));
    }
    (net, nf)
}

fn locked_block(tag: u8) -> (haina_core::Digest, Vec<u8>) {
    let chain = build_chain(vec![vec![tag; 40]]).unwrap();
    let chain = lock_chain(chain, &Mask::new([7; 32]).unwrap()).unwrap();
    let b = &chain.blocks()[0];
    (content_address(b), b.encode())
}

fn store_on(net: &SimNetwork, node: &str, block: &[u8]) {
    let req = haina::protocol::store_ready(block.to_vec(), 1, false, 1.0, Duration::from_secs(1));
    let frames = net.call(CLIENT_ADDRESS, Duration::ZERO, node, req, Duration::from_secs(1)).into_frames().unwrap();
    assert_eq!(frames[0].msg.kind, MessageKind::StoreAck);
}

#[test]
fn ping_round_trip_is_twice_the_link_latency() {
    let (net, _) = sim(2, LinkModel::uniform(25.0, 0.0, 1));
    let out = net.call(&node_address(0), Duration::ZERO, &node_address(1), WireMessage::new(MessageKind::Ping), Duration::from_secs(1));
    assert_eq!(out.frame(MessageKind::Pong).unwrap().at, Duration::from_millis(50));

    let (net, _) = sim(2, LinkModel::uniform(25.0, 2.0, 1));
    for _ in 0..50 {
        let out = net.call(&node_address(0), Duration::ZERO, &node_address(1), WireMessage::new(MessageKind::Ping), Duration::from_secs(1));
        let rtt = as_ms(out.elapsed);
        assert!((50.0..54.0).contains(&rtt), "{rtt}");
    }
}

#[test]
fn partitioned_link_times_out_and_unknown_node_is_unreachable() {
    let mut links = LinkModel::uniform(5.0, 0.0, 1);
    links.set_link(&node_address(0), &node_address(1), f64::INFINITY);
    let (net, _) = sim(3, links);
    let t = Duration::from_millis(300);
    let out = net.call(&node_address(0), Duration::ZERO, &node_address(1), WireMessage::new(MessageKind::Ping), t);
    assert!(matches!(out.result, Err(NetError::Timeout(_))));
    assert_eq!(out.elapsed, t);
    let out = net.call(&node_address(0), Duration::ZERO, &node_address(2), WireMessage::new(MessageKind::Ping), t);
    assert!(out.result.is_ok());
    let out = net.call(&node_address(0), Duration::ZERO, "10.9.9.9:1", WireMessage::new(MessageKind::Ping), t);
    assert!(matches!(out.result, Err(NetError::Unreachable(_))));
}

#[test]
fn resolver_prefers_the_nearest_holder() {
    let mut links = LinkModel::uniform(20.0, 0.0, 1);
    // Node 3 is 5 ms away from the user, node 9 is 50 ms away.
    links.set_link(CLIENT_ADDRESS, &node_address(2), 5.0);
    links.set_link(CLIENT_ADDRESS, &node_address(8), 50.0);
    let (net, nf) = sim(10, links);
    let (addr, block) = locked_block(1);
    store_on(&net, &node_address(8), &block);
    store_on(&net, &node_address(2), &block);
    let t = Duration::from_secs(1);
    let (holder, elapsed) = resolve(&net, CLIENT_ADDRESS, Duration::ZERO, &addr, &nf, t).unwrap();
    assert_eq!(holder, node_address(2));
    assert_eq!(elapsed, Duration::from_millis(10));
    let all = find_holders(&net, CLIENT_ADDRESS, Duration::ZERO, &addr, &nf, t);
    assert_eq!(all.holders, vec![node_address(2), node_address(8)]);
}

#[test]
fn resolver_finds_unique_holder_and_reports_misses() {
    let (net, nf) = sim(10, LinkModel::uniform(5.0, 1.0, 4));
    let (addr, block) = locked_block(2);
    store_on(&net, &node_address(6), &block);
    let t = Duration::from_secs(1);
    let (holder, _) = resolve(&net, CLIENT_ADDRESS, Duration::ZERO, &addr, &nf, t).unwrap();
    assert_eq!(holder, node_address(6));
    let (absent, _) = locked_block(3);
    let err = resolve(&net, CLIENT_ADDRESS, Duration::ZERO, &absent, &nf, t).unwrap_err();
    assert!(matches!(err, NetError::Remote { ref code, .. } if code == "not_found"));
    // Negative answers never make it into the holder list.
    assert!(find_holders(&net, CLIENT_ADDRESS, Duration::ZERO, &absent, &nf, t).holders.is_empty());
}

#[test]
fn get_block_for_absent_address_is_not_found() {
    let (net, _) = sim(2, LinkModel::uniform(5.0, 0.0, 1));
    let (addr, _) = locked_block(9);
    let req = WireMessage::new(MessageKind::GetBlock).with("address", addr.to_hex());
    let err = net.call(CLIENT_ADDRESS, Duration::ZERO, &node_address(0), req, Duration::from_secs(1)).into_frames().unwrap_err();
    assert!(matches!(err, NetError::Remote { ref code, .. } if code == "not_found"));
    let req = WireMessage::new(MessageKind::HasBlock).with("address", addr.to_hex());
    let f = net.call(CLIENT_ADDRESS, Duration::ZERO, &node_address(0), req, Duration::from_secs(1)).into_frames().unwrap();
    assert_eq!(f[0].msg.get("present"), Some("0"));
}

#[test]
fn node_file_is_served_with_its_digest() {
    let (net, nf) = sim(3, LinkModel::uniform(1.0, 0.0, 1));
    let f = net
        .call(CLIENT_ADDRESS, Duration::ZERO, &node_address(1), WireMessage::new(MessageKind::GetNf), Duration::from_secs(1))
        .into_frames()
        .unwrap();
    assert_eq!(f[0].msg.kind, MessageKind::NfData);
    assert_eq!(f[0].msg.body, nf.canonical_bytes());
    assert_eq!(f[0].msg.get("digest"), Some(nf.digest().to_hex().as_str()));
}

fn seeded_trace(seed: u64) -> (Vec<haina::sim::TraceEntry>, String) {
    let mut spec = ClusterSpec::uniform(7, 10.0, seed);
    spec.jitter_ms = 3.0;
    let c = SimCluster::build(&spec).unwrap();
    let report = c.upload(&vec![42u8; 5000], 9, seed).unwrap();
    haina::client::download(&c.net, &c.nf, &report.meta, &c.download_options(haina_core::bdam::FetchMode::Bidirectional))
        .unwrap();
    (c.net.trace(), report.meta.to_json())
}

#[test]
fn seeded_runs_replay_identically() {
    let (a, meta_a) = seeded_trace(5);
    let (b, meta_b) = seeded_trace(5);
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(meta_a, meta_b);
    let (c, _) = seeded_trace(6);
    assert_ne!(a, c);
}

#[test]
fn sim_csv_is_byte_identical_per_seed() {
    let mut spec = ClusterSpec::uniform(6, 5.0, 99);
    spec.events = 3;
    spec.file_bytes = 4000;
    spec.jitter_ms = 1.0;
    for exp in [Experiment::Fairness, Experiment::DecisionTime, Experiment::BdamSpeedup, Experiment::Capacity] {
        let a = to_csv_string(&run_experiment(&spec, exp).unwrap());
        let b = to_csv_string(&run_experiment(&spec, exp).unwrap());
        assert_eq!(a, b, "{exp:?}");
        assert!(a.starts_with("event,kind,value,clock,context\n"));
    }
}

#[test]
fn invalid_spec_fields_are_named() {
    let err = ClusterSpec::from_json(r#"{"nodes": 1, "quota_gb": 1, "seed": 1}"#).unwrap_err();
    assert!(err.to_string().contains("nodes"), "{err}");
    let err = ClusterSpec::from_json(r#"{"nodes": 3, "quota_gb": 1}"#).unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
    let err = ClusterSpec::from_json(r#"{"nodes": 3, "quota_gb": 1, "seed": 2, "latency_matrix": [[0]]}"#).unwrap_err();
    assert!(err.to_string().contains("latency_matrix"), "{err}");
    let err = ClusterSpec::from_json(r#"{"nodes": 3, "quota_gb": 1, "seed": 2, "por": {"rate": 0}}"#).unwrap_err();
    assert!(err.to_string().contains("por"), "{err}");
    ClusterSpec::from_json(r#"{"nodes": 3, "quota_gb": 1, "seed": 2}"#).unwrap();
}

#[test]
fn mutated_frames_never_crash_the_decoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfa11);
    let mut seeds = Vec::new();
    for kind in MessageKind::ALL {
        let mut msg = WireMessage::new(*kind).with("address", "ab").with("k", 1.5);
        if rng.random_bool(0.5) {
            msg = msg.with_body((0..rng.random_range(0..64)).map(|_| rng.random()).collect());
        }
        seeds.push(encode_frame(&msg).unwrap());
    }
    let mut decoded = 0;
    for _ in 0..100_000 {
        let mut f = seeds[rng.random_range(0..seeds.len())].clone();
        match rng.random_range(0..4) {
            0 => {
                for _ in 0..rng.random_range(1..4) {
                    let i = rng.random_range(0..f.len());
                    f[i] = rng.random();
                }
            }
            1 => f.truncate(rng.random_range(0..f.len())),
            2 => f.extend((0..rng.random_range(1..8)).map(|_| rng.random::<u8>())),
            _ => {
                let i = rng.random_range(0..f.len());
                f.insert(i, rng.random());
            }
        }
        if let Ok(m) = decode_frame(&f) {
            decoded += 1;
            assert_eq!(encode_frame(&m).unwrap(), f);
        }
    }
    assert!(decoded < 100_000);
    let mut oversize = seeds[0].clone();
    oversize[9..17].copy_from_slice(&(MAX_FRAME as u64).to_be_bytes());
    assert!(decode_frame(&oversize).is_err());
}

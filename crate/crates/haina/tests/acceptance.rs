//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use haina::client::{download, UploadReport};
use haina::cluster::{run_experiment, ClusterSpec, Experiment, SimCluster};
use haina::meta::MetaFile;
use haina::metrics::{MetricKind, MetricsRow};
use haina_core::bdam::FetchMode;
use haina_core::chain::{build_chain, verify_chain, Block, LockState, PointerField, Violation};
use haina_core::crypto::{
    ciphertext_len, embed_key_shards, extract_key_shards, split_ciphertext, CipherConfig, FileKey,
};
use haina_core::lock::{lock_chain, unlock_chain, unlock_pointers, Mask};
use haina_core::wire::{decode_frame, encode_frame, MessageKind, WireMessage};
use haina_core::Digest;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_file(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut f = vec![0u8; len];
    rng.fill_bytes(&mut f);
    f
}

/// Consecutive holders differ; the tail/header pair too when a third node
/// exists to break it.
fn adjacency_violations(report: &UploadReport, nodes: usize) -> usize {
    let p = &report.placements;
    let mut bad = p.windows(2).filter(|w| w[0].node == w[1].node).count();
    if nodes >= 3 && p.len() >= 3 && p[0].node == p[p.len() - 1].node {
        bad += 1;
    }
    bad
}

fn round_trip() -> Check {
    const CASES: usize = 200;
    const MAX: f64 = 4.0 * 1024.0 * 1024.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0001);
    let ns = [1usize, 2, 4, 20, 64];
    let mut bytes = 0usize;
    for case in 0..CASES {
        let len = match case {
            0 => 1,
            1 => MAX as usize,
            _ => MAX.powf(rng.random::<f64>()).round().max(1.0) as usize,
        };
        let allowed: Vec<usize> = ns.iter().copied().filter(|n| *n <= ciphertext_len(len)).collect();
        let n = allowed[case % allowed.len()];
        let seed = rng.next_u64();
        let file = random_file(&mut rng, len);
        let cluster = SimCluster::build(&ClusterSpec::uniform(5, 5.0, seed)).map_err(|e| e.to_string())?;
        let report = cluster.upload(&file, n, seed).map_err(|e| format!("case {case} upload: {e}"))?;
        let meta = MetaFile::parse(report.meta.to_json().as_bytes()).map_err(|e| e.to_string())?;
        let got = download(&cluster.net, &cluster.nf, &meta, &cluster.download_options(FetchMode::Bidirectional))
            .map_err(|e| format!("case {case} (len {len}, N {n}) download: {e}"))?;
        ensure(got.plaintext == file, || format!("case {case} (len {len}, N {n}) differs"))?;
        bytes += len;
    }
    Ok(format!("{CASES} cases, {bytes} bytes, all byte-exact"))
}

fn anti_traverse() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0002);
    let cluster = SimCluster::build(&ClusterSpec::uniform(5, 5.0, 2)).map_err(|e| e.to_string())?;
    let mut uploads = Vec::new();
    for i in 0..100 {
        let n = rng.random_range(2..=32);
        let len = rng.random_range(n * 16..=n * 400);
        let file = random_file(&mut rng, len);
        uploads.push(cluster.upload(&file, n, 1000 + i).map_err(|e| e.to_string())?);
    }
    let stored: BTreeSet<Digest> = cluster.net.nodes().flat_map(|n| n.addresses()).collect();
    let mut blocks_checked = 0;
    for (i, up) in uploads.iter().enumerate() {
        let n = up.placements.len();
        for (j, p) in up.placements.iter().enumerate() {
            let raw = cluster.net.node(&p.node).and_then(|node| node.block(&p.address)).ok_or("block missing")?;
            let block = Block::decode(&raw, LockState::Locked).map_err(|e| e.to_string())?;
            let ptr = block.pointers;
            ensure(!stored.contains(&ptr.previous_hash) && !stored.contains(&ptr.next_hash), || {
                format!("chain {i} block {j}: a locked pointer resolves")
            })?;
            let (prev, next) = unlock_pointers(&block, &up.meta.mask);
            let want_prev = up.placements[(j + n - 1) % n].address;
            let want_next = up.placements[(j + 1) % n].address;
            ensure(prev == want_prev && next == want_next && stored.contains(&prev) && stored.contains(&next), || {
                format!("chain {i} block {j}: unlocked pointers do not resolve")
            })?;
            blocks_checked += 1;
        }
    }
    Ok(format!("100 chains, {blocks_checked} locked blocks, {} stored addresses", stored.len()))
}

fn adjacency() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0003);
    let mut uploads = 0;
    let mut pairs = 0;
    for nodes in [2usize, 3, 5, 10, 47] {
        let cluster = SimCluster::build(&ClusterSpec::uniform(nodes, 5.0, nodes as u64)).map_err(|e| e.to_string())?;
        for n in [2usize, 3, 4, 7, 20, 64] {
            for rep in 0..4 {
                let file = random_file(&mut rng, n * 64 + rep * 100);
                let report = cluster.upload(&file, n, rng.next_u64()).map_err(|e| e.to_string())?;
                let bad = adjacency_violations(&report, nodes);
                ensure(bad == 0, || format!("{nodes} nodes, N {n}: {bad} adjacent pairs share a node"))?;
                uploads += 1;
                pairs += n - 1;
            }
        }
    }
    Ok(format!("{uploads} uploads, {pairs} consecutive pairs, 0 violations"))
}

fn fairness() -> Check {
    let mut spec = ClusterSpec::uniform(47, 5.0, 0x0004);
    spec.blocks = 20;
    spec.events = 200;
    spec.file_bytes = 32 * 1024;
    spec.por.rate = 0.1;
    let rows = run_experiment(&spec, Experiment::Fairness).map_err(|e| e.to_string())?;
    let placements: Vec<&MetricsRow> = rows.iter().filter(|r| r.kind == MetricKind::BlockNode).collect();
    ensure(placements.len() == 200 * 20, || format!("{} placement rows", placements.len()))?;

    let mut per_event: BTreeMap<(u64, usize), usize> = BTreeMap::new();
    let mut escalated = BTreeSet::new();
    let mut totals = vec![0usize; 48];
    for r in &placements {
        let idx = r.value as usize;
        *per_event.entry((r.event, idx)).or_insert(0) += 1;
        totals[idx] += 1;
        if r.context_value("rule") == Some("escalated") {
            escalated.insert(r.event);
        }
    }
    for ((event, idx), count) in &per_event {
        ensure(*count <= 2 || escalated.contains(event), || {
            format!("event {event}: node {idx} holds {count} blocks without escalation")
        })?;
    }
    let total = placements.len() as f64;
    let low_third: usize = totals[1..=16].iter().sum();
    let low_share = low_third as f64 / total;
    let expected = total / 47.0;
    let chi2: f64 = totals[1..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 46 degrees of freedom; the 0.999 quantile is about 81.4.
    ensure(chi2 > 81.4, || format!("distribution looks uniform, chi2 {chi2:.1}"))?;
    ensure(low_share > 0.5, || format!("lowest third of indices holds only {:.1}%", low_share * 100.0))?;
    let max_event = per_event.values().max().copied().unwrap_or(0);
    Ok(format!(
        "200 events, max per-event count {max_event}, {} escalated events, indices 1-16 hold {:.1}%, chi2 {chi2:.0}",
        escalated.len(),
        low_share * 100.0
    ))
}

fn bdam_speedup() -> Check {
    let mut spec = ClusterSpec::uniform(10, 5.0, 0x0005);
    spec.blocks = 21;
    spec.events = 10;
    spec.file_bytes = 100_000;
    let rows = run_experiment(&spec, Experiment::BdamSpeedup).map_err(|e| e.to_string())?;
    let uni_rounds: Vec<&MetricsRow> = rows
        .iter()
        .filter(|r| r.kind == MetricKind::StageMs && r.context_value("mode") == Some("uni"))
        .collect();
    // Header exchange plus 20 fetches of a HAS_BLOCK and a GET_BLOCK round trip.
    for r in &uni_rounds {
        ensure(r.value == 10.0 + 20.0 * 20.0 && r.context_value("rounds") == Some("20"), || {
            format!("unidirectional access {} ms over {:?} rounds", r.value, r.context_value("rounds"))
        })?;
    }
    let speedups: Vec<f64> = rows.iter().filter(|r| r.kind == MetricKind::SpeedupPct).map(|r| r.value / 100.0).collect();
    ensure(speedups.len() == 10, || format!("{} speedup rows", speedups.len()))?;
    for s in &speedups {
        ensure((0.40..=0.55).contains(s), || format!("speedup {s:.4} outside [0.40, 0.55]"))?;
    }
    let mean = speedups.iter().sum::<f64>() / speedups.len() as f64;
    Ok(format!("N 21, per-fetch 20 ms, mean speedup {:.2}% over {} downloads", mean * 100.0, speedups.len()))
}

fn decision_latency() -> Check {
    let mut out = Vec::new();
    for latency in [5.0, 25.0] {
        let mut spec = ClusterSpec::uniform(12, latency, 0x0006);
        spec.events = 10;
        spec.file_bytes = 8 * 1024;
        let a = run_experiment(&spec, Experiment::DecisionTime).map_err(|e| e.to_string())?;
        let b = run_experiment(&spec, Experiment::DecisionTime).map_err(|e| e.to_string())?;
        ensure(a == b, || "seeded decision-time runs differ".into())?;
        let values: Vec<f64> = a.iter().filter(|r| r.kind == MetricKind::DecisionMs).map(|r| r.value).collect();
        ensure(values.len() == 10 * 19, || format!("{} decision rows", values.len()))?;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        ensure(mean >= 2.0 * latency && mean <= 4.0 * latency, || {
            format!("mean decision {mean} ms outside [{}, {}]", 2.0 * latency, 4.0 * latency)
        })?;
        out.push(format!("l={latency} ms mean {mean:.3} ms"));
    }
    Ok(format!("{}, reruns identical", out.join(", ")))
}

fn capacity() -> Check {
    let mut sums = Vec::new();
    for nodes in [2usize, 5, 47] {
        let mut spec = ClusterSpec::uniform(nodes, 5.0, 0x0007);
        spec.events = 12;
        spec.file_bytes = 20_000;
        spec.blocks = 9;
        let rows = run_experiment(&spec, Experiment::Capacity).map_err(|e| e.to_string())?;
        let pick = |scope: &str| -> f64 {
            rows.iter().filter(|r| r.context_value("scope") == Some(scope)).map(|r| r.value).sum()
        };
        let chains = pick("chain");
        let per_node = pick("node");
        let total = pick("total");
        ensure(chains == per_node && per_node == total, || {
            format!("{nodes} nodes: chains {chains} B, nodes hold {per_node} B")
        })?;
        sums.push(total);
    }
    ensure(sums.windows(2).all(|w| w[0] == w[1]), || format!("totals vary with node count: {sums:?}"))?;
    Ok(format!("B = {} bytes held exactly for n in {{2, 5, 47}}", sums[0]))
}

fn unit_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0008);

    for _ in 0..200 {
        let n = rng.random_range(1..=16);
        let chain = build_chain((0..n).map(|_| random_file(&mut rng, 24)).collect()).map_err(|e| e.to_string())?;
        let mut m = [0u8; 32];
        rng.fill_bytes(&mut m);
        m[0] |= 1;
        let mask = Mask::new(m).map_err(|e| e.to_string())?;
        let back = unlock_chain(lock_chain(chain.clone(), &mask).map_err(|e| e.to_string())?, &mask)
            .map_err(|e| e.to_string())?;
        ensure(back == chain, || "lock then unlock is not the identity".into())?;
    }

    for n in 1..=64usize {
        let len = 16 * rng.random_range(4..40);
        let ef = random_file(&mut rng, len);
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        let key = FileKey(k);
        let slices = split_ciphertext(&ef, n).map_err(|e| e.to_string())?;
        ensure(slices.concat() == ef, || format!("split/concat differs for N {n}"))?;
        let domains = embed_key_shards(&slices, &key);
        let (got_key, got_slices) = extract_key_shards(&domains).map_err(|e| e.to_string())?;
        ensure(got_key == key && got_slices == slices, || format!("key shards do not round-trip for N {n}"))?;
    }

    let kinds = MessageKind::ALL;
    let mut frames = Vec::new();
    for kind in kinds {
        let len = rng.random_range(0..48);
        let body = random_file(&mut rng, len);
        frames.push(encode_frame(&WireMessage::new(*kind).with("address", "00ff").with("n", 7).with_body(body)).unwrap());
    }
    let mut rejected = 0;
    for _ in 0..100_000 {
        let mut f = frames[rng.random_range(0..frames.len())].clone();
        let flips = rng.random_range(1..=3);
        for _ in 0..flips {
            let i = rng.random_range(0..f.len());
            f[i] ^= 1 << rng.random_range(0..8);
        }
        if rng.random_bool(0.2) {
            f.truncate(rng.random_range(0..f.len()));
        }
        match std::panic::catch_unwind(|| decode_frame(&f)) {
            Ok(Err(_)) => rejected += 1,
            Ok(Ok(_)) => {}
            Err(_) => return Err("frame decoder panicked".into()),
        }
    }

    for _ in 0..100 {
        let mut m = [0u8; 32];
        rng.fill_bytes(&mut m);
        m[31] |= 0x80;
        let mut iv = [0u8; 16];
        rng.fill_bytes(&mut iv);
        let meta = MetaFile::new(
            format!("10.0.{}.{}:{}", rng.random::<u8>(), rng.random::<u8>(), rng.random_range(1..65535u16)),
            Digest(m),
            Mask::new(m).map_err(|e| e.to_string())?,
            rng.random_range(1..100),
            CipherConfig::sm4_cbc(iv),
            rng.random(),
        );
        ensure(MetaFile::parse(meta.to_json().as_bytes()).as_ref() == Ok(&meta), || "meta codec round trip".into())?;
    }

    for _ in 0..200 {
        let n = rng.random_range(1..=12);
        let mut chain = build_chain((0..n).map(|_| random_file(&mut rng, 16)).collect()).map_err(|e| e.to_string())?;
        let j = rng.random_range(0..n);
        let b = rng.random_range(0..16);
        chain.blocks_mut()[j].data[b] ^= 0x01;
        let mut got = verify_chain(&chain).map_err(|e| e.to_string())?;
        let mut want = vec![
            Violation { block: j, field: PointerField::Current },
            Violation { block: (j + n - 1) % n, field: PointerField::Next },
            Violation { block: (j + 1) % n, field: PointerField::Previous },
        ];
        got.sort();
        want.sort();
        want.dedup();
        ensure(got == want, || format!("tamper at block {j} of {n}: {got:?}"))?;
    }

    Ok(format!(
        "lock involution, key shards N 1-64, split/concat, 100000 mutated frames ({rejected} rejected, 0 panics), meta codec, tamper locality"
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 round-trip correctness", round_trip),
        ("2 anti-traverse", anti_traverse),
        ("3 adjacency", adjacency),
        ("4 fairness", fairness),
        ("5 bidirectional access speedup", bdam_speedup),
        ("6 decision latency", decision_latency),
        ("7 capacity scale", capacity),
        ("8 unit and property suites", unit_properties),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let clock = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = clock.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 8 acceptance criteria passed");
}

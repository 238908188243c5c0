#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use haina::client::{download, upload, DownloadOptions, UploadOptions, UploadReport};
use haina::cluster::{run_experiment, ClusterSpec, Experiment};
use haina::meta::MetaFile;
use haina::metrics::{write_csv, Clock, MetricKind, MetricsRow};
use haina::node::{Behavior, NodeService};
use haina::store::BlockStore;
use haina::tcp::{serve, TcpTransport};
use haina::transport::Transport;
use haina::{Error, Result};
use haina_core::bdam::FetchMode;
use haina_core::por::{update_node_file, NodeFile, PorConfig};
use haina_core::wire::{MessageKind, WireMessage};
use haina_core::Digest;

#[derive(Parser)]
#[command(name = "haina", version, about = "Chained, locked block storage over a peer node network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Storage node commands.
    Node {
        #[command(subcommand)]
        command: NodeCommand,
    },
    /// Encrypt, chain and place a file; writes its Meta File.
    Upload(UploadArgs),
    /// Recover a file from its Meta File.
    Download(DownloadArgs),
    /// Run an experiment on a simulated cluster and write metrics CSV.
    Sim(SimArgs),
}

#[derive(Subcommand)]
enum NodeCommand {
    /// Serve the node role until terminated.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    listen: String,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    quota_gb: f64,
    /// Node file listing the cluster, one host:port per line.
    #[arg(long)]
    nf: Option<PathBuf>,
    /// Fetch the node file from this node at startup.
    #[arg(long)]
    bootstrap: Option<String>,
}

#[derive(Args)]
struct UploadArgs {
    #[arg(long)]
    file: PathBuf,
    #[arg(long, default_value_t = 20)]
    blocks: usize,
    #[arg(long)]
    nf: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    rate: f64,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Seed for mask, IV and Beginner draws; random when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    meta_out: PathBuf,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bi,
    Uni,
}

#[derive(Args)]
struct DownloadArgs {
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    nf: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Bi)]
    mode: Mode,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    experiment: Experiment,
    #[arg(long)]
    out: PathBuf,
}

fn read(path: &Path, what: &str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_node_file(path: &Path) -> Result<NodeFile> {
    let text = String::from_utf8(read(path, "node file")?).map_err(|_| Error::Usage("node file is not UTF-8".into()))?;
    Ok(NodeFile::new(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))?)
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let f = fs::File::create(path)?;
    write_csv(f, rows).map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn bootstrap_node_file(local: NodeFile, peer: &str) -> Result<NodeFile> {
    let net = TcpTransport;
    let timeout = Duration::from_secs(5);
    let reply = net.call("", Duration::ZERO, peer, WireMessage::new(MessageKind::GetNf), timeout).into_frames()?;
    let msg = &reply[0].msg;
    let digest: Digest = msg
        .require("digest")
        .ok()
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| Error::Integrity(format!("{peer} sent a node file without digest")))?;
    let body = msg.body.clone();
    update_node_file(local, &digest, || Ok::<_, Error>(body)).map_err(|e| Error::Integrity(e.to_string()))
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    if !(args.quota_gb >= 0.0) {
        return Err(Error::Usage("--quota-gb must be non-negative".into()));
    }
    fs::create_dir_all(&args.data_dir)?;
    let store = BlockStore::open(&args.data_dir, (args.quota_gb * 1e9) as u64)
        .map_err(|e| Error::Usage(format!("data dir {}: {e}", args.data_dir.display())))?;
    let mut nf = match &args.nf {
        Some(p) => load_node_file(p)?,
        None => NodeFile::new([args.listen.as_str()])?,
    };
    if let Some(peer) = &args.bootstrap {
        nf = bootstrap_node_file(nf, peer)?;
    }
    let listener = TcpListener::bind(&args.listen).map_err(|e| Error::Usage(format!("bind {}: {e}", args.listen)))?;
    log::info!("serving {} with {} stored blocks, {} nodes known", args.listen, store.len(), nf.len());
    let node = Arc::new(NodeService::new(args.listen.clone(), store, nf, Behavior::Honest));
    serve(listener, node, &AtomicBool::new(false));
    Ok(())
}

fn upload_rows(report: &UploadReport, nf: &NodeFile) -> Vec<MetricsRow> {
    let t = &report.timings;
    let mut rows = vec![
        MetricsRow::new(0, MetricKind::StageMs, t.encrypt_ms, Clock::Wall, "stage=encrypt"),
        MetricsRow::new(0, MetricKind::StageMs, t.chain_ms, Clock::Wall, "stage=chain"),
        MetricsRow::new(0, MetricKind::StageMs, t.network_ms, Clock::Wall, "stage=placement"),
    ];
    for p in &report.placements {
        let index = nf.index_of(&p.node).map_or(0, |i| i + 1);
        let ctx = format!("block={};node={}", p.block + 1, p.node);
        rows.push(MetricsRow::new(0, MetricKind::BlockNode, index as f64, Clock::None, ctx.clone()));
        rows.push(MetricsRow::new(0, MetricKind::StageMs, p.transfer_ms, Clock::Wall, format!("{ctx};stage=transfer")));
        if let Some(d) = p.decision_ms {
            rows.push(MetricsRow::new(0, MetricKind::DecisionMs, d, Clock::Wall, ctx));
        }
    }
    rows
}

fn cmd_upload(args: UploadArgs) -> Result<()> {
    let file = read(&args.file, "input file")?;
    let nf = load_node_file(&args.nf)?;
    let por = PorConfig {
        k: args.k,
        rate: args.rate,
        rate_increment: args.rate,
        campaign_timeout_ms: args.timeout_ms,
        ..PorConfig::default()
    };
    let opts = UploadOptions::new(args.blocks, por, args.seed.unwrap_or_else(rand::random));
    let report = upload(&TcpTransport, &nf, &file, &opts)?;
    fs::write(&args.meta_out, report.meta.to_json())?;
    if let Some(path) = &args.metrics_out {
        write_metrics(path, &upload_rows(&report, &nf))?;
    }
    for e in &report.escalations {
        log::warn!("rate raised from {} to {} at block {}", e.from, e.to, e.block + 1);
    }
    println!(
        "stored {} bytes as {} blocks, first Beginner {}, meta file {}",
        file.len(),
        report.placements.len(),
        report.meta.first_beginner,
        args.meta_out.display()
    );
    Ok(())
}

fn cmd_download(args: DownloadArgs) -> Result<()> {
    let meta = MetaFile::parse(&read(&args.meta, "meta file")?)?;
    let nf = load_node_file(&args.nf)?;
    let mode = match args.mode {
        Mode::Bi => FetchMode::Bidirectional,
        Mode::Uni => FetchMode::Unidirectional,
    };
    let opts = DownloadOptions { mode, timeout: Duration::from_millis(args.timeout_ms) };
    let report = download(&TcpTransport, &nf, &meta, &opts)?;
    fs::write(&args.out, &report.plaintext)?;
    if let Some(path) = &args.metrics_out {
        let mode = match args.mode {
            Mode::Bi => "bi",
            Mode::Uni => "uni",
        };
        let rows = [
            MetricsRow::new(0, MetricKind::StageMs, report.header_ms, Clock::Wall, format!("mode={mode};stage=header")),
            MetricsRow::new(
                0,
                MetricKind::StageMs,
                report.fetch_ms,
                Clock::Wall,
                format!("mode={mode};stage=fetch;rounds={}", report.rounds),
            ),
            MetricsRow::new(0, MetricKind::StageMs, report.access_ms(), Clock::Wall, format!("mode={mode};stage=access")),
            MetricsRow::new(0, MetricKind::StageMs, report.decrypt_ms, Clock::Wall, format!("mode={mode};stage=decrypt")),
        ];
        write_metrics(path, &rows)?;
    }
    println!("recovered {} bytes in {} fetch rounds", report.plaintext.len(), report.rounds);
    Ok(())
}

fn cmd_sim(args: SimArgs) -> Result<()> {
    let text = String::from_utf8(read(&args.spec, "cluster spec")?)
        .map_err(|_| Error::Usage("cluster spec is not UTF-8".into()))?;
    let spec = ClusterSpec::from_json(&text)?;
    let rows = run_experiment(&spec, args.experiment)?;
    write_metrics(&args.out, &rows)?;
    println!("{} rows (virtual clock) written to {}", rows.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("HAINA_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Node { command: NodeCommand::Serve(a) } => cmd_serve(a),
        Command::Upload(a) => cmd_upload(a),
        Command::Download(a) => cmd_download(a),
        Command::Sim(a) => cmd_sim(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("haina: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

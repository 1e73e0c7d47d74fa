use std::fs::{self, File};
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rrstream::accuracy::{
    run_accuracy_experiment, write_summary_csv, ExperimentResult, SamplingMode,
};
use rrstream::bench::{doubling_ratios, scaling_curve, BenchConfig, DEFAULT_MESSAGE_BYTES};
use rrstream::dataset::{
    ingest_csv, synth_dataset, StationDataset, SynthSpec, OFF_PEAK, RUSH_HOUR,
};
use rrstream::e2e::{find_collision_free_seed, run_in_process, run_live, E2eConfig, E2eOutcome};
use rrstream::{leakage, parse_bits, QueryFile};
use rrstream_core::rr::PrivatizedVector;
use rrstream_core::{AuditMode, DummyPolicy, OwnerId, PrivacyParams, ServerConfig, TableGeometry};
use rrstream_net::{client_submit, wait_result, ClientOptions, Server, ServerOptions};

/// Environment variable that moves the default server ports.
const BASE_PORT_ENV: &str = "RRSTREAM_BASE_PORT";
const DEFAULT_BASE_PORT: u16 = 7700;

#[derive(Parser)]
#[command(
    name = "rrstream",
    version,
    about = "Private, anonymous stream aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Posterior leakage of a "yes" answer.
    Leakage {
        p: f64,
        q: f64,
        /// Population fraction holding the attribute.
        pi: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic station dataset as CSV.
    Synth(SynthArgs),
    /// Estimator accuracy over station datasets.
    Accuracy(AccuracyArgs),
    /// Many owners through the full write path; compares backends.
    E2e(E2eArgs),
    /// Write throughput against table size.
    Bench(BenchArgs),
    /// Run one aggregation server.
    Serve(ServeArgs),
    /// Answer a query as one data owner, or fetch a finalized epoch.
    Client(ClientArgs),
    /// Validate a station_id,count CSV.
    Ingest {
        path: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Rush,
    OffPeak,
    Both,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "rush")]
    scenario: Scenario,
    #[arg(long)]
    stations: Option<usize>,
    #[arg(long)]
    total: Option<u64>,
    #[arg(long)]
    max: Option<u64>,
    #[arg(long)]
    min: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AccuracyArgs {
    #[arg(long, value_enum, default_value = "both")]
    scenario: Scenario,
    /// Use this CSV instead of a synthetic scenario.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0.995)]
    p: f64,
    #[arg(long, default_value_t = 0.999)]
    q: f64,
    #[arg(long, default_value_t = 1)]
    trials: u32,
    /// Repeat with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// per-owner, aggregate or expectation.
    #[arg(long, default_value = "aggregate")]
    mode: SamplingMode,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    InProcess,
    Live,
    Both,
}

#[derive(Args)]
struct E2eArgs {
    #[arg(long, default_value_t = 100)]
    clients: usize,
    #[arg(long, default_value_t = 512)]
    rows: u32,
    #[arg(long, default_value_t = 8)]
    attributes: usize,
    #[arg(long, default_value_t = 0.995)]
    p: f64,
    #[arg(long, default_value_t = 0.999)]
    q: f64,
    #[arg(long, default_value_t = 2)]
    parties: usize,
    #[arg(long, value_enum, default_value = "both")]
    backend: Backend,
    /// Running servers, comma-separated by id. Without it the live backend
    /// starts its own servers on localhost.
    #[arg(long, value_delimiter = ',')]
    servers: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    epoch_ms: u64,
    /// Advance the seed until no two owners pick the same row.
    #[arg(long)]
    collision_free: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
    rows: Vec<u32>,
    #[arg(long, default_value_t = 2)]
    parties: usize,
    /// Writers per epoch.
    #[arg(long, default_value_t = 16)]
    clients: usize,
    #[arg(long, default_value_t = 500)]
    duration_ms: u64,
    #[arg(long, default_value_t = DEFAULT_MESSAGE_BYTES)]
    message_bytes: u16,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditArg {
    Eager,
    Lazy,
    Off,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    server_id: u8,
    /// Bind address; defaults to this server's entry in --peers.
    #[arg(long)]
    listen: Option<String>,
    /// Every server's address indexed by server id, this one included.
    #[arg(long, value_delimiter = ',')]
    peers: Vec<String>,
    /// Number of servers when --peers is not given.
    #[arg(long, default_value_t = 2)]
    parties: usize,
    #[arg(long, default_value_t = 512)]
    rows: u32,
    #[arg(long, default_value_t = 2)]
    message_bytes: u16,
    #[arg(long, default_value_t = 1000)]
    epoch_ms: u64,
    #[arg(long, default_value_t = 5000)]
    peer_timeout_ms: u64,
    #[arg(long, value_enum, default_value = "eager")]
    audit: AuditArg,
    /// Reject all-zero writes instead of accepting them as dummies.
    #[arg(long)]
    strict_dummies: bool,
    /// Query to announce; its table geometry overrides --rows and
    /// --message-bytes.
    #[arg(long)]
    query: Option<PathBuf>,
    /// Exit after this long instead of running until killed.
    #[arg(long)]
    run_for_ms: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ClientArgs {
    /// JSON file with the query and its servers.
    #[arg(long)]
    query: PathBuf,
    /// True answer per attribute, e.g. 0,1,0.
    #[arg(long, conflicts_with = "fetch")]
    truth: Option<String>,
    /// Credential the owner id is derived from.
    #[arg(long, default_value = "owner")]
    owner: String,
    /// Instead of answering, fetch and decode this epoch's table.
    #[arg(long)]
    fetch: Option<u64>,
    #[command(flatten)]
    common: Common,
}

/// Exit status classes.
enum Failure {
    /// Bad input: exit 1.
    Invalid(anyhow::Error),
    /// Protocol or runtime failure: exit 2.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Invalid(e.into())
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Leakage { p, q, pi, common } => cmd_leakage(p, q, pi, &common),
        Command::Synth(a) => cmd_synth(a),
        Command::Accuracy(a) => cmd_accuracy(a),
        Command::E2e(a) => cmd_e2e(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Client(a) => cmd_client(a),
        Command::Ingest { path, common } => cmd_ingest(&path, &common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn out_writer(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?)
        }
        None => Box::new(io::stdout()),
    })
}

fn cmd_leakage(p: f64, q: f64, pi: f64, common: &Common) -> CmdResult {
    let report = leakage::run_leakage_report(p, q, pi).map_err(invalid)?;
    print!("{}", leakage::render_table(p, q, &report));
    if let Some(path) = &common.out {
        leakage::write_csv(p, q, &report, out_writer(&Some(path.clone()))?)?;
    }
    Ok(())
}

fn scenario_spec(s: Scenario) -> (&'static str, SynthSpec) {
    match s {
        Scenario::Rush | Scenario::Both => ("rush-hour", RUSH_HOUR),
        Scenario::OffPeak => ("off-peak", OFF_PEAK),
    }
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let (label, base) = scenario_spec(a.scenario);
    let spec = SynthSpec {
        stations: a.stations.unwrap_or(base.stations),
        total_vehicles: a.total.unwrap_or(base.total_vehicles),
        max_per_station: a.max.unwrap_or(base.max_per_station),
        min_per_station: a.min.unwrap_or(base.min_per_station),
    };
    let mut rng = ChaCha20Rng::seed_from_u64(a.common.seed);
    let d = synth_dataset(&spec, label, &mut rng).map_err(invalid)?;
    d.write_csv(out_writer(&a.common.out)?)?;
    if a.common.out.is_some() {
        eprintln!(
            "{} stations, {} vehicles, counts in [{}, {}]",
            d.stations().len(),
            d.total_vehicles(),
            d.min_count(),
            d.max_count()
        );
    }
    Ok(())
}

fn print_summary(results: &[ExperimentResult]) {
    println!(
        "{:<12} {:>6} {:>10} {:>20} {:>12}",
        "scenario", "seed", "# Stations", "Avg Relative Error", "Avg RMSE"
    );
    for r in results {
        println!(
            "{:<12} {:>6} {:>10} {:>20.6} {:>12.6}",
            r.scenario,
            r.seed,
            r.per_station.len(),
            r.avg_signed_relative_error,
            r.avg_rmse
        );
    }
}

fn cmd_accuracy(a: AccuracyArgs) -> CmdResult {
    let params = PrivacyParams::new(a.p, a.q).map_err(invalid)?;
    if a.trials == 0 || a.seeds == 0 {
        return Err(invalid(anyhow!("--trials and --seeds must be positive")));
    }
    let mut results = Vec::new();
    for seed in a.common.seed..a.common.seed + a.seeds {
        let datasets: Vec<StationDataset> = match &a.dataset {
            Some(path) => vec![ingest_csv(path).map_err(invalid)?],
            None => {
                let scenarios = match a.scenario {
                    Scenario::Both => vec![Scenario::Rush, Scenario::OffPeak],
                    s => vec![s],
                };
                scenarios
                    .into_iter()
                    .map(|s| {
                        let (label, spec) = scenario_spec(s);
                        synth_dataset(&spec, label, &mut ChaCha20Rng::seed_from_u64(seed))
                    })
                    .collect::<Result<_, _>>()
                    .map_err(invalid)?
            }
        };
        for d in &datasets {
            results.push(run_accuracy_experiment(d, &params, a.trials, seed, a.mode)?);
        }
    }
    print_summary(&results);
    if let Some(dir) = &a.common.out {
        fs::create_dir_all(dir)?;
        for r in &results {
            let path = dir.join(format!("accuracy-{}-seed{}.csv", r.scenario, r.seed));
            r.write_station_csv(File::create(path)?)?;
        }
        write_summary_csv(&results, File::create(dir.join("summary.csv"))?)?;
    }
    Ok(())
}

fn describe(name: &str, o: &E2eOutcome) {
    println!(
        "{name}: {} epochs, {} decoded writes, {} sent, {} collisions",
        o.tables.len(),
        o.decoded.values().sum::<usize>(),
        o.sent.values().sum::<usize>(),
        o.collisions
    );
}

fn local_cluster(
    parties: usize,
    geometry: TableGeometry,
    epoch_ms: u64,
    seed: u64,
) -> anyhow::Result<(Vec<Server>, Vec<String>)> {
    let listeners = (0..parties)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<Result<Vec<_>, _>>()?;
    let addrs: Vec<String> = listeners
        .iter()
        .map(|l| l.local_addr().map(|a| a.to_string()))
        .collect::<Result<_, _>>()?;
    let mut servers = Vec::new();
    for (id, listener) in listeners.into_iter().enumerate() {
        let mut opts = ServerOptions::new(ServerConfig {
            server_id: id as u8,
            servers: addrs.clone(),
            epoch_duration: Duration::from_millis(epoch_ms),
            peer_timeout: Duration::from_secs(5),
            geometry,
        });
        opts.seed = Some(seed);
        servers.push(Server::start(listener, opts)?);
    }
    Ok((servers, addrs))
}

fn cmd_e2e(a: E2eArgs) -> CmdResult {
    let params = PrivacyParams::new(a.p, a.q).map_err(invalid)?;
    if a.attributes == 0 || a.parties < 2 {
        return Err(invalid(anyhow!(
            "need at least one attribute and two parties"
        )));
    }
    let mut config = E2eConfig::new(
        a.clients,
        a.rows,
        a.attributes,
        params,
        a.parties,
        a.common.seed,
    );
    config.query.validate().map_err(invalid)?;
    if a.collision_free {
        config.seed = find_collision_free_seed(&config, a.common.seed, 1_000_000)?;
        println!("collision-free seed: {}", config.seed);
    }
    let geometry = config.query.geometry().map_err(invalid)?;

    let in_process = match a.backend {
        Backend::InProcess | Backend::Both => Some(run_in_process(&config)?),
        Backend::Live => None,
    };
    let live = match a.backend {
        Backend::Live | Backend::Both => {
            let started = Instant::now();
            let outcome = if a.servers.is_empty() {
                let (servers, addrs) = local_cluster(a.parties, geometry, a.epoch_ms, config.seed)?;
                let o = run_live(&config, &addrs, 16, Duration::from_secs(30));
                servers.into_iter().for_each(Server::shutdown);
                o?
            } else {
                if a.servers.len() != a.parties {
                    return Err(invalid(anyhow!(
                        "--servers lists {} servers, --parties is {}",
                        a.servers.len(),
                        a.parties
                    )));
                }
                run_live(&config, &a.servers, 16, Duration::from_secs(30))?
            };
            println!("live run took {:.2?}", started.elapsed());
            Some(outcome)
        }
        Backend::InProcess => None,
    };

    if let Some(o) = &in_process {
        describe("in-process", o);
    }
    if let Some(o) = &live {
        describe("live", o);
    }
    let matches = match (&in_process, &live) {
        (Some(x), Some(y)) => Some(x.decoded == y.decoded),
        _ => None,
    };
    if let Some(m) = matches {
        println!("decoded multisets {}", if m { "match" } else { "DIFFER" });
    }
    if let Some(path) = &a.common.out {
        let summary = serde_json::json!({
            "seed": config.seed,
            "clients": a.clients,
            "rows": a.rows,
            "attributes": a.attributes,
            "parties": a.parties,
            "in_process_collisions": in_process.as_ref().map(|o| o.collisions),
            "live_epochs": live.as_ref().map(|o| o.tables.keys().copied().collect::<Vec<_>>()),
            "multisets_match": matches,
        });
        writeln!(
            out_writer(&Some(path.clone()))?,
            "{}",
            serde_json::to_string_pretty(&summary)?
        )?;
    }
    if matches == Some(false) {
        return Err(Failure::Runtime(anyhow!(
            "backends decoded different writes"
        )));
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    if a.rows.iter().any(|r| *r < 2) || a.parties < 2 || a.message_bytes == 0 {
        return Err(invalid(anyhow!(
            "rows must be at least 2, parties at least 2, message bytes positive"
        )));
    }
    let base = BenchConfig {
        rows: a.rows[0],
        parties: a.parties,
        clients: a.clients,
        duration: Duration::from_millis(a.duration_ms),
        message_bytes: a.message_bytes,
        seed: a.common.seed,
    };
    let curve = scaling_curve(&base, &a.rows, a.reps)?;
    println!(
        "{:>6} {:>8} {:>14} {:>18}",
        "rows", "writes", "writes/sec", "per write (us)"
    );
    for (rows, median, report) in &curve {
        println!(
            "{:>6} {:>8} {:>14.1} {:>18.1}",
            rows,
            report.writes,
            report.writes_per_sec(),
            median.as_secs_f64() * 1e6
        );
    }
    let ratios = doubling_ratios(&curve);
    if !ratios.is_empty() {
        let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
        println!("cost ratio between consecutive sizes: {}", shown.join(", "));
    }
    if let Some(path) = &a.common.out {
        rrstream::bench::write_csv(&curve, out_writer(&Some(path.clone()))?)?;
    }
    Ok(())
}

fn default_peers(parties: usize) -> Result<Vec<String>, Failure> {
    let base = match std::env::var(BASE_PORT_ENV) {
        Ok(v) => v
            .parse::<u16>()
            .map_err(|_| invalid(anyhow!("{BASE_PORT_ENV}={v:?} is not a port")))?,
        Err(_) => DEFAULT_BASE_PORT,
    };
    Ok((0..parties)
        .map(|i| format!("127.0.0.1:{}", base as usize + i))
        .collect())
}

fn cmd_serve(a: ServeArgs) -> CmdResult {
    let peers = if a.peers.is_empty() {
        default_peers(a.parties)?
    } else {
        a.peers.clone()
    };
    let query = match &a.query {
        Some(path) => Some(QueryFile::load(path).map_err(invalid)?.query),
        None => None,
    };
    let geometry = match &query {
        Some(q) => q.geometry().map_err(invalid)?,
        None => TableGeometry::new(a.rows, a.message_bytes).map_err(invalid)?,
    };
    let config = ServerConfig {
        server_id: a.server_id,
        servers: peers.clone(),
        epoch_duration: Duration::from_millis(a.epoch_ms),
        peer_timeout: Duration::from_millis(a.peer_timeout_ms),
        geometry,
    };
    config.validate().map_err(invalid)?;
    let listen = a
        .listen
        .clone()
        .unwrap_or_else(|| peers[a.server_id as usize].clone());
    let mut opts = ServerOptions::new(config);
    opts.audit = match a.audit {
        AuditArg::Eager => AuditMode::Eager,
        AuditArg::Lazy => AuditMode::Lazy,
        AuditArg::Off => AuditMode::Off,
    };
    opts.dummy_policy = if a.strict_dummies {
        DummyPolicy::Strict
    } else {
        DummyPolicy::AcceptAsDummy
    };
    opts.seed = Some(a.common.seed);
    opts.query = query;
    opts.persist_dir = a.common.out.clone();
    let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
    let server = Server::start(listener, opts)?;
    println!(
        "server {} listening on {}",
        a.server_id,
        server.local_addr()
    );
    io::stdout().flush()?;
    match a.run_for_ms {
        Some(ms) => {
            std::thread::sleep(Duration::from_millis(ms));
            server.shutdown();
        }
        None => server.run_forever(),
    }
    Ok(())
}

fn cmd_client(a: ClientArgs) -> CmdResult {
    let file = QueryFile::load(&a.query).map_err(invalid)?;
    let geometry = file.query.geometry().map_err(invalid)?;
    let attributes = file.query.attribute_labels.len();
    if let Some(epoch) = a.fetch {
        let mut tables = Vec::new();
        for s in &file.servers {
            tables.push(wait_result(s, epoch, &geometry, Duration::from_secs(30))?);
        }
        if tables.windows(2).any(|w| w[0].cells != w[1].cells) {
            return Err(Failure::Runtime(anyhow!(
                "servers returned different tables for epoch {epoch}"
            )));
        }
        let mut w = csv::Writer::from_writer(out_writer(&a.common.out)?);
        let mut header = vec!["row".to_string()];
        header.extend(file.query.attribute_labels.iter().cloned());
        w.write_record(&header)?;
        for (row, cell) in tables[0].nonzero_rows() {
            let mut record = vec![row.to_string()];
            match PrivatizedVector::from_message(cell, attributes) {
                Ok(v) => record.extend(v.bits().iter().map(|b| (*b as u8).to_string())),
                Err(e) => record.push(format!("undecodable: {e}")),
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        return Ok(());
    }
    let truth = parse_bits(
        a.truth
            .as_deref()
            .ok_or_else(|| invalid(anyhow!("--truth or --fetch is required")))?,
    )
    .map_err(|e| invalid(anyhow!(e)))?;
    if truth.len() != attributes {
        return Err(invalid(anyhow!(
            "{} answers for {attributes} attributes",
            truth.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(a.common.seed);
    let sub = client_submit(
        &file.query,
        &truth,
        &file.servers,
        OwnerId::fingerprint(a.owner.as_bytes()),
        &mut rng,
        &ClientOptions::default(),
    )?;
    let ack = serde_json::json!({
        "owner": sub.owner.to_string(),
        "epoch": sub.epoch_id,
        "servers": file.servers.len(),
    });
    writeln!(out_writer(&a.common.out)?, "{ack}")?;
    Ok(())
}

fn cmd_ingest(path: &Path, common: &Common) -> CmdResult {
    let d = ingest_csv(path).map_err(invalid)?;
    println!(
        "{}: {} stations, {} vehicles, counts in [{}, {}]",
        d.scenario_label(),
        d.stations().len(),
        d.total_vehicles(),
        d.min_count(),
        d.max_count()
    );
    if let Some(out) = &common.out {
        d.save(out)?;
    }
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srdp_core::ecms::{Mode, Weights};
use srdp_core::harness::{
    compare_oracle, emit_report, oracle_pairs, parse_adversary, run_scenario, AdversarySpec, ReportFormat,
    ScenarioConfig,
};
use srdp_core::netsim::load_topology;
use srdp_core::NodeId;

#[derive(Parser)]
#[command(name = "srdp", version, about = "Secure route discovery scenario runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one discovery/maintenance/session scenario and write a report.
    Run(RunArgs),
    /// Compare route selection with exhaustive path enumeration.
    Oracle(OracleArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long, default_value = "HC-BW-ND")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// behavior@node[:param], e.g. path-insert@B or token-forge@M
    #[arg(long, value_parser = parse_spec)]
    adversary: Option<AdversarySpec>,
    /// Charge beta*bw per link instead of beta/bw.
    #[arg(long = "linear-bw")]
    linear_bw: bool,
    #[arg(long, default_value_t = 50)]
    window: u64,
    #[arg(long, default_value_t = 100)]
    interval: u64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 16)]
    max_hops: u8,
    #[arg(long, default_value_t = 64)]
    kdc_k: usize,
    #[arg(long, default_value_t = 8)]
    kdc_m: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    dest: Option<String>,
    /// Simulated time, ms.
    #[arg(long, default_value_t = 1000)]
    duration: u64,
    /// Break the last link of the active route at this time (ms).
    #[arg(long)]
    break_active_at: Option<u64>,
    #[arg(long)]
    no_sessions: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
}

#[derive(clap::Args)]
struct OracleArgs {
    #[arg(long)]
    topology: PathBuf,
    /// Seeds the extra endpoint pairs checked beyond broker to coordinator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    extra_pairs: usize,
    #[arg(long = "linear-bw")]
    linear_bw: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_spec(s: &str) -> Result<AdversarySpec, String> {
    parse_adversary(s).map_err(|e| e.to_string())
}

fn read(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(a: RunArgs) -> Result<ExitCode, String> {
    let cfg = ScenarioConfig {
        topology: read(&a.topology)?,
        mode: a.mode,
        weights: Weights {
            alpha: a.alpha,
            beta: a.beta,
            gamma: a.gamma,
        },
        seed: a.seed,
        adversary: a.adversary,
        window_ms: a.window,
        monitor_interval: a.interval,
        epsilon: a.epsilon,
        linear_bw: a.linear_bw,
        max_hops: a.max_hops,
        kdc_k: a.kdc_k,
        kdc_m: a.kdc_m,
        source: a.source.map(NodeId::from),
        destination: a.dest.map(NodeId::from),
        duration_ms: a.duration,
        break_active_at: a.break_active_at,
        sessions: !a.no_sessions,
        ..ScenarioConfig::default()
    };
    let report = run_scenario(&cfg).map_err(|e| e.to_string())?;
    std::fs::write(&a.out, emit_report(&report, a.format)).map_err(|e| format!("{}: {e}", a.out.display()))?;
    if report.missed_detection() {
        eprintln!("expected detection did not happen");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle(a: OracleArgs) -> Result<ExitCode, String> {
    let topo = load_topology(&read(&a.topology)?).map_err(|e| e.to_string())?;
    let pairs = oracle_pairs(&topo, a.seed, a.extra_pairs).map_err(|e| e.to_string())?;
    let report = compare_oracle(&topo, &pairs, Weights::default(), a.linear_bw).map_err(|e| e.to_string())?;
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    match &a.out {
        Some(p) => std::fs::write(p, &json).map_err(|e| format!("{}: {e}", p.display()))?,
        None => print!("{}", String::from_utf8_lossy(&json)),
    }
    eprintln!("{}/{} instances match", report.matches, report.total);
    Ok(if report.matches == report.total {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    // Usage errors exit 1 so that 2 keeps meaning "detection missed".
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    let r = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Oracle(a) => oracle(a),
    };
    r.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use evote_cli::api;
use evote_cli::config::FileConfig;
use evote_core::bench::{
    emit_report, run_addition_bench, run_counting_comparison, run_recording_comparison,
    BenchConfig, BenchReport, PayloadProfile,
};
use evote_core::election::{ElectionService, ElectionState};
use evote_core::he::{
    generate_keypair, generate_keypair_seeded, read_secret_key, write_key_files, DEFAULT_BITS,
};
use evote_core::simulate::{simulate, SimulationConfig};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "evote",
    version,
    about = "Plaintext-vote election server with encrypted demographics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Paillier key pair (public.json, secret.json).
    Keygen {
        #[arg(long, default_value_t = DEFAULT_BITS)]
        bits: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Close (if open) and tally the election, printing the result.
    Tally {
        #[arg(long)]
        config: PathBuf,
    },
    /// Decrypt the demographic aggregates of a tallied election.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        secret_key: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one CSV row per candidate, factor and category.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a complete headless election with generated voters.
    Simulate {
        #[arg(long, default_value_t = 1024)]
        voters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1024)]
        bits: u64,
        #[arg(long, value_delimiter = ',', default_value = "A,B,C")]
        candidates: Vec<String>,
        /// Keep the election data here; a temporary directory otherwise.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Also decrypt the demographic analysis.
        #[arg(long)]
        analyze: bool,
    },
    /// Benchmarks; writes recording.csv, addition.csv and comparison.csv.
    Bench {
        #[arg(long, default_value_t = 1024)]
        voters: usize,
        /// encrypted_attrs_401B, encrypted_vote_80B, native, or all.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "encrypted_attrs_401B,encrypted_vote_80B"
        )]
        profile: Vec<String>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2048)]
        bits: u64,
        #[arg(long)]
        out: PathBuf,
        /// Skip fsync on ledger appends.
        #[arg(long)]
        no_sync: bool,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Keygen { bits, out } => keygen(bits, &out),
        Command::Serve { config } => serve(&config),
        Command::Tally { config } => tally(&config),
        Command::Analyze {
            config,
            secret_key,
            out,
            csv,
        } => analyze(&config, secret_key, out, csv),
        Command::Simulate {
            voters,
            seed,
            bits,
            candidates,
            data_dir,
            analyze,
        } => run_simulate(voters, seed, bits, candidates, data_dir, analyze),
        Command::Bench {
            voters,
            profile,
            reps,
            seed,
            bits,
            out,
            no_sync,
        } => bench(voters, &profile, reps, seed, bits, &out, !no_sync),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn keygen(bits: u64, out: &Path) -> Result<()> {
    let kp = generate_keypair(bits)?;
    std::fs::create_dir_all(out)?;
    write_key_files(out, &kp)?;
    print_json(&json!({
        "security_bits": bits,
        "fingerprint": kp.public_key().fingerprint().to_hex(),
        "public_key": out.join("public.json"),
        "secret_key": out.join("secret.json"),
    }))
}

fn open_service(config: &FileConfig) -> Result<ElectionService> {
    let service_config = config.service_config()?;
    ElectionService::open(service_config).context("opening election")
}

fn serve(path: &Path) -> Result<()> {
    let config = FileConfig::load(path)?;
    let service = Arc::new(open_service(&config)?);
    tracing::info!(
        election = service.election_id(),
        state = %service.state(),
        listen = %config.listen,
        "serving"
    );
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .with_context(|| format!("binding {}", config.listen))?;
        axum::serve(listener, api::router(service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn tally(path: &Path) -> Result<()> {
    let config = FileConfig::load(path)?;
    let service = open_service(&config)?;
    let admin = config.admin_token()?;
    match service.state() {
        ElectionState::Setup => bail!("election has not been opened"),
        ElectionState::Open => {
            service.transition_election(&admin, ElectionState::Closed)?;
        }
        _ => {}
    }
    print_json(&service.tally_vote(&admin)?)
}

fn analyze(
    path: &Path,
    secret_key: Option<PathBuf>,
    out: Option<PathBuf>,
    csv: Option<PathBuf>,
) -> Result<()> {
    let config = FileConfig::load(path)?;
    let key_path = secret_key
        .or_else(|| config.secret_key.clone())
        .context("no secret key: pass --secret-key")?;
    let keypair = read_secret_key(&key_path)
        .with_context(|| format!("reading secret key {}", key_path.display()))?;
    let service = open_service(&config)?;
    let report = service.analyze(&keypair)?;
    drop(keypair);
    if let Some(csv) = csv {
        let file =
            std::fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
        report.write_csv(service.schema(), file)?;
    }
    match out {
        Some(out) => std::fs::write(&out, serde_json::to_vec_pretty(&report)?)
            .with_context(|| format!("writing {}", out.display())),
        None => print_json(&report),
    }
}

fn run_simulate(
    voters: usize,
    seed: u64,
    bits: u64,
    candidates: Vec<String>,
    data_dir: Option<PathBuf>,
    analyze: bool,
) -> Result<()> {
    let outcome = simulate(SimulationConfig {
        voters,
        seed,
        key_bits: bits,
        candidates,
        data_dir: data_dir.clone(),
        analyze,
        ..Default::default()
    })?;
    if let Some(dir) = &data_dir {
        // the operator needs the key to analyze this election later
        write_key_files(&dir.join("keys"), &outcome.keypair)?;
    }
    print_json(&json!({
        "voters": outcome.voters.len(),
        "data_dir": data_dir,
        "tally": outcome.tally,
        "tally_he_operations": {
            "encryptions": outcome.tally_op_counts.encryptions,
            "additions": outcome.tally_op_counts.additions,
            "decryptions": outcome.tally_op_counts.decryptions,
        },
        "analysis": outcome.report,
    }))
}

fn bench(
    voters: usize,
    profiles: &[String],
    reps: usize,
    seed: u64,
    bits: u64,
    out: &Path,
    sync: bool,
) -> Result<()> {
    let mut selected = Vec::new();
    for p in profiles {
        if p == "all" {
            selected.extend(PayloadProfile::ALL);
        } else {
            selected.push(p.parse::<PayloadProfile>()?);
        }
    }
    selected.sort();
    selected.dedup();
    let keypair = generate_keypair_seeded(bits, seed)?;
    let config = BenchConfig {
        n_voters: voters,
        payload_profile: selected.first().copied().unwrap_or(PayloadProfile::Native),
        repetitions: reps,
        seed,
        work_dir: None,
        sync_writes: sync,
        public_key: Some(keypair.public_key().clone()),
    };
    let mut report = BenchReport::default();
    if !selected.is_empty() {
        tracing::info!(?selected, voters, reps, "recording benchmark");
        report.recording = run_recording_comparison(&config, &selected)?;
    }
    let mut n = 1;
    loop {
        tracing::info!(n, "addition benchmark");
        report
            .addition
            .push(run_addition_bench(n.min(voters), &keypair)?);
        if n >= voters {
            break;
        }
        n *= 2;
    }
    tracing::info!(voters, "counting comparison");
    report
        .comparison
        .push(run_counting_comparison(voters, &keypair, seed, None)?);
    let files = emit_report(&report, out)?;
    print_json(&json!({
        "recording": report.recording.iter().map(|r| json!({
            "profile": r.summary.profile,
            "median_total_seconds": r.summary.total_seconds,
            "mean_per_ballot_ms": r.mean_per_ballot_ms,
            "std_dev_ms": r.summary.std_dev_ms,
        })).collect::<Vec<_>>(),
        "addition": report.addition.last(),
        "comparison": report.comparison.last(),
        "files": files,
    }))
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vanet_dynkey::adversary::{run_attack, AttackKind};
use vanet_dynkey::crypto::CryptoMode;
use vanet_dynkey::harness::{emit_results, load_config, run_experiment, Experiment};
use vanet_dynkey::revocation_analytics::{message_count, node_percentage, radius};

#[derive(Parser)]
#[command(
    name = "vanet-dynkey",
    version,
    about = "Dynamic key distribution and revocation simulator for VANETs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment of the suite and write CSV and plot data.
    Run {
        #[arg(long)]
        experiment: Experiment,
        /// Flat key=value file layered over the experiment preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "VANET_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        crypto: Option<CryptoMode>,
        #[arg(long)]
        replications: Option<usize>,
        /// Run replications on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Closed-form revocation radius, message count and node percentage.
    Analytic {
        /// Speed in km/h.
        #[arg(long)]
        v: f64,
        /// Certificate lifetime in seconds.
        #[arg(long)]
        l: f64,
        /// RSU spacing in metres.
        #[arg(long)]
        d: f64,
        /// Total RSU count.
        #[arg(long = "N")]
        n: u64,
    },
    /// Scripted attacks against the handshake.
    Attack {
        /// replay, mitm, sybil or masquerade.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        replications: u64,
        #[arg(long, default_value = "mock")]
        crypto: CryptoMode,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            experiment,
            config,
            seed,
            out,
            crypto,
            replications,
            sequential,
        } => cmd_run(experiment, config, seed, out, crypto, replications, sequential),
        Command::Analytic { v, l, d, n } => cmd_analytic(v, l, d, n),
        Command::Attack {
            scenario,
            seed,
            replications,
            crypto,
        } => cmd_attack(&scenario, seed, replications, crypto),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn cmd_run(
    experiment: Experiment,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
    crypto: Option<CryptoMode>,
    replications: Option<usize>,
    sequential: bool,
) -> CmdResult {
    let text = match &config {
        Some(path) => Some(std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?),
        None => None,
    };
    let mut cfg = load_config(experiment, text.as_deref(), seed)?;
    if let Some(c) = crypto {
        cfg.crypto = c;
    }
    if let Some(k) = replications {
        cfg.replications = k;
    }
    cfg.validate()?;
    let result = run_experiment(&cfg, !sequential)?;
    for path in emit_results(&result, &out)? {
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_analytic(v: f64, l: f64, d: f64, n: u64) -> CmdResult {
    let r = radius(v, l)?;
    let m = message_count(r, d)?;
    let p = node_percentage(m, n)?;
    println!("r = {r:.2} m");
    println!("m = {m}");
    println!("p = {p}%");
    Ok(ExitCode::SUCCESS)
}

fn cmd_attack(scenario: &str, seed: u64, replications: u64, crypto: CryptoMode) -> CmdResult {
    let kinds = AttackKind::from_scenario(scenario)?;
    let mut successes = 0u64;
    for kind in kinds {
        for rep in 0..replications {
            let outcome = run_attack(kind, seed.wrapping_add(rep), crypto)?;
            successes += u64::from(outcome.succeeded);
            println!("{}", outcome.report());
        }
    }
    if successes > 0 {
        eprintln!("{successes} attack run(s) succeeded");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

//! Command-line interface: scenario runs, strategy comparison, fault
//! studies, the early-stop demonstration, and chain audits.

use crate::config::{builtin_checked, ScenarioConfig, StrategyMode};
use crate::drl::save_agents;
use crate::error::{Error, Result};
use crate::ledger::{Chain, LedgerRules};
use crate::metrics::{
    resolve_out_dir, write_artifact, write_comparison, write_early_stop, write_metrics_csv,
    write_summary, RunManifest, AGENTS_FILE, CHAIN_FILE, MANIFEST_FILE, METRICS_FILE,
    SUMMARY_FILE,
};
use crate::orchestrator::{compare_strategies, early_stop_demo, run_scenario};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic multi-aggregator federated learning simulator with a trust-weighted BFT ledger"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario config file (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Builtin scenario name (paper5, byzantine5, tiny).
    #[arg(long, value_name = "NAME")]
    scenario: Option<String>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $FEDSIM_OUT or ./out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit metrics, summary, chain dump and manifest.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Strategy mode override (fixed, random, learned).
        #[arg(long)]
        mode: Option<StrategyMode>,
        /// Round count override.
        #[arg(long)]
        rounds: Option<u64>,
    },
    /// Compare strategy modes over repeated seeds.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated modes to compare.
        #[arg(long, value_delimiter = ',', default_values_t = vec![StrategyMode::Fixed, StrategyMode::Random, StrategyMode::Learned])]
        modes: Vec<StrategyMode>,
        /// Independent repetitions per mode.
        #[arg(long, default_value_t = 10)]
        repeats: u64,
    },
    /// Malicious-node study: repeated runs counting who mines.
    Byzantine {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 10)]
        repeats: u64,
    },
    /// Early-stop demonstration: till-converge vs capped epochs.
    Earlystop {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Epoch cap for the early-stopped run.
        #[arg(long)]
        cap: Option<f64>,
    },
    /// Audit a chain dump: verify hashes, linkage and recomputed models.
    ValidateChain {
        /// Chain dump produced by `run` (JSON lines).
        #[arg(long, value_name = "PATH")]
        chain: PathBuf,
        /// Largest tolerated absolute model coordinate.
        #[arg(long, default_value_t = 1e3)]
        norm_bound: f64,
    },
}

impl clap::ValueEnum for StrategyMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[
            StrategyMode::Fixed,
            StrategyMode::Random,
            StrategyMode::Learned,
        ]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            StrategyMode::Fixed => "fixed",
            StrategyMode::Random => "random",
            StrategyMode::Learned => "learned",
        }))
    }
}

/// Load the scenario: explicit config file, builtin name, or an error
/// asking for one of them.
fn load_scenario(args: &ScenarioArgs, default_builtin: Option<&str>) -> Result<ScenarioConfig> {
    let mut cfg = match (&args.config, &args.scenario) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            ScenarioConfig::from_toml(&text)?
        }
        (None, Some(name)) => builtin_checked(name)?,
        (None, None) => match default_builtin {
            Some(name) => builtin_checked(name)?,
            None => {
                return Err(Error::Config(
                    "missing scenario: pass --config PATH or --scenario NAME".into(),
                ))
            }
        },
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Entry point; returns the process exit code.
pub fn cli_main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                // Configuration problems are usage errors.
                Error::Config(_) => {
                    eprintln!("run `fedsim --help` for usage");
                    2
                }
                _ => 1,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            mode,
            rounds,
        } => {
            let mut cfg = load_scenario(&scenario, None)?;
            if let Some(m) = mode {
                cfg.strategy = m;
            }
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            cfg.validate()?;
            let out_dir = resolve_out_dir(scenario.out.clone());
            let output = run_scenario::<f64>(cfg.clone())?;

            let mut csv = Vec::new();
            write_metrics_csv(&output.records, &mut csv)?;
            write_artifact(&out_dir, METRICS_FILE, &csv)?;

            let mut summary = Vec::new();
            write_summary(&cfg.name, cfg.seed, &output.records, &mut summary)?;
            write_artifact(&out_dir, SUMMARY_FILE, &summary)?;

            let mut chain = Vec::new();
            output.chain.dump(&mut chain)?;
            write_artifact(&out_dir, CHAIN_FILE, &chain)?;

            let mut artifacts = vec![
                METRICS_FILE.to_string(),
                SUMMARY_FILE.to_string(),
                CHAIN_FILE.to_string(),
            ];
            if !output.agents.is_empty() {
                let mut agents = Vec::new();
                save_agents(&output.agents, &mut agents)?;
                write_artifact(&out_dir, AGENTS_FILE, &agents)?;
                artifacts.push(AGENTS_FILE.to_string());
            }
            let manifest = RunManifest::new(&cfg, artifacts)?;
            write_artifact(&out_dir, MANIFEST_FILE, manifest.to_toml()?.as_bytes())?;

            println!(
                "{}: {} rounds, final accuracy {:.4}, artifacts in {}",
                cfg.name,
                output.records.len(),
                output.final_accuracy,
                out_dir.display()
            );
            Ok(())
        }
        Command::Compare {
            scenario,
            modes,
            repeats,
        } => {
            let cfg = load_scenario(&scenario, Some("paper5"))?;
            let out_dir = resolve_out_dir(scenario.out.clone());
            let table = compare_strategies::<f64>(&cfg, &modes, repeats)?;
            let mut text = Vec::new();
            write_comparison(&table, &mut text)?;
            let path = write_artifact(&out_dir, "comparison.txt", &text)?;
            print!("{}", String::from_utf8_lossy(&text));
            println!("written to {}", path.display());
            Ok(())
        }
        Command::Byzantine { scenario, repeats } => {
            let cfg = load_scenario(&scenario, Some("byzantine5"))?;
            let out_dir = resolve_out_dir(scenario.out.clone());
            let n = cfg.n_servers();
            // "Acting as miner" means being elected for an interval,
            // whether or not the block finalized.
            let mut elected = vec![0u64; n];
            let mut finalized_total = 0u64;
            let mut rounds_total = 0u64;
            for rep in 0..repeats {
                let mut run_cfg = cfg.clone();
                run_cfg.seed = cfg.seed + rep;
                let output = run_scenario::<f64>(run_cfg)?;
                for r in &output.records {
                    elected[r.miner] += 1;
                }
                finalized_total += output.records.iter().filter(|r| r.finalized).count() as u64;
                rounds_total += output.records.len() as u64;
            }
            let mut text = String::new();
            text.push_str(&format!("scenario: {}\n", cfg.name));
            text.push_str(&format!("repeats: {repeats}\n"));
            text.push_str(&format!("rounds_per_run: {}\n", cfg.rounds));
            text.push_str(&format!("finalized_rounds_total: {finalized_total}\n"));
            for (server, total) in elected.iter().enumerate() {
                let avg = *total as f64 / repeats as f64;
                let fault = &cfg.servers[server].fault;
                text.push_str(&format!(
                    "miner_count server={server} fault={fault:?}: total={total} avg={avg}\n"
                ));
            }
            let malicious_freq: f64 = cfg
                .servers
                .iter()
                .enumerate()
                .filter(|(_, s)| s.fault != crate::sim::Behavior::Honest)
                .map(|(i, _)| elected[i] as f64)
                .sum::<f64>()
                / rounds_total.max(1) as f64;
            text.push_str(&format!("malicious_miner_frequency: {malicious_freq}\n"));
            let path = write_artifact(&out_dir, "byzantine.txt", text.as_bytes())?;
            print!("{text}");
            println!("written to {}", path.display());
            Ok(())
        }
        Command::Earlystop { scenario, cap } => {
            let cfg = load_scenario(&scenario, Some("paper5"))?;
            let out_dir = resolve_out_dir(scenario.out.clone());
            let cap = cap.unwrap_or(cfg.earlystop.cap_epochs);
            let rows = early_stop_demo::<f64>(&cfg, cap)?;
            let mut text = Vec::new();
            write_early_stop(&rows, &mut text)?;
            let path = write_artifact(&out_dir, "earlystop.csv", &text)?;
            print!("{}", String::from_utf8_lossy(&text));
            println!("written to {}", path.display());
            Ok(())
        }
        Command::ValidateChain { chain, norm_bound } => {
            let file = std::fs::File::open(&chain)
                .map_err(|e| Error::Config(format!("cannot open {}: {e}", chain.display())))?;
            let chain: Chain<f64> = Chain::load(std::io::BufReader::new(file))?;
            let genesis = &chain.blocks()[0];
            let param_dim = genesis.body.global_params.dim();
            let block_interval = chain
                .blocks()
                .get(1)
                .map(|b| b.header.time / b.header.k as f64)
                .unwrap_or(1.0);
            let rules = LedgerRules {
                block_interval,
                param_dim,
                norm_bound,
            };
            chain.verify(&rules)?;
            println!(
                "chain OK: {} blocks after genesis, head {}",
                chain.height(),
                chain.head().hash
            );
            Ok(())
        }
    }
}

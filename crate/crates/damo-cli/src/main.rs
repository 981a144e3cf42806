//! `damo`: environment catalog, dataset generation, experiment runs,
//! invariant verification, and cross-seed report aggregation.
//!
//! Exit codes: 0 success, 1 failed verification or runtime assertion,
//! 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use damo_core::data::{collect_dataset, write_jsonl};
use damo_core::envs::{build_env, BuiltEnv, ENV_NAMES};
use damo_core::verify::run_suites;

use damo_cli::aggregate::{aggregate, aggregate_csv_bytes};
use damo_cli::config::parse_config;
use damo_cli::experiment::{run_experiment, ExperimentReport};
use damo_cli::output::{report_csv_bytes, report_json_bytes, trace_csv_bytes, write_atomic};
use damo_cli::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Parser)]
#[command(
    name = "damo",
    version,
    about = "Exact desk-scale laboratory for dual-alignment offline model-based RL"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the environment catalog.
    Env {
        #[command(subcommand)]
        action: EnvCmd,
    },
    /// Collect an offline dataset from an environment's behavior policy.
    GenData {
        #[arg(long)]
        env: String,
        /// Episode count; catalog default when omitted.
        #[arg(long)]
        episodes: Option<usize>,
        /// Steps per episode; catalog default when omitted.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Instance seed for the random-mdp entry.
        #[arg(long, default_value_t = 0)]
        env_seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Train every configured method and write a report plus traces.
    Run {
        /// Path to a `key = value` config file.
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Run the exact-arithmetic invariant suites.
    Verify {
        /// all, occupancy, fenchel, corollary-a4, lemma-a1, theorem-2, or theorem-3.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the verdicts to `<out-dir>/verify-<suite>.json`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Aggregate report files into a mean/std table per (env, method).
    Report {
        /// Glob over report JSON files, e.g. 'out/*/report.json'.
        pattern: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Also write the table to `<out-dir>/summary.<format>`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EnvCmd {
    /// List catalog entries.
    List {
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Show one entry in detail.
    Show {
        name: String,
        /// Instance seed for the random-mdp entry.
        #[arg(long, default_value_t = 0)]
        env_seed: u64,
    },
}

#[derive(Serialize)]
struct EnvInfo {
    name: String,
    description: String,
    n_states: usize,
    n_actions: usize,
    discount: f64,
    default_episodes: usize,
    default_horizon: usize,
}

impl EnvInfo {
    fn from_built(b: &BuiltEnv) -> EnvInfo {
        EnvInfo {
            name: b.name.clone(),
            description: b.description.clone(),
            n_states: b.mdp.n_states,
            n_actions: b.mdp.n_actions,
            discount: b.mdp.discount,
            default_episodes: b.default_episodes,
            default_horizon: b.default_horizon,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

/// Stdout writes tolerate a closed pipe, so `damo ... | head` ends the
/// program instead of panicking it.
fn emit(payload: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(payload.as_bytes());
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Env { action } => cmd_env(action),
        Command::GenData {
            env,
            episodes,
            horizon,
            seed,
            env_seed,
            out_dir,
        } => cmd_gen_data(&env, episodes, horizon, seed, env_seed, &out_dir),
        Command::Run {
            config,
            seed,
            out_dir,
            format,
        } => cmd_run(&config, seed, &out_dir, format),
        Command::Verify {
            suite,
            seed,
            out_dir,
        } => cmd_verify(&suite, seed, out_dir.as_deref()),
        Command::Report {
            pattern,
            format,
            out_dir,
        } => cmd_report(&pattern, format, out_dir.as_deref()),
    }
}

fn cmd_env(action: EnvCmd) -> Result<(), CliError> {
    match action {
        EnvCmd::List { format } => {
            let infos: Vec<EnvInfo> = ENV_NAMES
                .iter()
                .map(|name| build_env(name, 0).map(|b| EnvInfo::from_built(&b)))
                .collect::<Result<_, _>>()?;
            match format {
                Format::Json => emit(&format!("{}\n", serde_json::to_string_pretty(&infos)?)),
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record([
                        "name",
                        "description",
                        "n_states",
                        "n_actions",
                        "discount",
                        "default_episodes",
                        "default_horizon",
                    ])?;
                    for i in &infos {
                        w.write_record([
                            i.name.clone(),
                            i.description.clone(),
                            i.n_states.to_string(),
                            i.n_actions.to_string(),
                            i.discount.to_string(),
                            i.default_episodes.to_string(),
                            i.default_horizon.to_string(),
                        ])?;
                    }
                    let bytes = w.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
                    emit(&String::from_utf8_lossy(&bytes));
                }
            }
            Ok(())
        }
        EnvCmd::Show { name, env_seed } => {
            let built = build_env(&name, env_seed)?;
            let report = built.mdp.validate();
            let mut info = serde_json::to_value(EnvInfo::from_built(&built))?;
            info["valid"] = serde_json::Value::Bool(report.is_clean());
            emit(&format!("{}\n", serde_json::to_string_pretty(&info)?));
            Ok(())
        }
    }
}

fn cmd_gen_data(
    env: &str,
    episodes: Option<usize>,
    horizon: Option<usize>,
    seed: u64,
    env_seed: u64,
    out_dir: &Path,
) -> Result<(), CliError> {
    let built = build_env(env, env_seed)?;
    let ds = collect_dataset(
        &built.mdp,
        &built.behavior,
        episodes.unwrap_or(built.default_episodes),
        horizon.unwrap_or(built.default_horizon),
        seed,
    )?;
    let path = out_dir.join(format!("data-{env}-seed{seed}.jsonl"));
    write_atomic(&path, &write_jsonl(&ds))?;
    println!("wrote {} ({} transitions)", path.display(), ds.len());
    Ok(())
}

fn cmd_run(
    config_path: &Path,
    seed_override: Option<u64>,
    out_dir: &Path,
    format: Format,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    let started = Instant::now();
    let outcome = run_experiment(&cfg)?;
    let elapsed = started.elapsed();
    let report_path = match format {
        Format::Json => {
            let path = out_dir.join("report.json");
            write_atomic(&path, &report_json_bytes(&outcome.report)?)?;
            path
        }
        Format::Csv => {
            let path = out_dir.join("report.csv");
            write_atomic(&path, &report_csv_bytes(&outcome.report)?)?;
            path
        }
    };
    for (method, seed, trace) in &outcome.traces {
        let path = out_dir.join(format!("trace-{method}-seed{seed}.csv"));
        write_atomic(&path, &trace_csv_bytes(trace)?)?;
    }
    println!(
        "wrote {} ({} results, {} traces) in {:.2}s",
        report_path.display(),
        outcome.report.results.len(),
        outcome.traces.len(),
        elapsed.as_secs_f64()
    );
    Ok(())
}

fn cmd_verify(suite: &str, seed: u64, out_dir: Option<&Path>) -> Result<(), CliError> {
    let started = Instant::now();
    let reports = run_suites(suite, seed)?;
    let json = serde_json::to_string_pretty(&reports)?;
    emit(&format!("{json}\n"));
    if let Some(dir) = out_dir {
        let path = dir.join(format!("verify-{suite}.json"));
        let mut bytes = json.into_bytes();
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
    }
    eprintln!("verify {suite}: {:.2}s", started.elapsed().as_secs_f64());
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.suite.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Assertion(format!(
            "verification failed: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

fn cmd_report(pattern: &str, format: Format, out_dir: Option<&Path>) -> Result<(), CliError> {
    let paths = glob::glob(pattern)
        .map_err(|e| CliError::Usage(format!("bad glob pattern '{pattern}': {e}")))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in paths {
        files.push(entry.map_err(|e| CliError::Other(e.to_string()))?);
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "no report files matched '{pattern}'"
        )));
    }
    let mut reports: Vec<ExperimentReport> = Vec::new();
    for f in &files {
        let bytes = std::fs::read(f)?;
        reports.push(serde_json::from_slice(&bytes).map_err(|e| {
            CliError::Usage(format!("{} is not a report file: {e}", f.display()))
        })?);
    }
    let rows = aggregate(&reports);
    match format {
        Format::Csv => {
            let bytes = aggregate_csv_bytes(&rows)?;
            emit(&String::from_utf8_lossy(&bytes));
            if let Some(dir) = out_dir {
                write_atomic(&dir.join("summary.csv"), &bytes)?;
            }
        }
        Format::Json => {
            let json = serde_json::to_string_pretty(&rows)?;
            emit(&format!("{json}\n"));
            if let Some(dir) = out_dir {
                let mut bytes = json.into_bytes();
                bytes.push(b'\n');
                write_atomic(&dir.join("summary.json"), &bytes)?;
            }
        }
    }
    Ok(())
}

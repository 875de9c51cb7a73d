//! `fltb`: partition datasets, train federated models and run sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fltb_core::config::{ExperimentConfig, GridConfig};
use fltb_core::orchestrator::{prepare_data, prepare_partition, run_experiment_with_model, run_sweep};
use fltb_core::Error;

#[derive(Parser)]
#[command(name = "fltb", version, about = "Federated long-tailed learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition the dataset and write per-client statistics.
    Partition(CommonArgs),
    /// Run one experiment.
    Train(CommonArgs),
    /// Run an algorithm x setting grid and write the summary table.
    Sweep(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    workers: u16,
    /// Validate the config, print it resolved, and exit.
    #[arg(long)]
    dry_run: bool,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(usage)?;
    let probe = dir.join(".fltb-write-probe");
    fs::write(&probe, b"")
        .with_context(|| format!("output directory {} is not writable", dir.display()))
        .map_err(usage)?;
    let _ = fs::remove_file(probe);
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(runtime)
}

fn load_experiment(args: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let cfg = ExperimentConfig::from_file(&args.config).map_err(|e| match e {
        Error::Io { .. } => usage(e),
        other => other.into(),
    })?;
    cfg.check_inputs()?;
    Ok(cfg)
}

fn pool(workers: u16) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers as usize)
        .build()
        .map_err(runtime)
}

fn cmd_partition(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = load_experiment(args)?;
    if args.dry_run {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    prepare_out(&args.out)?;
    let (train, _) = prepare_data(&cfg)?;
    let part = prepare_partition(&cfg, &train)?;
    let report = part.report();
    write(&args.out.join("partition.csv"), report.to_csv())?;
    write(&args.out.join("partition.json"), report.to_json())?;
    let shards = serde_json::to_string_pretty(&part.shards).map_err(runtime)?;
    write(&args.out.join("shards.json"), shards)?;
    eprintln!(
        "{} clients, {} samples, global IF {}",
        part.num_clients(),
        part.stats.global.total,
        part.stats.global.imbalance_factor
    );
    Ok(())
}

fn cmd_train(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = load_experiment(args)?;
    if args.dry_run {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    prepare_out(&args.out)?;
    let start = Instant::now();
    let (report, checkpoint) = pool(args.workers)?.install(|| run_experiment_with_model(&cfg))?;
    let secs = start.elapsed().as_secs_f64();
    write(&args.out.join("report.json"), report.to_json())?;
    write(&args.out.join("metrics.csv"), report.metrics_csv())?;
    write(&args.out.join("checkpoint.bin"), checkpoint.to_bytes()?)?;
    write(
        &args.out.join("timing.json"),
        serde_json::json!({ "wall_clock_seconds": secs }).to_string(),
    )?;
    eprintln!(
        "{}: best accuracy {:.4} (round {}), final {:.4}",
        report.algorithm, report.best_accuracy, report.best_round, report.final_accuracy
    );
    Ok(())
}

fn cmd_sweep(args: &CommonArgs) -> Result<(), Failure> {
    let grid = GridConfig::from_file(&args.config).map_err(|e| match e {
        Error::Io { .. } => usage(e),
        other => other.into(),
    })?;
    grid.base.check_inputs()?;
    if args.dry_run {
        print!("{}", grid.to_toml_string());
        return Ok(());
    }
    prepare_out(&args.out)?;
    let start = Instant::now();
    let outcome = run_sweep(&grid, args.workers as usize)?;
    let secs = start.elapsed().as_secs_f64();
    write(&args.out.join(outcome.table.file_name()), outcome.table_csv())?;
    let cells = args.out.join("cells");
    fs::create_dir_all(&cells)
        .with_context(|| format!("cannot create {}", cells.display()))
        .map_err(runtime)?;
    let mut errors = Vec::new();
    for c in &outcome.cells {
        let dir = cells.join(format!("r{}_c{}_seed{}", c.row, c.col, c.seed));
        fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(runtime)?;
        match &c.outcome {
            Ok(r) => {
                write(&dir.join("report.json"), r.to_json())?;
                write(&dir.join("metrics.csv"), r.metrics_csv())?;
            }
            Err(msg) => {
                write(&dir.join("error.txt"), format!("{msg}\n"))?;
                errors.push(serde_json::json!({
                    "algorithm": c.algorithm,
                    "setting": c.setting,
                    "seed": c.seed,
                    "error": msg,
                }));
            }
        }
    }
    write(
        &args.out.join("errors.json"),
        serde_json::to_string_pretty(&errors).map_err(runtime)?,
    )?;
    write(
        &args.out.join("timing.json"),
        serde_json::json!({ "wall_clock_seconds": secs, "workers": args.workers }).to_string(),
    )?;
    let failed = outcome.failures();
    if failed > 0 {
        eprintln!("warning: {failed} of {} cells failed", outcome.cells.len());
    }
    eprintln!("{} cells, {failed} warnings", outcome.cells.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Partition(a) => cmd_partition(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

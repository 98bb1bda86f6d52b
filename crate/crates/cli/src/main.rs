use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use lessvfl_core::config::ExperimentConfig;
use lessvfl_core::data::{save_csv, save_flags, synth_generate, SyntheticSpec};
use lessvfl_core::experiment::{grid_search, read_report, run_experiment, write_grid_csv, write_reports, MetricsRecord};
use lessvfl_core::seed::{self, Stream};
use lessvfl_core::Error;

/// Vertical federated learning with spurious-feature removal.
///
/// Log verbosity is read from LESSVFL_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "lessvfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the methods listed in a config and write per-method reports.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Materialize a synthetic dataset as CSV plus a spurious-flag sidecar.
    Synth {
        /// TOML file with the synthetic dataset fields.
        spec: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep the [grid] section of a config and write grid.csv.
    Grid {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the reports found under a run directory.
    Report { run_dir: PathBuf },
}

const DEFAULT_OUT: &str = "runs";

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LESSVFL_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<Error>().is_some_and(Error::is_usage);
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run { config, out, seed } => cmd_run(&config, out, seed),
        Command::Synth { spec, out_dir, seed } => cmd_synth(&spec, &out_dir, seed),
        Command::Grid { config, out } => cmd_grid(&config, out),
        Command::Report { run_dir } => cmd_report(&run_dir),
    }
}

fn print_seed_table(master: u64) {
    println!("master seed {master}");
    for s in Stream::ALL {
        println!("  {:<9} {:#018x}", s.name(), seed::stream_seed(master, s));
    }
}

fn out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn cmd_run(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out_dir(&cfg, out);
    print_seed_table(cfg.seed);
    let records = run_experiment(&cfg)?;
    write_reports(&dir, &records)?;
    print_summary(&records);
    println!("reports written to {}", dir.display());
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} method(s) failed; see the error column");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(spec_path: &Path, out_dir: &Path, seed: u64) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(spec_path).map_err(|source| Error::Io {
        path: spec_path.to_path_buf(),
        source,
    })?;
    let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| Error::Config {
        field: "synthetic".into(),
        message: e.to_string(),
    })?;
    spec.validate()?;
    let (ds, _) = synth_generate(&spec, seed)?;
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    save_csv(&ds, &out_dir.join("data.csv"))?;
    save_flags(&ds, &out_dir.join("flags.csv"))?;
    println!(
        "{} samples, {} features ({} spurious) written to {}",
        ds.n_samples(),
        ds.n_features(),
        ds.spurious_flags.iter().filter(|&&f| f).count(),
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid(path: &Path, out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let cfg = ExperimentConfig::load(path)?;
    let dir = out_dir(&cfg, out);
    print_seed_table(cfg.seed);
    let report = grid_search(&cfg)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = dir.join("grid.csv");
    write_grid_csv(&report, &csv)?;
    println!("{} grid rows written to {}", report.rows.len(), csv.display());
    match report.winner {
        Some(i) => {
            let r = &report.rows[i];
            println!(
                "winner: {} pretrain={} party_lambda={:?} server_lambda={:?}",
                r.method, r.pretrain_epochs, r.party_lambda, r.server_lambda
            );
        }
        None => println!("no row meets the removal target"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(dir: &Path) -> anyhow::Result<ExitCode> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join("report.json"))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config {
            field: "run_dir".into(),
            message: format!("no <method>/report.json under {}", dir.display()),
        }
        .into());
    }
    let records = paths.iter().map(|p| read_report(p)).collect::<Result<Vec<_>, _>>()?;
    print_summary(&records);
    Ok(ExitCode::SUCCESS)
}

fn cell(v: Option<f64>, scale: f64, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.*}", digits, x * scale))
}

fn print_summary(records: &[MetricsRecord]) {
    println!(
        "{:<13} {:>10} {:>12} {:>9} {:>9} {:>10} {:>9}  error",
        "method", "total_mb", "cost_mb", "best_acc", "final_acc", "final_loss", "removed%"
    );
    for r in records {
        let s = &r.summary;
        println!(
            "{:<13} {:>10.3} {:>12} {:>9} {:>9} {:>10} {:>9}  {}",
            r.method.name(),
            s.total_mb,
            cell(s.cost_to_targets_mb, 1.0, 3),
            cell(s.best_test_accuracy, 1.0, 4),
            cell(s.final_test_accuracy, 1.0, 4),
            cell(s.final_test_loss, 1.0, 4),
            cell(s.spurious_removed_fraction, 100.0, 1),
            r.error.as_deref().unwrap_or("")
        );
    }
}

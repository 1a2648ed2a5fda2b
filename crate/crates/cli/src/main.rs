//! `cyclelife` command-line entry point.
//!
//! Exit codes: 0 on success, 2 for invalid configuration or input data,
//! 3 when a stage fails for any other reason.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cyclelife::config::{example_config, PipelineConfig};
use cyclelife::pipeline::{run_sweep, run_until, RunSummary, StageName};
use cyclelife::synth::{generate_synthetic, SynthSpec};
use cyclelife::Error;

#[derive(Debug, Parser)]
#[command(name = "cyclelife", version = env!("CARGO_PKG_VERSION"), about = "Early-life cell lifetime prediction")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset. Uses the config's [synth] section, or
    /// defaults with `--seed` when `--out` is given.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parse cell files and assign splits.
    Ingest,
    /// Build the voltage-grid curves.
    Curves,
    /// Compute the feature table.
    Features,
    /// Forward feature selection.
    Select,
    /// Fit the elastic-net and baseline models.
    Train,
    /// Cluster cells and fit the hierarchical Bayesian model.
    Hbm,
    /// Write the comparison table and report files.
    Evaluate,
    /// Refit the headline features over other week pairs.
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage.
    Run,
    /// Print an example configuration.
    InitConfig {
        #[arg(long, default_value = "data")]
        dataset_dir: PathBuf,
        #[arg(long, default_value = "work")]
        work_dir: PathBuf,
        #[arg(long, default_value = "report")]
        report_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(cli: &Cli) -> cyclelife::Result<PipelineConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    PipelineConfig::load(path)
}

fn print_summary(s: &RunSummary) {
    if !s.executed.is_empty() {
        println!("ran: {}", s.executed.join(", "));
    }
    if !s.skipped.is_empty() {
        println!("up to date: {}", s.skipped.join(", "));
    }
    if !s.table.is_empty() {
        println!("{:<12} {:>3} {:>10} {:>10} {:>10}", "model", "n", "train%", "high%", "low%");
        for r in &s.table {
            let pct = |m: Option<cyclelife::eval::SplitMetrics>| m.map_or("-".to_string(), |m| format!("{:.2}", m.mape));
            println!(
                "{:<12} {:>3} {:>10} {:>10} {:>10}",
                r.model,
                r.n_features,
                pct(r.train),
                pct(r.test_high_dod),
                pct(r.test_low_dod)
            );
        }
        println!("report: {}", s.report_dir.display());
    }
}

fn stage(cli: &Cli, last: StageName) -> cyclelife::Result<()> {
    let config = load(cli)?;
    print_summary(&run_until(&config, last)?);
    Ok(())
}

fn execute(cli: &Cli) -> cyclelife::Result<()> {
    match &cli.command {
        Command::Synth { out: Some(out), seed } => {
            let o = generate_synthetic(&SynthSpec::new(*seed), out)?;
            println!("wrote {} cells to {}", o.cells.len(), out.display());
            Ok(())
        }
        Command::Synth { out: None, .. } => {
            let config = load(cli)?;
            if config.synth.is_none() {
                return Err(Error::Config("config has no [synth] section; pass --out".into()));
            }
            stage(cli, StageName::Synth)
        }
        Command::Ingest => stage(cli, StageName::Ingest),
        Command::Curves => stage(cli, StageName::Curves),
        Command::Features => stage(cli, StageName::Features),
        Command::Select => stage(cli, StageName::Select),
        Command::Train => stage(cli, StageName::Train),
        Command::Hbm => stage(cli, StageName::Hbm),
        Command::Evaluate | Command::Run => stage(cli, StageName::Evaluate),
        Command::Sweep { out } => {
            let config = load(cli)?;
            run_until(&config, StageName::Select)?;
            let out = out.clone().unwrap_or_else(|| config.paths.report_dir.join("week_pair_sweep.csv"));
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let rows = run_sweep(&config, &out)?;
            for r in &rows {
                let m = |x: Option<cyclelife::eval::SplitMetrics>| x.map_or("-".to_string(), |m| format!("{:.2}", m.mape));
                println!("w{}-w{} {:<8} high {:>8} low {:>8}", r.later, r.earlier, r.status, m(r.test_high_dod), m(r.test_low_dod));
            }
            println!("sweep: {}", out.display());
            Ok(())
        }
        Command::InitConfig { dataset_dir, work_dir, report_dir, seed } => {
            print!("{}", example_config(dataset_dir, work_dir, report_dir, *seed).to_toml_string()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

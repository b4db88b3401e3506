use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use confalign::dataset::load_dataset;
use confalign::runner::{report_from_dir, RunConfig, RunOutput, Runner};

/// Compare a model's token-probability confidence with its verbalized certainty.
#[derive(Parser)]
#[command(name = "confalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every question under the configured prompt variant.
    Run(RunArgs),
    /// Repeat certainty queries over a temperature grid.
    Sweep(RunArgs),
    /// Compare prompt variants on the same questions.
    Ablate(RunArgs),
    /// Rebuild report files from a directory with records.jsonl.
    Report {
        #[arg(long)]
        records: PathBuf,
        /// Where to write the reports. Defaults to the records directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a dataset file and print a summary.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn execute(args: &RunArgs, go: fn(&Runner) -> RunOutput) -> anyhow::Result<bool> {
    let mut cfg = RunConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(o) = &args.output {
        cfg.output_dir = o.clone();
    }
    let dir = cfg.output_dir.clone();
    let runner = Runner::new(cfg)?;
    let out = go(&runner);
    out.write(&dir)?;
    let c = &out.manifest.counts;
    println!(
        "{} trials, {} failed, {} cache hits; wrote {}",
        c.trials,
        c.failed_trials,
        c.cache_hits,
        dir.display()
    );
    for r in &out.reports.reports {
        let rho = r.correlation.rho.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!("  {} / {}: rho = {rho} (n = {})", r.dataset, r.variant, r.correlation.n);
    }
    Ok(out.manifest.degraded)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => execute(a, Runner::evaluate),
        Command::Sweep(a) => execute(a, Runner::sweep),
        Command::Ablate(a) => execute(a, Runner::ablate),
        Command::Report { records, output } => (|| {
            let files = report_from_dir(records)?;
            let dir = output.as_ref().unwrap_or(records);
            for p in files.write(dir)? {
                println!("{}", p.display());
            }
            Ok(false)
        })(),
        Command::Validate { dataset } => (|| {
            let d = load_dataset(dataset)?;
            println!("{}: {} valid of {} lines", d.manifest.name, d.questions.len(), d.total_lines);
            println!("sha256 {}", d.manifest.checksum);
            for (k, n) in &d.manifest.option_counts {
                println!("  {k} options: {n}");
            }
            for e in &d.rejected {
                println!("  line {}: {}", e.line, e.message);
            }
            Ok(false)
        })(),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("warning: more than half of the trials failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

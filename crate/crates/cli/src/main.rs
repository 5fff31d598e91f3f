use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use twistlab_core::harness::{configure_threads, exit_code, run, ExperimentConfig};

/// Run a twistlab experiment and write its CSV and summary.
#[derive(Debug, Parser)]
#[command(name = "twistlab", version, about)]
struct Cli {
    /// One of: validate, decompose, spectrum, cluster-scan, heat-check, restriction-scan, report.
    experiment: String,

    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,

    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the output directory in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = configure_threads()
        .and_then(|threads| {
            log::info!("using {threads} threads");
            ExperimentConfig::load(&cli.config, Some(&cli.experiment))
        })
        .and_then(|mut config| {
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            if let Some(out) = &cli.out {
                config.output = out.clone();
            }
            run(&config)
        });
    match &outcome {
        Ok(report) => {
            for v in &report.verdicts {
                let mark = if v.passed { "PASS" } else { "FAIL" };
                println!("{mark} {}: observed {:e}, expected {}", v.criterion, v.observed, v.expected);
            }
            println!("{} rows -> {}", report.rows.len(), report.csv);
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&outcome) as u8)
}

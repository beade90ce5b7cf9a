use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fvpkit::bench::{self, BenchError};

/// Experiment runner for parabolic final value problems.
#[derive(Parser)]
#[command(name = "fvpkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment(s) named in a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed, overriding `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the registered experiments.
    List,
    /// Parse and validate a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn thread_pool() -> Result<rayon::ThreadPool, BenchError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("FVPKIT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| BenchError::Config(format!("FVPKIT_THREADS must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| BenchError::Config(e.to_string()))
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<i32, BenchError> {
    let mut config = bench::load_config(&config)?;
    if let Some(out) = out {
        config.output_dir = Some(out);
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let summary = thread_pool()?.install(|| bench::run(&config))?;
    for e in &summary.experiments {
        println!("{:<20} {}", e.experiment, if e.passed { "PASS" } else { "FAIL" });
        for c in e.checks.iter().filter(|c| !c.passed) {
            println!("  {} = {:e} outside [{:?}, {:?}]", c.metric, c.value, c.lower, c.upper);
        }
    }
    println!("artifacts in {}", config.output_dir().display());
    Ok(summary.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match cli.command {
        Command::List => {
            for e in bench::list_experiments() {
                println!("{:<20} {}", e.name, e.description);
            }
            Ok(0)
        }
        Command::Validate { config } => bench::load_config(&config).map(|c| {
            let names: Vec<&str> = c.selected().unwrap_or_default().iter().map(|e| e.name).collect();
            println!("ok: {}", names.join(", "));
            0
        }),
        Command::Run { config, out, seed } => run(config, out, seed),
    };
    match status {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

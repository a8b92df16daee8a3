use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use talsc_core::config::ExperimentConfig;
use talsc_core::experiment::{run_experiment, run_sweep, SweepAxis};
use talsc_core::verify::{run_suite, SUITES};

// Per-sample gradient buffers are large and short-lived; the system allocator
// maps and unmaps them on every step.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Robust semantic-communication training with a learned sample-confidence module.
#[derive(Parser)]
#[command(name = "talsc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root seed; overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the numerical verification suites.
    Verify {
        /// Run only this suite.
        #[arg(long)]
        suite: Option<String>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run one experiment per value of a config axis.
    Sweep {
        config: PathBuf,
        /// snr_db, fnr, imbalance_factor or grid_size.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig, ExitCode> {
    match ExperimentConfig::load(path) {
        Ok(mut cfg) => {
            if let Some(s) = seed {
                cfg.seed = s;
                if let Err(e) = cfg.validate() {
                    eprintln!("--seed: {e}");
                    return Err(ExitCode::from(2));
                }
            }
            Ok(cfg)
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            Err(ExitCode::from(2))
        }
    }
}

fn configure_threads() {
    let Ok(raw) = std::env::var("TALSC_THREADS") else { return };
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring TALSC_THREADS={raw:?}; expected a positive integer"),
    }
}

fn verify(suite: Option<String>, seed: u64) -> ExitCode {
    let names: Vec<String> = match suite {
        Some(s) => vec![s],
        None => SUITES.iter().map(|s| s.to_string()).collect(),
    };
    let mut failed = Vec::new();
    for name in &names {
        match run_suite(name, seed) {
            Ok(report) => {
                print!("{report}");
                if !report.passed() {
                    failed.push(name.clone());
                }
            }
            Err(e) => {
                println!("FAIL {name}: {e}");
                failed.push(name.clone());
            }
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failing suites: {}", failed.join(", "));
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    configure_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed } => {
            let cfg = match load(&config, seed) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let out = out.unwrap_or_else(|| cfg.out.clone());
            match run_experiment(&cfg, &out) {
                Ok(summaries) => {
                    for s in summaries {
                        println!(
                            "{}: sra {:.4} macro-F1 {:.4} minority-F1 {:.4} ms-ssim {:.4}",
                            s.mode, s.sra, s.macro_f1, s.minority_f1, s.ms_ssim_mean
                        );
                    }
                    println!("results in {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Verify { suite, seed } => verify(suite, seed),
        Command::Sweep {
            config,
            axis,
            values,
            out,
            seed,
        } => {
            let cfg = match load(&config, seed) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let axis: SweepAxis = match axis.parse() {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            if values.is_empty() {
                eprintln!("validation error: --values must list at least one value");
                return ExitCode::from(2);
            }
            let out = out.unwrap_or_else(|| cfg.out.clone());
            match run_sweep(&cfg, axis, &values, &out) {
                Ok(path) => {
                    println!("sweep table in {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("sweep failed: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}

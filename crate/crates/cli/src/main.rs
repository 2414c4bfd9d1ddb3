use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use encrypto_core::harness::config::load_config;
use encrypto_core::harness::curve::{curve_points, emit_curve};
use encrypto_core::harness::{run_protocol, synthetic_blocks, verify_against_oracle, Outcome, Transcript};
use encrypto_core::seed::derive_seed;
use encrypto_core::{monte_carlo_leak, ConfigError, DataBlock, Error, SessionConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ABORT: u8 = 3;
const EXIT_MISMATCH: u8 = 4;

const VERIFY_LABEL: u64 = 0x7665_7269;

#[derive(Parser)]
#[command(name = "encrypto", version, about = "Randomized-dissemination MPC protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one session and print the announced result.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides master_seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// One line per party, comma-separated values. Synthetic inputs otherwise.
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Print the full transcript as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run K sessions with synthetic inputs and compare each with the plaintext aggregate.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        sessions: u64,
    },
    /// Monte-Carlo estimate of the leak probability.
    Mc {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        r: usize,
        #[arg(long = "x")]
        x: usize,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the leak-probability curve as CSV.
    Curve {
        #[arg(long)]
        n_min: usize,
        #[arg(long)]
        n_max: usize,
        #[arg(long)]
        m: usize,
        #[arg(long = "x")]
        x: usize,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        out: PathBuf,
        /// Adds Monte-Carlo columns with this many trials per point.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one session and write its privacy-preserving trace.
    Trace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }
}

fn config_failure(path: &Path, e: Error) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", path.display()),
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<SessionConfig, Failure> {
    let mut config = load_config(path).map_err(|e| config_failure(path, e))?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    Ok(config)
}

fn read_inputs(path: &Path) -> Result<Vec<DataBlock>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| config_failure(path, e.into()))?;
    text.lines()
        .map(|line| {
            line.split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| v.parse::<u64>())
                .collect::<Result<Vec<u64>, _>>()
                .map(DataBlock::new)
                .map_err(|e| Failure {
                    code: EXIT_CONFIG,
                    message: format!("{}: {e} in line {line:?}", path.display()),
                })
        })
        .collect()
}

fn blocks_for(config: &SessionConfig, inputs: Option<&Path>) -> Result<Vec<DataBlock>, Failure> {
    match inputs {
        Some(path) => read_inputs(path),
        None => Ok(synthetic_blocks(config, config.master_seed)),
    }
}

fn completed(t: &Transcript) -> Result<(), Failure> {
    match &t.outcome {
        Outcome::Completed { .. } => Ok(()),
        Outcome::Aborted { step, error } => Err(Failure {
            code: EXIT_ABORT,
            message: format!("session aborted at step {step}: {error}"),
        }),
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            seed,
            inputs,
            json,
        } => {
            let config = load(&config, seed)?;
            let blocks = blocks_for(&config, inputs.as_deref())?;
            let t = run_protocol(&config, &blocks)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&t).expect("transcript serializes"));
            }
            completed(&t)?;
            let result = t.result().expect("completed");
            if !json {
                println!("aggregate: {}", result.aggregate_kind);
                println!(
                    "values: {}",
                    result.values.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
                );
                println!("blocks: {}", result.n_blocks);
                println!("transcript_digest: {:#018x}", t.transcript_digest);
            }
            Ok(())
        }
        Command::Verify { config, sessions } => {
            let base = load(&config, None)?;
            let mut mismatches = 0u64;
            for k in 0..sessions {
                let mut config = base.clone();
                config.master_seed = derive_seed(base.master_seed, VERIFY_LABEL, k);
                let blocks = synthetic_blocks(&config, config.master_seed);
                let v = verify_against_oracle(&config, &blocks)?;
                if !v.matched {
                    mismatches += 1;
                    eprintln!(
                        "session {k} (seed {:#x}): {}",
                        config.master_seed,
                        v.diff.unwrap_or_default()
                    );
                }
            }
            println!("verified {} of {sessions} sessions", sessions - mismatches);
            if mismatches > 0 {
                return Err(Failure {
                    code: EXIT_MISMATCH,
                    message: format!("{mismatches} sessions disagreed with the plaintext aggregate"),
                });
            }
            Ok(())
        }
        Command::Mc {
            n,
            m,
            r,
            x,
            trials,
            seed,
        } => {
            let est = monte_carlo_leak(n, m, r, x, trials, seed)?;
            println!("analytic: {}", est.analytic);
            println!("empirical: {}", est.empirical);
            println!("std_error: {}", est.std_error);
            println!("ci95: [{}, {}]", est.ci_low(), est.ci_high());
            println!("trials: {}", est.trials);
            Ok(())
        }
        Command::Curve {
            n_min,
            n_max,
            m,
            x,
            r,
            out,
            trials,
            seed,
        } => {
            let points = curve_points(n_min, n_max, m, x, r, trials.map(|t| (t, seed)))?;
            emit_curve(&points, &out)?;
            println!("wrote {} points to {}", points.len(), out.display());
            Ok(())
        }
        Command::Trace {
            config,
            out,
            seed,
            inputs,
        } => {
            let config = load(&config, seed)?;
            let blocks = blocks_for(&config, inputs.as_deref())?;
            let t = run_protocol(&config, &blocks)?;
            t.write_trace(&out)?;
            println!("wrote {} events to {}", t.trace_lines().len(), out.display());
            completed(&t)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

//! Command-line front end. Exit codes: 0 success, 2 usage or validation
//! error, 3 numerical or runtime fault.

mod commands;
mod meta;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::SagaError;

pub use meta::{sha256_file, sha256_hex, Metadata};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAULT: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "saga", version, about = "Anchor-lattice local planner: simulate, fly, benchmark and train")]
pub struct Cli {
    /// Config file of key=value lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set lambda_safe=500.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Where to write the run metadata (default: next to the main output).
    #[arg(long, global = true)]
    pub meta: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PoseArgs {
    /// Camera position x (default: world start).
    #[arg(long, allow_negative_numbers = true)]
    pub x: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub y: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub z: Option<f64>,
    /// Heading in radians (default: towards the goal).
    #[arg(long, allow_negative_numbers = true)]
    pub yaw: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a pillar world file.
    GenWorld {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, allow_negative_numbers = true)]
        density: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a depth image (SDPT) from a pose.
    Render {
        #[arg(long)]
        world: PathBuf,
        #[command(flatten)]
        pose: PoseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// One forward pass: print the 15 decoded terminal states and scores.
    Plan {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, conflicts_with = "zero_weights")]
        weights: Option<PathBuf>,
        /// Use an all-zero network instead of a weights file.
        #[arg(long)]
        zero_weights: bool,
        #[command(flatten)]
        pose: PoseArgs,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fly one episode and write its log.
    Fly {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        vmax: Option<f64>,
        /// learned, oracle or random.
        #[arg(long)]
        mode: Option<String>,
        /// Output prefix: writes PREFIX.csv and PREFIX.meta.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Run a benchmark grid and write the report CSV.
    Bench {
        /// Seed list, e.g. 0-9 or 1,4,7.
        #[arg(long)]
        seeds: String,
        #[arg(long, default_value = "2,3,4")]
        speeds: String,
        #[arg(long, alias = "density")]
        densities: Option<String>,
        #[arg(long, default_value = "oracle")]
        modes: String,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fly oracle episodes and record a training dataset.
    Collect {
        #[arg(long)]
        seeds: String,
        #[arg(long, default_value = "0.05,0.1")]
        densities: String,
        #[arg(long, default_value_t = 100)]
        frames_per_world: usize,
        /// Writes OUT_DIR/dataset.sgds and OUT_DIR/worlds/.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the network on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Start from these weights instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Writes weights.sagw, loss_curve.csv and per-epoch checkpoints.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Selection regret of trained weights on held-out frames.
    Regret {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train with and without the polar positional encoding and compare.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        held_out: PathBuf,
        /// Learned-mode benchmark seeds for both arms (optional).
        #[arg(long)]
        bench_seeds: Option<String>,
        #[arg(long, default_value = "2")]
        bench_speeds: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Finite-difference check of the end-to-end training gradient.
    Gradcheck {
        /// Use the shrunken network (the only supported size).
        #[arg(long)]
        tiny: bool,
        /// Network seed (default: the reference seed).
        #[arg(long)]
        net_seed: Option<u64>,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Print the parameter manifest of a weights file or a fresh network.
    Manifest {
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let command_line = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    let result = resolve_config(&cli).and_then(|config| {
        let ctx = commands::Context {
            config,
            command_line,
            meta: cli.meta.clone(),
        };
        commands::dispatch(&ctx, &cli.command)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(cli: &Cli) -> crate::Result<RunConfig> {
    let mut c = RunConfig::from_env()?;
    if let Some(path) = &cli.config {
        c.merge_file(path)?;
    }
    for pair in &cli.overrides {
        c.set_pair(pair)?;
    }
    Ok(c)
}

/// Parses `0-9`, `3` or `1,4,7` (ranges inclusive, mixable).
pub fn parse_seed_list(s: &str) -> crate::Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || SagaError::config(format!("bad seed list entry {part:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(SagaError::config("empty seed list"));
    }
    Ok(out)
}

pub fn parse_f64_list(s: &str) -> crate::Result<Vec<f64>> {
    let out: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| SagaError::config(format!("bad number {p:?}")))
        })
        .collect::<crate::Result<_>>()?;
    if out.is_empty() {
        return Err(SagaError::config("empty number list"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seed_list("5, 1,2-3").unwrap(), vec![5, 1, 2, 3]);
        assert!(parse_seed_list("3-1").is_err());
        assert!(parse_seed_list("").is_err());
        assert!(parse_seed_list("a").is_err());
    }

    #[test]
    fn number_lists() {
        assert_eq!(parse_f64_list("2,3,4").unwrap(), vec![2.0, 3.0, 4.0]);
        assert!(parse_f64_list("2,x").is_err());
        assert!(parse_f64_list("inf").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["saga", "no-such-command"]), EXIT_USAGE);
        assert_eq!(run(["saga", "gen-world", "--seed", "1"]), EXIT_USAGE);
        assert_eq!(run(["saga", "--help"]), EXIT_OK);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(SagaError::config("x").exit_code(), EXIT_USAGE);
        assert_eq!(SagaError::NonFinite("x".into()).exit_code(), EXIT_FAULT);
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use verasel_cli::commands::{self, Overrides, EXIT_MISMATCH, EXIT_OK, EXIT_USAGE};
use verasel_core::crypto::Backend;

const OUTPUT_HELP: &str = "\
Files written by `simulate`:
  board.txt        bulletin board transcript (ends with a sha256 digest line)
  active_sets.csv  epoch,node_id,weight,selected,round,layer
                   one row per validated roster member; round and layer are
                   empty for members that were not selected
  seeds.csv        epoch,seed,provenance,proposer
                   provenance is genesis, vrf-proposed or fallback
  rejected.csv     epoch,node_id,reason
  params.conf      threshold, layers and backend used (read by `verify`)
  summary.txt      client agreement, rejections and per-phase timing

Files written by `validate`:
  frequencies.csv  node_id,weight,count_a,freq_a,count_b,freq_b
  ks.csv           reading,n,m,statistic,critical,accept
  cdf_a.csv        frequency,cdf (empirical CDF of arm A frequencies)
  cdf_b.csv        frequency,cdf (oracle arm)
  validation.txt   human-readable report

Exit codes: 0 success or match, 1 usage error, 2 verification mismatch
(or KS rejection), 3 degenerate epoch.";

#[derive(Parser)]
#[command(name = "verasel", version, about = "Verifiable weighted mixnode selection", after_help = OUTPUT_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate key files.
    Keygen {
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = Backend::Ecvrf)]
        backend: Backend,
        /// Derive keys deterministically from this seed.
        #[arg(long)]
        rng_seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Run a multi-epoch scenario and write its transcript and results.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        backend: Option<Backend>,
        #[arg(long)]
        rng_seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Recompute seeds, rosters and ActiveSets from a transcript.
    Verify {
        #[arg(long)]
        board_file: PathBuf,
        /// Directory holding the recorded results; defaults to the board file's.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Check only this epoch.
        #[arg(long)]
        epoch: Option<u64>,
        #[arg(long)]
        backend: Option<Backend>,
    },
    /// Compare selection frequencies against the trusted-party oracle.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials_a: Option<u64>,
        #[arg(long)]
        trials_b: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        backend: Option<Backend>,
        #[arg(long)]
        rng_seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Keygen {
            out,
            count,
            backend,
            rng_seed,
            force,
        } => {
            for p in commands::keygen(&out, count, backend, rng_seed, force)? {
                println!("{}", p.display());
            }
            Ok(EXIT_OK)
        }
        Command::Simulate {
            config,
            out,
            backend,
            rng_seed,
            force,
        } => {
            let overrides = Overrides {
                backend,
                rng_seed,
                ..Overrides::default()
            };
            let outcome = commands::simulate(&config, &out, &overrides, force)?;
            print!("{}", outcome.summary);
            Ok(outcome.exit_code)
        }
        Command::Verify {
            board_file,
            out,
            epoch,
            backend,
        } => {
            let report = commands::verify(&board_file, out.as_deref(), epoch, backend)?;
            print!("{}", report.text());
            Ok(report.exit_code())
        }
        Command::Validate {
            config,
            out,
            trials_a,
            trials_b,
            alpha,
            backend,
            rng_seed,
            force,
        } => {
            let overrides = Overrides {
                backend,
                rng_seed,
                trials_a,
                trials_b,
                alpha,
            };
            let outcome = commands::validate(&config, &out, &overrides, force)?;
            print!("{}", outcome.summary);
            Ok(if outcome.asserted && !outcome.report.ks_frequency.accept {
                EXIT_MISMATCH
            } else {
                EXIT_OK
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}

//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::error::{Error, Result};
use crate::experiments::{posterior_snapshot, prior_report, run_experiment, write_asymptote_csv, write_atomic};
use crate::scenario::{load_scenario, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "otl", version, about = "Bayesian online transfer learning simulator")]
pub struct Cli {
    /// Worker threads (default: OTL_THREADS, else one per processor)
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo regret curves for both arms
    Run {
        /// Builtin scenario name or config file path
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV (stdout when absent)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Asymptotic regret for n = 1..=N
    Asymptote {
        #[arg(long)]
        scenario: String,
        #[arg(long = "n-max")]
        n_max: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior grids after K target samples
    Snapshot {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that the prior is proper around the true parameters
    ValidatePrior {
        #[arg(long)]
        scenario: String,
    },
    /// List builtin scenarios
    List,
}

fn with_overrides(mut config: ScenarioConfig, reps: Option<usize>, seed: Option<u64>) -> Result<ScenarioConfig> {
    if let Some(r) = reps {
        if r == 0 {
            return Err(Error::config("reps", "must be at least 1"));
        }
        config.reps = r;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

/// Executes a parsed command line, writing reports to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            reps,
            seed,
            out,
        } => {
            let config = with_overrides(load_scenario(&scenario)?, reps, seed)?;
            let report = run_experiment(&config, cli.threads)?;
            info!(
                "`{}`: {} of {} trials completed",
                config.name, report.completed, config.reps
            );
            match out {
                Some(p) => report.curve.write_atomic(&p),
                None => report.curve.write_csv(stdout),
            }
        }
        Command::Asymptote { scenario, n_max, out } => {
            let config = load_scenario(&scenario)?;
            let n_max = n_max.unwrap_or(config.n);
            if n_max == 0 {
                return Err(Error::config("n-max", "must be at least 1"));
            }
            match out {
                Some(p) => write_atomic(&p, |w| write_asymptote_csv(&config, n_max, w)),
                None => write_asymptote_csv(&config, n_max, stdout),
            }
        }
        Command::Snapshot { scenario, n, out } => {
            let config = load_scenario(&scenario)?;
            posterior_snapshot(&config, n)?.write_atomic(&out)
        }
        Command::ValidatePrior { scenario } => {
            let config = load_scenario(&scenario)?;
            let r = prior_report(&config)?;
            writeln!(stdout, "scenario: {}", config.name)?;
            writeln!(stdout, "marginal proper: {}", r.marginal_proper)?;
            writeln!(stdout, "conditional proper: {}", r.conditional_proper)?;
            writeln!(stdout, "neighbourhoods: delta_s = {}, delta_t = {}, clipped = {}", r.delta_s, r.delta_t, r.clipped)?;
            if let Some(w) = &r.witness {
                match &w.theta_t {
                    Some(t) => writeln!(stdout, "witness: theta_s = {:?}, theta_t = {:?}", w.theta_s, t)?,
                    None => writeln!(stdout, "witness: theta_s = {:?}", w.theta_s)?,
                }
            }
            if !r.is_proper() {
                warn!("prior of `{}` is improper at the true parameters", config.name);
                writeln!(stdout, "warning: improper prior; regret grows linearly")?;
            }
            Ok(())
        }
        Command::List => {
            for name in crate::scenario::builtin_names() {
                writeln!(stdout, "{name}")?;
            }
            Ok(())
        }
    }
}

/// Parses `argv`, runs the command and maps the outcome to an exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(cli, &mut lock) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ogpsa::Execution;
use ogpsa_cli::commands::{self, Axis};
use ogpsa_cli::config::{self, Experiment};
use ogpsa_cli::verify::{self, VerifyOptions};
use ogpsa_cli::CliError;

#[derive(Parser)]
#[command(name = "ogpsa", version, about = "Orthogonal gradient projection for safety alignment")]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides both the family and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method and write records, tax and a loss chart.
    Run(Common),
    /// Run naive, replay and ogpsa on the same family.
    Compare(Common),
    /// Sweep the refresh period, the reference set or the reference pool size.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// K, M or refsize.
        #[arg(long)]
        axis: Axis,
        /// Comma-separated values, for example `2,5,10,inf`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Run the property and trend checks and print one line per check.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replace the projection by the identity; the projection checks must then fail.
        #[arg(long)]
        inject_skip_projection: bool,
    },
}

fn load(common: &Common) -> Result<Experiment, CliError> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| CliError::Io(format!("{}: {e}", common.config.display())))?;
    let mut exp = config::parse(&text).map_err(|source| CliError::Parse {
        path: common.config.display().to_string(),
        source,
    })?;
    let base = common.config.parent().unwrap_or(Path::new("."));
    if let Some(d) = &exp.dataset {
        if d.is_relative() {
            exp.dataset = Some(base.join(d));
        }
    }
    if let Some(seed) = common.seed {
        exp.set_seed(seed);
    }
    if let Some(out) = &common.out {
        exp.out = out.clone();
    }
    Ok(exp)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let execution = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Run(common) => {
            let exp = load(&common)?;
            let out = commands::cmd_run(&exp, execution)?;
            print!("{}", out.report.to_csv());
            println!("wrote {}", exp.out.display());
        }
        Command::Compare(common) => {
            let exp = load(&common)?;
            let table = commands::cmd_compare(&exp, execution)?;
            print!("{}", table.to_csv());
            println!("wrote {}", exp.out.display());
        }
        Command::Sweep { common, axis, values } => {
            let exp = load(&common)?;
            let outcome = commands::cmd_sweep(&exp, axis, &values, execution)?;
            print!("{}", outcome.table.to_csv());
            if let Some((label, e)) = outcome.failures.first() {
                for (l, e) in &outcome.failures {
                    eprintln!("leg {l} failed: {e}");
                }
                return Err(match e {
                    CliError::Numeric { step, .. } => CliError::Numeric {
                        step: *step,
                        message: format!("{} of {} legs failed, first {label}: {e}", outcome.failures.len(), values.len()),
                    },
                    _ => CliError::Config(format!("{} legs failed, first {label}: {e}", outcome.failures.len())),
                });
            }
            println!("wrote {}", exp.out.display());
        }
        Command::Verify { seed, inject_skip_projection } => {
            let opts = VerifyOptions {
                seed,
                inject_skip_projection,
                execution,
            };
            let checks = verify::run_all(&opts);
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            if failed > 0 {
                return Err(CliError::Verification(format!("{failed} of {} checks failed", checks.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

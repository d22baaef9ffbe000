use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use i2c_cli::config::parse_assignment;
use i2c_cli::{resolve, run_eval, run_lqr_equiv, run_trajopt, CliResult, ExperimentKind};

/// Trajectory optimization by input inference.
///
/// Any configuration key can also be given as a flag named after it, for
/// example `--em.alpha_init 0.02`.
#[derive(Parser)]
#[command(name = "i2c", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare one E-step on the linear test system with dynamic-programming LQR.
    LqrEquiv {
        #[command(flatten)]
        common: Common,
    },
    /// Optimize a swing-up trajectory by EM.
    Trajopt {
        /// pendulum, cartpole, double_cartpole or linear_c1.
        env: String,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo evaluation of a stored controller.
    Eval {
        env: String,
        controller: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file with dotted keys such as `em.alpha_init`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of evaluation trials.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> CliResult<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = self.set.iter().map(|s| parse_assignment(s)).collect::<CliResult<_>>()?;
        if let Some(seed) = self.seed {
            out.push(("seed".into(), seed.to_string()));
        }
        if let Some(n) = self.trials {
            out.push(("eval.trials".into(), n.to_string()));
        }
        if let Some(n) = self.max_iters {
            out.push(("em.max_iters".into(), n.to_string()));
        }
        Ok(out)
    }
}

/// Turns `--section.key value` and `--section.key=value` into `--set section.key=value`.
fn rewrite_dotted_flags(args: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut args = args.into_iter().peekable();
    while let Some(arg) = args.next() {
        let dotted = arg.strip_prefix("--").filter(|key| key.split('=').next().is_some_and(|k| k.contains('.')));
        match dotted {
            Some(key) if key.contains('=') => out.extend(["--set".to_string(), key.to_string()]),
            Some(key) => match args.next() {
                Some(value) => out.extend(["--set".to_string(), format!("{key}={value}")]),
                None => out.push(arg),
            },
            None => out.push(arg),
        }
    }
    out
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::LqrEquiv { common } => {
            let config = resolve(ExperimentKind::LqrEquiv, None, common.config.as_deref(), &common.overrides()?)?;
            let diff = run_lqr_equiv(&config, &common.out)?;
            println!("max relative gain error {:e} at t = {}", diff.max_rel_err, diff.worst_t);
        }
        Command::Trajopt { env, common } => {
            let config = resolve(ExperimentKind::Trajopt, Some(&env), common.config.as_deref(), &common.overrides()?)?;
            let outcome = run_trajopt(&config, &common.out)?;
            match outcome.status.predicted_cost {
                Some(c) => println!("{} after {} iterations: predicted cost {c}", outcome.status.status, outcome.status.iterations),
                None => println!("no iterations run"),
            }
        }
        Command::Eval { env, controller, common } => {
            let config = resolve(ExperimentKind::Eval, Some(&env), common.config.as_deref(), &common.overrides()?)?;
            let report = run_eval(&config, &controller, &common.out)?;
            println!("cost {} ± {} over {} trials", report.mean, report.std, report.n_trials);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(rewrite_dotted_flags(std::env::args()));
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

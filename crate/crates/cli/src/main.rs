use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hyfit::commands::{self, SimulateArgs};
use hyfit_core::baselines::BenchOptions;
use hyfit_core::robustness::{BoundKind, GainBound};

#[derive(Parser)]
#[command(name = "hyfit", version, about = "Hybrid finite-time parameter estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bounds {
    Iss,
    Iiss,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gain {
    Stated,
    Neumann,
}

#[derive(Subcommand)]
enum Command {
    /// Check excitation and gain conditions of a scenario without running it.
    Check {
        config: PathBuf,
        /// Print the normalized scenario and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Run the hybrid estimator on a scenario and write CSV results.
    Simulate {
        config: PathBuf,
        /// Directory for the CSV and summary files.
        #[arg(long, value_name = "DIR")]
        csv: Option<PathBuf>,
        /// Noise bound to check the realized error against.
        #[arg(long, value_enum, default_value = "none")]
        bounds: Bounds,
        /// How the reset gains are bounded inside the noise bounds.
        #[arg(long, value_enum, default_value = "stated")]
        gain_bound: Gain,
        #[arg(long)]
        dump_config: bool,
    },
    /// Time the hybrid, gradient and DREM estimators across dimensions.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [25, 50, 100, 200])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 2.0 * std::f64::consts::PI)]
        t_end: f64,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Run the (n, method) cells on separate threads.
        #[arg(long)]
        parallel: bool,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Re-run a named experiment: fig1, fig2 or table1.
    Reproduce {
        name: String,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    let code = match cli.command {
        Command::Check { config, dump_config } => commands::cmd_check(&config, dump_config, &mut out, &mut err),
        Command::Simulate { config, csv, bounds, gain_bound, dump_config } => {
            let args = SimulateArgs {
                config: &config,
                csv_dir: csv.as_deref(),
                bounds: match bounds {
                    Bounds::Iss => Some(BoundKind::Iss),
                    Bounds::Iiss => Some(BoundKind::Iiss),
                    Bounds::None => None,
                },
                gain_bound: match gain_bound {
                    Gain::Stated => GainBound::Stated,
                    Gain::Neumann => GainBound::Neumann,
                },
                dump_config,
            };
            commands::cmd_simulate(&args, &mut out, &mut err)
        }
        Command::Bench { dims, t_end, reps, parallel, out: dir } => {
            let opts = BenchOptions { dims, t_end, reps, parallel, ..BenchOptions::default() };
            commands::cmd_bench(&opts, &commands::default_out_dir(dir.as_deref()), &mut out, &mut err)
        }
        Command::Reproduce { name, out: dir } => {
            commands::cmd_reproduce(&name, &commands::default_out_dir(dir.as_deref()), &mut out, &mut err)
        }
    };
    ExitCode::from(code as u8)
}

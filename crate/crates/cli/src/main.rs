//! `aoictl`: estimate mobility models, solve aging-control MDPs, optimize
//! threshold prices, simulate policies and aggregate run reports.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use aoictl_core::anneal::Schedule;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aoictl", version, about = "Age-of-information traffic offloading toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Log,
    Power,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a transition matrix from a mobility trace.
    Estimate {
        /// Trace file: `time device cell` per line, or `time device x y`
        /// with --centers.
        #[arg(long)]
        trace: PathBuf,
        /// Resampling interval in seconds.
        #[arg(long, default_value_t = 2.0)]
        resample_step: f64,
        /// Cell centers (`cell x y` per line); switches the trace format to
        /// cartesian coordinates.
        #[arg(long)]
        centers: Option<PathBuf>,
        /// Resample to the nearest record instead of holding the last one.
        #[arg(long)]
        nearest: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve the aging-control MDP for a priced instance.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Anneal threshold vectors to minimize offloading cost.
    Optimize {
        #[arg(long)]
        instance: PathBuf,
        /// Color-parallel accelerated annealer instead of the plain chain.
        #[arg(long)]
        accelerated: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ScheduleArg::Log)]
        schedule: ScheduleArg,
        /// Exponent for the power schedule.
        #[arg(long, default_value_t = 2.8)]
        q: f64,
        /// Cooling scale; defaults to the maximal cost swing.
        #[arg(long)]
        a_hat: Option<f64>,
        /// Deferral bound; defaults to the largest latency-feasible value.
        #[arg(long)]
        t_max: Option<usize>,
        #[arg(long)]
        iteration_cap: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Simulate a threshold policy: upload cycles, and optionally rewards.
    Simulate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        cycles: u64,
        /// Also run a slot-level reward simulation (needs [pricing]).
        #[arg(long, default_value_t = 0)]
        slots: u64,
        /// Replay a recorded trajectory (one location index per line;
        /// needs [pricing]).
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Aggregate summaries from a directory of runs into report tables.
    Report {
        /// Directory holding run outputs (summary.json at top level or one
        /// level below).
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate {
            trace,
            resample_step,
            centers,
            nearest,
            out,
        } => commands::cmd_estimate(&trace, resample_step, centers.as_deref(), nearest, &out),
        Command::Solve {
            instance,
            tolerance,
            out,
        } => commands::cmd_solve(&instance, tolerance, &out),
        Command::Optimize {
            instance,
            accelerated,
            seed,
            schedule,
            q,
            a_hat,
            t_max,
            iteration_cap,
            out,
        } => {
            let schedule = match schedule {
                ScheduleArg::Log => Schedule::Log,
                ScheduleArg::Power => Schedule::Power { q },
            };
            commands::cmd_optimize(
                &instance,
                accelerated,
                seed,
                schedule,
                a_hat,
                t_max,
                iteration_cap,
                &out,
            )
        }
        Command::Simulate {
            instance,
            thresholds,
            cycles,
            slots,
            replay,
            seed,
            out,
        } => commands::cmd_simulate(
            &instance,
            &thresholds,
            cycles,
            slots,
            replay.as_deref(),
            seed,
            &out,
        ),
        Command::Report { run, out } => {
            let out = out.unwrap_or_else(|| run.clone());
            commands::cmd_report(&run, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

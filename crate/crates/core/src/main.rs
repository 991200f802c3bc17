use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use launcher_ocp::cli::{
    apply_env_overrides, parse_case_file, parse_config, parse_sweep_file, read_records, render_summary, run_solve,
    run_sweep, summarize, Problem, TERMINAL_CHECK_TOL,
};
use launcher_ocp::continuation::{ContinuationOptions, RunStatus};

#[derive(Debug, Parser)]
#[command(name = "launcher-ocp", version, about = "Minimum-time launcher reorientation by indirect shooting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a single case and write its trajectory.
    Solve {
        /// Vehicle configuration file, or a preset name.
        #[arg(long)]
        config: PathBuf,
        /// Case file; defaults to the `[case]` table of the configuration.
        #[arg(long)]
        case: Option<PathBuf>,
        #[arg(long)]
        no_frame_change: bool,
        /// Stop the last continuation at this value and report a sub-optimal solution.
        #[arg(long, value_parser = parse_unit)]
        stop_lambda4: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a factorial sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Sweep file or preset name; defaults to the `[sweep]` table of the configuration.
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        no_frame_change: bool,
        #[arg(long, value_parser = parse_unit)]
        stop_lambda4: Option<f64>,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute a sweep summary from its JSON lines.
    Summarize {
        jsonl: PathBuf,
        #[arg(long, default_value = "sweep")]
        label: String,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn options(base: ContinuationOptions, no_frame_change: bool, stop: Option<f64>) -> Result<ContinuationOptions, String> {
    let mut opts = base;
    apply_env_overrides(&mut opts, |k| std::env::var(k).ok()).map_err(|e| e.to_string())?;
    opts.frame_change = !no_frame_change;
    opts.stop_lambda4 = stop;
    Ok(opts)
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Solve { config, case, no_frame_change, stop_lambda4, out } => {
            let (cfg, problem) = parse_config(&config).map_err(|e| e.to_string())?;
            let input = match (case, problem) {
                (Some(path), _) => parse_case_file(&path).map_err(|e| e.to_string())?,
                (None, Some(Problem::Case(c))) => c,
                _ => return Err("no case given: pass --case or add a [case] table".into()),
            };
            let opts = options(cfg.options().map_err(|e| e.to_string())?, no_frame_change, stop_lambda4)?;
            let (_, record) = run_solve(&cfg, &input, &opts, &out).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&record).map_err(|e| e.to_string())?);
            let valid = record.terminal_error.is_some_and(|e| e <= TERMINAL_CHECK_TOL);
            Ok(match record.status {
                RunStatus::Optimal | RunStatus::SubOptimal if valid => ExitCode::SUCCESS,
                _ => ExitCode::FAILURE,
            })
        }
        Command::Sweep { config, sweep, no_frame_change, stop_lambda4, jobs, out } => {
            let (cfg, problem) = parse_config(&config).map_err(|e| e.to_string())?;
            let spec = match (sweep, problem) {
                (Some(path), _) => parse_sweep_file(&path).map_err(|e| e.to_string())?,
                (None, Some(Problem::Sweep(s))) => *s,
                _ => return Err("no sweep given: pass --sweep or add a [sweep] table".into()),
            };
            let opts = options(cfg.options().map_err(|e| e.to_string())?, no_frame_change, stop_lambda4)?;
            let (summary, _) = run_sweep(&cfg, &spec, &opts, jobs, &out).map_err(|e| e.to_string())?;
            let mode = if opts.frame_change { "with change of frame" } else { "without change of frame" };
            print!("{}", render_summary(&format!("{} sweep, {mode}", cfg.name), &summary));
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize { jsonl, label } => {
            let records = read_records(&jsonl).map_err(|e| e.to_string())?;
            print!("{}", render_summary(&label, &summarize(&records)));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

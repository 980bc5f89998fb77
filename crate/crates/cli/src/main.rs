mod args;
mod commands;
mod output;
mod selftest;

use std::process::ExitCode;

use clap::Parser;
use vlsf_core::{Error, TOOL_VERSION};

use args::{Args, Command};
use commands::{exit_code, Meta, RunConfig};

fn fail(e: &Error) -> ExitCode {
    eprintln!("vlsf: {e}");
    ExitCode::from(exit_code(e) as u8)
}

/// Exit status for a batch of per-point statuses: the code of the first failure.
fn batch_status<'a>(statuses: impl IntoIterator<Item = &'a str>) -> ExitCode {
    for s in statuses {
        match s {
            "ok" => {}
            "infeasible" => return ExitCode::from(2),
            "nonconvergence" => return ExitCode::from(4),
            _ => return ExitCode::from(3),
        }
    }
    ExitCode::SUCCESS
}

fn meta(args: &Args, cfg: &RunConfig) -> Meta {
    Meta {
        tool: "vlsf",
        version: TOOL_VERSION,
        seed: args.seed,
        config: cfg.clone(),
    }
}

fn run(args: &Args) -> Result<ExitCode, Error> {
    let mut cfg = RunConfig::from_args(args);
    if !(cfg.eps > 0.0 && cfg.eps < 1.0) {
        return Err(Error::Validation(format!("--eps must lie in (0, 1), got {}", cfg.eps)));
    }
    if !(cfg.snr > 0.0 && cfg.snr.is_finite()) {
        return Err(Error::Validation(format!("--snr must be positive, got {}", cfg.snr)));
    }
    let out = args.out.as_deref();
    match args.command {
        Command::Rates => {
            let rows = commands::cmd_rates(&cfg);
            output::emit(out, cfg.format, &meta(args, &cfg), "rates", &rows, &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Table => {
            let rows = commands::cmd_table(&cfg)?;
            output::emit(out, cfg.format, &meta(args, &cfg), "rows", &rows, &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Optimize => {
            let entries = commands::cmd_optimize(&cfg);
            let flat: Vec<_> = entries.iter().map(output::OptimizeCsv::from).collect();
            output::emit(out, cfg.format, &meta(args, &cfg), "designs", &entries, &flat)?;
            Ok(batch_status(entries.iter().map(|e| e.status.as_str())))
        }
        Command::Bound => {
            let designs = commands::load_designs(args, &cfg)?;
            commands::adopt_designs(&mut cfg, &designs);
            let entries = commands::cmd_bound(&designs, &cfg, args.seed);
            let flat: Vec<_> = entries.iter().map(output::BoundCsv::from).collect();
            output::emit(out, cfg.format, &meta(args, &cfg), "bounds", &entries, &flat)?;
            Ok(batch_status(entries.iter().map(|e| e.status.as_str())))
        }
        Command::Simulate => {
            let designs = commands::load_designs(args, &cfg)?;
            commands::adopt_designs(&mut cfg, &designs);
            let mut trace = Vec::new();
            let entries = commands::cmd_simulate(&designs, &cfg, args.seed, &mut trace);
            let flat: Vec<_> = entries.iter().map(output::SimCsv::from).collect();
            output::emit(out, cfg.format, &meta(args, &cfg), "simulations", &entries, &flat)?;
            if let Some(path) = &args.trace {
                output::write_trace(path, &meta(args, &cfg), &trace)?;
            }
            Ok(batch_status(entries.iter().map(|e| e.status.as_str())))
        }
        Command::Selftest => {
            let results = selftest::run(args.seed);
            let flat: Vec<_> = results.iter().collect();
            output::emit(out, cfg.format, &meta(args, &cfg), "checks", &results, &flat)?;
            let ok = results.iter().all(|r| r.pass);
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    run(&args).unwrap_or_else(|e| fail(&e))
}

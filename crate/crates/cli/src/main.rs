use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use nys_sink_cli::commands::{run_benchmark, run_compute, run_validate};
use nys_sink_cli::{Cli, CliConfig, CliError, Command};

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(n) = threads else { return Ok(()) };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))
}

/// Reports `err` on stderr and, for `compute`, as a JSON object in place of
/// the result.
fn fail(err: CliError, json_to: Option<Option<&Path>>) -> ExitCode {
    eprintln!("error: {err}");
    if let Some(path) = json_to {
        let body = serde_json::to_string_pretty(&serde_json::json!({ "error": err.report() })).unwrap_or_default();
        if let Err(e) = nys_sink_cli::io::emit(path, &(body + "\n")) {
            eprintln!("error: {e}");
        }
    }
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    match cli.command {
        Command::Compute(args) => {
            let output = args.output.clone();
            let cfg = match CliConfig::from_common(&args) {
                Ok(cfg) => cfg,
                Err(e) => return fail(e, Some(output.as_deref())),
            };
            match init_threads(cfg.threads).and_then(|_| run_compute(&cfg)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e, Some(cfg.output.as_deref())),
            }
        }
        Command::Benchmark(args) => {
            let result = CliConfig::from_benchmark(&args)
                .and_then(|cfg| init_threads(cfg.threads).and_then(|_| run_benchmark(&cfg)));
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e, None),
            }
        }
        Command::Validate(args) => {
            let result = CliConfig::from_validate(&args)
                .and_then(|cfg| init_threads(cfg.threads).and_then(|_| run_validate(&cfg)));
            match result {
                Ok(failed) if failed.is_empty() => ExitCode::SUCCESS,
                Ok(failed) => {
                    eprintln!("failing suites: {}", failed.join(", "));
                    ExitCode::from(1)
                }
                Err(e) => fail(e, None),
            }
        }
    }
}

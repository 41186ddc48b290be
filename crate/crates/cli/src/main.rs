//! `tnc`: amplitude simulation of quantum circuits by tensor network
//! contraction, with slicing, reuse planning, and a fused-execution cost model.

mod args;
mod pipeline;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Format};
use pipeline::Failure;

fn emit(job: &args::Job, body: &str) -> Result<(), Failure> {
    match &job.out {
        Some(path) => std::fs::write(path, body).map_err(|e| Failure::config("output", e)),
        None => std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| Failure::config("output", e)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let job = cli.command.job();
    let result = pipeline::dispatch(&cli.command).and_then(|out| {
        let body = match job.format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&out.json)
                    .map_err(|e| Failure::config("output", e))?;
                s.push('\n');
                s
            }
            Format::Csv => out.csv,
        };
        emit(job, &body)?;
        match out.verification_error {
            Some(msg) => Err(Failure::verify(msg)),
            None => Ok(()),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tnc: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

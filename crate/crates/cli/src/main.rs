use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use schrostab::{check_conditions, ExperimentSpec, SPEC_KEYS};

#[derive(Parser, Debug)]
#[command(name = "schrostab", version, about = "Feedback stabilization of the bilinear Schrödinger equation on an interval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct SpecArgs {
    /// TOML experiment spec
    spec: PathBuf,
    /// `section.key=value` assignments applied on top of the spec file
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the retained eigenvalues as `k,lambda_k`
    Eig(SpecArgs),
    /// Print the genericity audit of (V, Q) as JSON
    CheckConditions(SpecArgs),
    /// Run one closed-loop simulation and print its summary as JSON
    Simulate(SpecArgs),
    /// Run the Cartesian product of the sweep axes and print the table as JSON
    Sweep(SpecArgs),
}

fn keys_help() -> String {
    let width = SPEC_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Spec keys (also valid as overrides):\n");
    for (k, d) in SPEC_KEYS {
        out.push_str(&format!("  {k:<width$}  {d}\n"));
    }
    out
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "message": message.replace('\n', " ") });
    eprintln!("{line}");
    ExitCode::from(if kind == "usage" { 2 } else { 1 })
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn execute(command: Command) -> schrostab::Result<()> {
    match command {
        Command::Eig(args) => {
            let spec = ExperimentSpec::load(&args.spec, &args.overrides)?;
            let basis = spec.build_basis()?;
            let mut table = String::from("k,lambda_k\n");
            for (i, l) in basis.eigenvalues().iter().enumerate() {
                table.push_str(&format!("{},{}\n", i + 1, schrostab::fmt_f64(*l)));
            }
            emit(&table);
        }
        Command::CheckConditions(args) => {
            let spec = ExperimentSpec::load(&args.spec, &args.overrides)?;
            let basis = spec.build_basis()?;
            let control = spec.build_control(&basis)?;
            let report = check_conditions(
                &basis,
                &control,
                spec.conditions.eps_coupling,
                spec.conditions.eps_gap,
            )?;
            emit(&(report.to_json() + "\n"));
        }
        Command::Simulate(args) => {
            let spec = ExperimentSpec::load(&args.spec, &args.overrides)?;
            let outcome = schrostab::run(&spec)?;
            emit(&(outcome.summary.to_json() + "\n"));
        }
        Command::Sweep(args) => {
            let spec = ExperimentSpec::load(&args.spec, &args.overrides)?;
            let report = schrostab::sweep(&spec)?;
            emit(&(report.to_json() + "\n"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let keys = keys_help();
    let command = Cli::command().mut_subcommands(|sub| sub.after_help(keys.clone()));
    let matches = match command.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    emit(&e.to_string());
                    ExitCode::SUCCESS
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    fail("usage", "missing subcommand (eig, check-conditions, simulate, sweep)")
                }
                _ => {
                    let rendered = e.to_string();
                    let first = rendered.lines().next().unwrap_or("invalid arguments");
                    fail("usage", first.trim_start_matches("error: "))
                }
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return fail("usage", &e.to_string()),
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_usage() => fail("usage", &e.to_string()),
        Err(e) => fail("runtime", &e.to_string()),
    }
}

//! `sdeadj`: simulation, gradient-check, convergence, reconstruction and
//! latent-SDE training experiments, writing CSV.

mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{value_parser, Arg, ArgMatches, Command};

use config::{RunConfig, COMMANDS};
use error::CliError;

fn cli() -> Command {
    let mut app = Command::new("sdeadj")
        .version(output::VERSION)
        .about("Stochastic adjoint experiments. All randomness derives from --seed; results are written as CSV.")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("key = value file supplying settings; flags override it"),
        )
        .arg(
            Arg::new("print-config")
                .long("print-config")
                .global(true)
                .action(clap::ArgAction::SetTrue)
                .help("print the resolved settings in config-file form and exit"),
        )
        .arg(
            Arg::new("jobs")
                .long("jobs")
                .global(true)
                .env("SDEADJ_JOBS")
                .value_name("N")
                .value_parser(value_parser!(usize))
                .help("worker threads (0 = all cores); does not change results"),
        );
    for cmd in COMMANDS {
        let mut sub = Command::new(cmd.name).about(cmd.about);
        for key in cmd.keys {
            let help = match key.default {
                Some(d) => format!("{} [default: {d}]", key.help),
                None => key.help.to_string(),
            };
            sub = sub.arg(Arg::new(key.name).long(key.name).value_name("VALUE").help(help));
        }
        app = app.subcommand(sub);
    }
    app
}

fn resolve(name: &str, m: &ArgMatches) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::defaults(name)?;
    if let Some(path) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {path}: {e}")))?;
        cfg.apply_text(&text)?;
    }
    let cmd = config::command(name).expect("registered subcommand");
    for key in cmd.keys {
        if let Some(v) = m.get_one::<String>(key.name) {
            cfg.set(key.name, v)?;
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let jobs = sub.get_one::<usize>("jobs").copied().unwrap_or(0);
    let result = resolve(name, sub).and_then(|cfg| {
        if sub.get_flag("print-config") {
            print!("{}", cfg.to_text());
            Ok(())
        } else {
            sde_adjoint::experiments::with_jobs(jobs, || commands::run(&cfg))
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdeadj: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

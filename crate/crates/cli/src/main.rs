mod args;
mod commands;
mod config;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use carlevel_core::kv::KvDoc;
use carlevel_core::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

use crate::args::{Cli, Command};
use crate::commands::NotConverged;
use crate::manifest::RunManifest;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NotConverged>().is_some() {
        return EXIT_NOT_CONVERGED;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<carlevel_core::Error>() {
            return match e.kind() {
                ErrorKind::Numerical => EXIT_NUMERICAL,
                ErrorKind::Validation | ErrorKind::Io => EXIT_VALIDATION,
            };
        }
    }
    EXIT_VALIDATION
}

/// Arguments that repeat the run recorded in `manifest`.
fn rerun_argv(manifest: &PathBuf, out: Option<&PathBuf>) -> anyhow::Result<Vec<String>> {
    let doc = KvDoc::read(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let command = doc.require("manifest.command")?.to_string();
    let mut argv = vec!["carlevel".to_string(), command];
    if let Some(o) = out {
        argv.push("--out".into());
        argv.push(o.display().to_string());
    }
    argv.push("--config".into());
    argv.push(manifest.display().to_string());
    Ok(argv)
}

fn run(argv: Vec<String>) -> anyhow::Result<()> {
    let argv = config::expand(argv)?;
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let cli = Cli::from_arg_matches(&matches)?;
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    if let Command::Rerun(r) = &cli.command {
        return run(rerun_argv(&r.manifest, r.out.as_ref())?);
    }
    let mut manifest = RunManifest::new(cli.command.name(), sub);
    let outcome = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &mut manifest)?,
        Command::Fit(a) => commands::fit(a, &mut manifest)?,
        Command::Diagnose(a) => commands::diagnose_cmd(a, &mut manifest)?,
        Command::Compare(a) => commands::compare(a, &mut manifest)?,
        Command::Study(a) => commands::study(a, &mut manifest)?,
        Command::Rerun(_) => unreachable!(),
    };
    manifest.write(&outcome.out_dir)?;
    match outcome.not_converged {
        Some(nc) => Err(nc.into()),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

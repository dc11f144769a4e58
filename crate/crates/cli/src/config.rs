//! `--config FILE`: a `key = value` file whose keys are flag names (with `_`
//! or `-`). Flags given on the command line win over the file; the file wins
//! over environment fallbacks. Keys starting with `manifest.` are ignored, so
//! a run manifest is itself a valid config file.

use std::path::Path;

use anyhow::{bail, Context};
use carlevel_core::kv::KvDoc;
use clap::{ArgAction, CommandFactory};

use crate::args::Cli;

fn config_path(argv: &[String]) -> Option<(usize, String)> {
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            return argv.get(i + 1).map(|p| (i, p.clone()));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some((i, p.to_string()));
        }
    }
    None
}

fn subcommand_name(argv: &[String]) -> Option<&str> {
    let mut skip = false;
    for a in argv.iter().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if a == "--config" {
            skip = true;
            continue;
        }
        if !a.starts_with('-') {
            return Some(a);
        }
    }
    None
}

fn given(argv: &[String], flag: &str) -> bool {
    let long = format!("--{flag}");
    argv.iter().any(|a| *a == long || a.starts_with(&format!("{long}=")))
}

/// Appends the flags of the config file named by `--config`, if any.
pub fn expand(argv: Vec<String>) -> anyhow::Result<Vec<String>> {
    let Some((_, path)) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(name) = subcommand_name(&argv).map(str::to_string) else {
        return Ok(argv);
    };
    let doc = KvDoc::read(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(&name) else {
        return Ok(argv);
    };
    let mut out = argv.clone();
    for (key, value) in doc.iter() {
        if key.starts_with("manifest.") {
            continue;
        }
        let flag = key.replace('_', "-");
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(flag.as_str())) else {
            bail!(carlevel_core::Error::Config(format!("unknown key `{key}` for `{name}` in {path}")));
        };
        if flag == "config" || given(&argv, &flag) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value {
                "true" => out.push(format!("--{flag}")),
                "false" => {}
                other => bail!(carlevel_core::Error::Config(format!("`{key}` must be true or false, got `{other}`"))),
            },
            _ => {
                out.push(format!("--{flag}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}

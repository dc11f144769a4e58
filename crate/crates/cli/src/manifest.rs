//! Run manifest: the resolved flags of a command (defaults and environment
//! fallbacks included) plus `manifest.*` bookkeeping keys. Passing the file
//! back through `--config` or `carlevel rerun` repeats the run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use carlevel_core::kv::KvDoc;
use clap::{ArgMatches, CommandFactory};

use crate::args::Cli;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub struct RunManifest {
    flags: KvDoc,
    extra: KvDoc,
    start: Instant,
}

impl RunManifest {
    pub fn new(command: &str, matches: &ArgMatches) -> Self {
        let mut flags = KvDoc::new();
        let cli = Cli::command();
        let ids: Vec<String> = cli
            .find_subcommand(command)
            .map(|c| c.get_arguments().map(|a| a.get_id().to_string()).collect())
            .unwrap_or_default();
        for id in ids.iter().filter(|id| *id != "config") {
            if let Ok(Some(raw)) = matches.try_get_raw(id) {
                let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
                if !vals.is_empty() {
                    flags.set(id, vals.join(","));
                }
            }
        }
        let mut extra = KvDoc::new();
        extra.set("manifest.command", command);
        extra.set("manifest.version", env!("CARGO_PKG_VERSION"));
        Self {
            flags,
            extra,
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.extra.set(format!("manifest.input.{name}"), path.display());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.extra.set(format!("manifest.output.{name}"), path.display());
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.extra.set(format!("manifest.{key}"), value);
    }

    /// Writes `dir/manifest.txt` atomically.
    pub fn write(mut self, dir: &Path) -> anyhow::Result<PathBuf> {
        self.extra
            .set("manifest.wall_time_s", format!("{:.3}", self.start.elapsed().as_secs_f64()));
        let mut doc = self.flags;
        for (k, v) in self.extra.iter() {
            doc.set(k, v);
        }
        let path = dir.join(MANIFEST_FILE);
        doc.write_atomic(&path)?;
        Ok(path)
    }
}

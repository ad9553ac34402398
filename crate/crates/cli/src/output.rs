//! Run artifacts: the manifest and hashed CSV tables.
//!
//! No output without a manifest: the output directory is created together
//! with `manifest.toml` and the resolved config echo, before any table is
//! written. Every CSV row ends with the manifest hash, so a stray file can
//! always be traced back to the exact run that produced it. Floats are
//! written in shortest round-trip form, which parses back bit-exactly.

use crate::config::RunConfig;
use mildsim_core::{Error, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub struct RunDir {
    dir: PathBuf,
    hash: String,
}

impl RunDir {
    /// Creates the output directory and writes `manifest.toml` plus
    /// `config.resolved.toml` (the resolved config; the hash covers it with
    /// the output directory normalized away).
    pub fn create(config: &RunConfig, subcommand: &str) -> Result<Self> {
        let canonical = config.canonical_toml()?;
        let hash = config.manifest_hash()?;
        let dir = PathBuf::from(&config.output_dir);
        fs::create_dir_all(&dir)
            .map_err(|e| Error::invalid(format!("cannot create {}: {e}", dir.display())))?;

        let manifest = format!(
            "[run]\nsubcommand = \"{subcommand}\"\nconfig_hash = \"{hash}\"\nseed = {seed}\n\
             realizations = {realizations}\nengine_version = \"{engine}\"\n\
             harness_version = \"{harness}\"\nconfig_echo = \"config.resolved.toml\"\n",
            seed = config.solver.seed,
            realizations = config.solver.realizations,
            engine = mildsim_core::VERSION,
            harness = env!("CARGO_PKG_VERSION"),
        );
        write_text(&dir.join("manifest.toml"), &manifest)?;
        write_text(&dir.join("config.resolved.toml"), &canonical)?;
        Ok(RunDir { dir, hash })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Writes `name` with `header,manifest_hash` and the hash appended to
    /// every data row.
    pub fn write_csv<I>(&self, name: &str, header: &str, rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = String>,
    {
        let mut text = String::new();
        let _ = writeln!(text, "{header},manifest_hash");
        for row in rows {
            let _ = writeln!(text, "{row},{}", self.hash);
        }
        let path = self.dir.join(name);
        write_text(&path, &text)?;
        Ok(path)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))
}

/// Comma-joins float fields in shortest round-trip form.
pub fn csv_fields(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out
}

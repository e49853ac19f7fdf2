//! Timestamped run directories with a manifest and a run log.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, Config};

pub const MANIFEST: &str = "manifest.json";
pub const RUN_LOG: &str = "run.log";

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    /// Effective config without the output root.
    config: Config,
    inputs: &'a BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

pub struct Run {
    pub dir: PathBuf,
    command: String,
    config: Config,
    log: fs::File,
    inputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(bytes)))
}

/// Output root: the `out` key, then `$GENQA_OUT_DIR`, then `runs`.
pub fn output_root(cfg: &Config) -> PathBuf {
    cfg.out
        .clone()
        .or_else(|| std::env::var_os("GENQA_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

impl Run {
    /// Creates `<root>/<command>-<UTC timestamp>[-n]` and echoes the
    /// effective config into its run log.
    pub fn create(command: &str, cfg: &Config) -> Result<Self> {
        let root = output_root(cfg);
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let mut n = 0;
        let dir = loop {
            let name = match n {
                0 => format!("{command}-{stamp}"),
                _ => format!("{command}-{stamp}-{n}"),
            };
            let dir = root.join(name);
            match fs::create_dir(&dir) {
                Ok(()) => break dir,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
            }
        };
        let log = fs::File::create(dir.join(RUN_LOG))?;
        let mut run = Self {
            dir,
            command: command.to_string(),
            config: cfg.clone(),
            log,
            inputs: BTreeMap::new(),
        };
        run.log(&format!("command: {command}"));
        run.log(&format!("config: {}", serde_json::to_string(cfg)?));
        run.log(&format!("config_hash: {}", cfg.hash()));
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Appends a line to the run log and echoes it to stderr.
    pub fn log(&mut self, line: &str) {
        eprintln!("{line}");
        let stamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        let _ = writeln!(self.log, "{stamp} {line}");
    }

    /// Records the digest of an input file. Files produced earlier in the
    /// same run are keyed by their name inside the run directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        let key = path.strip_prefix(&self.dir).unwrap_or(path);
        self.inputs.insert(key.display().to_string(), digest);
        Ok(())
    }

    /// Writes the manifest with digests of every file in the run directory.
    pub fn finish(mut self) -> Result<PathBuf> {
        let mut outputs = BTreeMap::new();
        let mut names: Vec<_> = fs::read_dir(&self.dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        for p in names {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if p.is_file() && name != RUN_LOG && name != MANIFEST {
                outputs.insert(name, sha256_file(&p)?);
            }
        }
        let manifest = Manifest {
            command: &self.command,
            config_hash: self.config.hash(),
            config: Config {
                out: None,
                ..self.config.clone()
            },
            inputs: &self.inputs,
            outputs,
        };
        fs::write(self.dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        self.log(&format!("wrote {}", self.dir.display()));
        Ok(self.dir)
    }
}

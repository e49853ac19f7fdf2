//! Append-only judgment log and campaign files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::campaign::{Campaign, Judgment};
use crate::error::{Error, Result};

/// Line-delimited judgments; every append is synced before it returns.
#[derive(Debug)]
pub struct JudgmentLog {
    path: PathBuf,
    file: File,
}

impl JudgmentLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, j: &Judgment) -> Result<()> {
        let mut line = serde_json::to_vec(j).map_err(|e| Error::Input(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<Judgment>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Log {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Applies the judgments in `path` to a fresh copy of `definition`.
pub fn replay(definition: &Campaign, path: &Path) -> Result<Campaign> {
    let mut c = definition.fresh();
    for (i, j) in read_log(path)?.into_iter().enumerate() {
        c.accept(j).map_err(|r| Error::Log {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("judgment rejected on replay: {r}"),
        })?;
    }
    Ok(c)
}

pub fn save_campaign(c: &Campaign, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(c).map_err(|e| Error::Input(e.to_string()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_campaign(path: &Path) -> Result<Campaign> {
    let text = fs::read_to_string(path)?;
    let c: Campaign = serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(c.restore())
}

/// A campaign and, when durable, the log that backs it.
#[derive(Debug)]
pub struct Store {
    pub campaign: Campaign,
    log: Option<JudgmentLog>,
}

impl Store {
    pub fn in_memory(campaign: Campaign) -> Self {
        Self { campaign, log: None }
    }

    /// Replays any judgments already in `log_path`, then appends to it.
    pub fn durable(definition: Campaign, log_path: &Path) -> Result<Self> {
        let campaign = replay(&definition, log_path)?;
        Ok(Self {
            campaign,
            log: Some(JudgmentLog::open(log_path)?),
        })
    }

    /// Validates, persists, then records `j`.
    pub fn submit(&mut self, j: Judgment) -> Result<()> {
        self.campaign.check(&j)?;
        if let Some(log) = &mut self.log {
            log.append(&j)?;
        }
        self.campaign.accept(j)?;
        Ok(())
    }
}

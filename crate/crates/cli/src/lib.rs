//! Library backing the `pcadv` binary; commands are functions so tests can
//! drive them without spawning processes.

pub mod commands;
pub mod config;
pub mod report;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// Content hash identifying the victim model in every report.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

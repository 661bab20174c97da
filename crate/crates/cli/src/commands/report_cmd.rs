//! `report`: merge finished attack runs into one comparison table.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;

use crate::report::{comparison_table, RunReport};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Attack output directories to compare.
    pub runs: Vec<PathBuf>,
    /// Write the machine-readable table here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_report(args: &ReportArgs) -> Result<String> {
    if args.runs.is_empty() {
        bail!("no run directories given");
    }
    let mut labeled = Vec::new();
    for dir in &args.runs {
        let label = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        labeled.push((label, RunReport::load(dir)?));
    }
    let (pretty, machine) = comparison_table(&labeled)?;
    if let Some(out) = &args.out {
        fs::write(out, &machine)?;
    }
    println!("{pretty}");
    Ok(machine)
}

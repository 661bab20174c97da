//! Per-sample attack records, aggregates, and the cross-run comparison.
//!
//! `samples.records` is a tab-separated table with `#` header lines; every
//! field is deterministic. Wall-clock timings go to a separate file so the
//! machine-readable outputs stay byte-identical across reruns.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// One attacked (or skipped) sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub index: usize,
    pub name: String,
    pub class: usize,
    pub correct: bool,
    /// None when the sample was skipped as misclassified.
    pub attack: Option<SampleAttack>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleAttack {
    pub success: bool,
    pub adv_class: usize,
    pub chamfer: f64,
    pub hausdorff: f64,
    pub points_modified: usize,
    pub masked_points: usize,
    pub cloud_size: usize,
    pub lambda1: f64,
    /// Unmasked points that are not bit-identical to the original; always
    /// zero unless the optimizer is broken.
    pub locality_violations: usize,
}

pub const RECORDS_HEADER: &str = "# pcadv attack records v1";
pub const RECORD_COLUMNS: &str =
    "# columns: index name class correct success adv_class chamfer hausdorff points_modified masked_points cloud_size lambda1 locality_violations";

impl SampleRow {
    pub fn to_line(&self) -> String {
        match &self.attack {
            Some(a) => format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                self.index,
                self.name,
                self.class,
                u8::from(self.correct),
                u8::from(a.success),
                a.adv_class,
                a.chamfer,
                a.hausdorff,
                a.points_modified,
                a.masked_points,
                a.cloud_size,
                a.lambda1,
                a.locality_violations,
            ),
            None => format!(
                "{}\t{}\t{}\t{}\t-\t-\t-\t-\t-\t-\t-\t-\t-",
                self.index,
                self.name,
                self.class,
                u8::from(self.correct)
            ),
        }
    }

    pub fn parse(line: &str) -> Result<SampleRow> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 13 {
            bail!("record has {} fields, expected 13: {line:?}", f.len());
        }
        let correct = f[3] == "1";
        let attack = if f[4] == "-" {
            None
        } else {
            Some(SampleAttack {
                success: f[4] == "1",
                adv_class: f[5].parse()?,
                chamfer: f[6].parse()?,
                hausdorff: f[7].parse()?,
                points_modified: f[8].parse()?,
                masked_points: f[9].parse()?,
                cloud_size: f[10].parse()?,
                lambda1: f[11].parse()?,
                locality_violations: f[12].parse()?,
            })
        };
        Ok(SampleRow {
            index: f[0].parse()?,
            name: f[1].to_string(),
            class: f[2].parse()?,
            correct,
            attack,
        })
    }
}

/// Aggregates over a finished run. Distance and point-count statistics are
/// taken over successful attacks, matching how attack quality is usually
/// tabulated; the success rate is over all attacked samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub samples_total: usize,
    pub samples_correct: usize,
    pub attacks_run: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_chamfer: f64,
    pub median_chamfer: f64,
    pub mean_hausdorff: f64,
    pub median_hausdorff: f64,
    pub mean_points_modified: f64,
    pub mean_masked_points: f64,
    /// Fraction of each cloud displaced beyond tau, averaged over successes.
    pub mean_modified_fraction: f64,
    /// Fraction of each cloud the attack was allowed to move, averaged over
    /// successes; this is the "points perturbed" notion used when comparing
    /// local and global modes.
    pub mean_masked_fraction: f64,
    /// Total locality violations across all attacked samples.
    pub locality_violations: usize,
}

fn median(sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl Aggregate {
    pub fn from_rows(rows: &[SampleRow]) -> Aggregate {
        let samples_total = rows.len();
        let samples_correct = rows.iter().filter(|r| r.correct).count();
        let attacked: Vec<&SampleAttack> = rows.iter().filter_map(|r| r.attack.as_ref()).collect();
        let attacks_run = attacked.len();
        let succ: Vec<&&SampleAttack> = attacked.iter().filter(|a| a.success).collect();
        let successes = succ.len();
        let mean = |xs: &[f64]| {
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        let mut chamfers: Vec<f64> = succ.iter().map(|a| a.chamfer).collect();
        let mut hausdorffs: Vec<f64> = succ.iter().map(|a| a.hausdorff).collect();
        let modified: Vec<f64> = succ.iter().map(|a| a.points_modified as f64).collect();
        let masked: Vec<f64> = succ.iter().map(|a| a.masked_points as f64).collect();
        let fractions: Vec<f64> = succ
            .iter()
            .map(|a| a.points_modified as f64 / a.cloud_size as f64)
            .collect();
        let masked_fractions: Vec<f64> = succ
            .iter()
            .map(|a| a.masked_points as f64 / a.cloud_size as f64)
            .collect();
        let (mean_chamfer, mean_hausdorff) = (mean(&chamfers), mean(&hausdorffs));
        chamfers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        hausdorffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Aggregate {
            samples_total,
            samples_correct,
            attacks_run,
            successes,
            success_rate: if attacks_run == 0 {
                0.0
            } else {
                successes as f64 / attacks_run as f64
            },
            mean_chamfer,
            median_chamfer: median(&chamfers),
            mean_hausdorff,
            median_hausdorff: median(&hausdorffs),
            mean_points_modified: mean(&modified),
            mean_masked_points: mean(&masked),
            mean_modified_fraction: mean(&fractions),
            mean_masked_fraction: mean(&masked_fractions),
            locality_violations: attacked.iter().map(|a| a.locality_violations).sum(),
        }
    }

    pub fn to_text(&self, model_hash: &str, mode: &str) -> String {
        let mut out = String::from("# pcadv attack summary v1\n");
        let _ = writeln!(out, "model_sha256 = {model_hash}");
        let _ = writeln!(out, "mode = {mode}");
        let _ = writeln!(out, "samples_total = {}", self.samples_total);
        let _ = writeln!(out, "samples_correct = {}", self.samples_correct);
        let _ = writeln!(out, "attacks_run = {}", self.attacks_run);
        let _ = writeln!(out, "successes = {}", self.successes);
        let _ = writeln!(out, "success_rate = {}", self.success_rate);
        let _ = writeln!(out, "mean_chamfer = {}", self.mean_chamfer);
        let _ = writeln!(out, "median_chamfer = {}", self.median_chamfer);
        let _ = writeln!(out, "mean_hausdorff = {}", self.mean_hausdorff);
        let _ = writeln!(out, "median_hausdorff = {}", self.median_hausdorff);
        let _ = writeln!(out, "mean_points_modified = {}", self.mean_points_modified);
        let _ = writeln!(out, "mean_masked_points = {}", self.mean_masked_points);
        let _ = writeln!(
            out,
            "mean_modified_fraction = {}",
            self.mean_modified_fraction
        );
        let _ = writeln!(out, "mean_masked_fraction = {}", self.mean_masked_fraction);
        let _ = writeln!(out, "locality_violations = {}", self.locality_violations);
        out
    }
}

/// A finished run directory: its header metadata, rows, and aggregate.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub model_hash: String,
    pub mode: String,
    pub rows: Vec<SampleRow>,
    pub aggregate: Aggregate,
}

impl RunReport {
    pub fn load(dir: &Path) -> Result<RunReport> {
        let records_path = dir.join("samples.records");
        let text = fs::read_to_string(&records_path)
            .with_context(|| format!("reading {}", records_path.display()))?;
        let mut model_hash = String::new();
        let mut mode = String::new();
        let mut rows = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# model_sha256 ") {
                model_hash = rest.trim().to_string();
            } else if let Some(rest) = line.strip_prefix("# mode ") {
                mode = rest.trim().to_string();
            } else if line.starts_with('#') || line.trim().is_empty() {
                continue;
            } else {
                rows.push(SampleRow::parse(line)?);
            }
        }
        if model_hash.is_empty() {
            bail!("{}: missing model hash header", records_path.display());
        }

        // Cross-check the embedded aggregate against a recomputation.
        let recomputed = Aggregate::from_rows(&rows);
        let summary_path = dir.join("aggregate.summary");
        let summary = fs::read_to_string(&summary_path)
            .with_context(|| format!("reading {}", summary_path.display()))?;
        for (key, value) in [
            ("success_rate", recomputed.success_rate),
            ("mean_chamfer", recomputed.mean_chamfer),
            ("mean_hausdorff", recomputed.mean_hausdorff),
            ("mean_points_modified", recomputed.mean_points_modified),
        ] {
            let embedded = summary
                .lines()
                .find_map(|l| l.strip_prefix(&format!("{key} = ")))
                .with_context(|| format!("{}: missing {key}", summary_path.display()))?
                .parse::<f64>()?;
            if (embedded - value).abs() > 1e-12 {
                bail!(
                    "{}: embedded {key} {embedded} disagrees with rows ({value})",
                    summary_path.display()
                );
            }
        }
        Ok(RunReport {
            model_hash,
            mode,
            rows,
            aggregate: recomputed,
        })
    }
}

/// Merge runs into one comparison table. All runs must attack the same
/// victim model.
pub fn comparison_table(labeled: &[(String, RunReport)]) -> Result<(String, String)> {
    let Some(((_, first), rest)) = labeled.split_first() else {
        bail!("no runs given");
    };
    for (label, run) in rest {
        if run.model_hash != first.model_hash {
            bail!(
                "run {label} attacks a different victim model ({} vs {})",
                run.model_hash,
                first.model_hash
            );
        }
    }
    let mut machine = String::from("# pcadv comparison v1\n");
    let _ = writeln!(machine, "# model_sha256 {}", first.model_hash);
    machine.push_str(
        "# success_rate: higher is better; chamfer, hausdorff, points: lower is better\n",
    );
    machine.push_str("# columns: method mode success_rate mean_chamfer mean_hausdorff mean_points_modified\n");
    let mut pretty = String::new();
    let _ = writeln!(
        pretty,
        "{:<18} {:<7} {:>12} {:>13} {:>15} {:>9}",
        "method", "mode", "success_rate", "chamfer", "hausdorff", "points"
    );
    for (label, run) in labeled {
        let a = &run.aggregate;
        let _ = writeln!(
            machine,
            "{label}\t{}\t{}\t{}\t{}\t{}",
            run.mode, a.success_rate, a.mean_chamfer, a.mean_hausdorff, a.mean_points_modified
        );
        let _ = writeln!(
            pretty,
            "{:<18} {:<7} {:>12.4} {:>13.6e} {:>15.6e} {:>9.1}",
            label, run.mode, a.success_rate, a.mean_chamfer, a.mean_hausdorff, a.mean_points_modified
        );
    }
    Ok((pretty, machine))
}

//! `gen-data`: write a synthetic labeled dataset and its manifest.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use pcadv::geometry::{
    gen_synthetic, save_cloud, CloudFormat, DatasetManifest, ManifestEntry, ShapeClass, Split,
    CLASS_NAMES,
};
use pcadv::seed;

use crate::config::{resolve, ConfigEcho, ConfigMap};

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory (clouds/, manifest.txt, config.echo).
    #[arg(long)]
    pub out: PathBuf,
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated class names (default: all eight shapes).
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Points per cloud.
    #[arg(long)]
    pub points: Option<usize>,
    /// Gaussian coordinate noise added before normalization.
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run_gen_data(args: &GenDataArgs) -> Result<DatasetManifest> {
    let cfg = match &args.config {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::default(),
    };
    let classes_text = args
        .classes
        .clone()
        .or_else(|| cfg.get_string("classes"))
        .unwrap_or_else(|| CLASS_NAMES.join(","));
    let train_per_class = resolve(args.train_per_class, &cfg, "train_per_class", 200)?;
    let test_per_class = resolve(args.test_per_class, &cfg, "test_per_class", 25)?;
    let points = resolve(args.points, &cfg, "points", 1024)?;
    let jitter = resolve(args.jitter, &cfg, "jitter", 0.02)?;
    let seed_value = resolve(args.seed, &cfg, "seed", 0)?;

    let classes: Vec<ShapeClass> = classes_text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| ShapeClass::from_name(s.trim()).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    if classes.is_empty() {
        bail!("no classes requested");
    }

    let clouds_dir = args.out.join("clouds");
    fs::create_dir_all(&clouds_dir)
        .with_context(|| format!("creating {}", clouds_dir.display()))?;

    let mut manifest = DatasetManifest {
        classes: classes.iter().map(|c| c.name().to_string()).collect(),
        entries: Vec::new(),
        root: args.out.clone(),
    };
    for (ci, class) in classes.iter().enumerate() {
        for i in 0..train_per_class + test_per_class {
            let split = if i < train_per_class {
                Split::Train
            } else {
                Split::Test
            };
            let cloud_seed = seed::derive(seed_value, ((ci as u64) << 32) | i as u64);
            let mut cloud = gen_synthetic(*class, points, cloud_seed, jitter)?;
            cloud.label = Some(ci);
            let rel = format!(
                "clouds/{}_{}_{:04}.pcb",
                class.name(),
                split.as_str(),
                if split == Split::Train { i } else { i - train_per_class }
            );
            save_cloud(&cloud, &args.out.join(&rel), CloudFormat::NativeBinary, None)?;
            manifest.entries.push(ManifestEntry {
                path: rel.into(),
                class: ci,
                split,
            });
        }
    }
    manifest.save(&args.out.join("manifest.txt"))?;

    let mut echo = ConfigEcho::new();
    echo.push("classes", &classes_text);
    echo.push("train_per_class", train_per_class);
    echo.push("test_per_class", test_per_class);
    echo.push("points", points);
    echo.push("jitter", jitter);
    echo.push("seed", seed_value);
    echo.write(&args.out.join("config.echo"))?;

    eprintln!(
        "gen-data: {} classes x ({train_per_class} train + {test_per_class} test), {points} points -> {}",
        classes.len(),
        args.out.display()
    );
    Ok(manifest)
}

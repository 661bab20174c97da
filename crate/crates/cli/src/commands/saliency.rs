//! `saliency`: per-region Shapley values for one cloud or a manifest split.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use pcadv::classifier::load_model;
use pcadv::geometry::{load_cloud, save_xyz_flagged, CloudFormat, DatasetManifest, Split};
use pcadv::regions::{partition, value_function, RegionSubset};
use pcadv::seed;
use pcadv::shapley::{shapley_exact, shapley_monte_carlo, Estimator, EXACT_THRESHOLD};

use crate::config::{resolve, ConfigEcho, ConfigMap};

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Single cloud file (xyz/off/pcb); alternative to --manifest.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    /// Label to analyze when --cloud is given (synthetic clouds carry one).
    #[arg(long)]
    pub label: Option<usize>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Analyze at most this many clouds from the split.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Region count m.
    #[arg(long)]
    pub regions: Option<usize>,
    /// Monte Carlo permutation budget (used when m exceeds the exact threshold).
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run_saliency(args: &SaliencyArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::default(),
    };
    let m = resolve(args.regions, &cfg, "regions", 32)?;
    let budget = resolve(args.budget, &cfg, "budget", 200)?;
    let seed_value = resolve(args.seed, &cfg, "seed", 0)?;

    let model = load_model(&args.model)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let clouds = match (&args.cloud, &args.manifest) {
        (Some(path), None) => {
            let format = CloudFormat::from_extension(path)
                .ok_or_else(|| anyhow::anyhow!("unrecognized extension: {}", path.display()))?;
            let mut cloud = load_cloud(path, format)?;
            if cloud.label.is_none() {
                cloud.label = args.label;
            }
            vec![cloud]
        }
        (None, Some(mpath)) => {
            let manifest = DatasetManifest::load(mpath)?;
            let split = Split::parse(&args.split)
                .ok_or_else(|| anyhow::anyhow!("unknown split {:?}", args.split))?;
            let mut clouds = pcadv::classifier::load_split(&manifest, split)?;
            if let Some(limit) = args.limit {
                clouds.truncate(limit);
            }
            clouds
        }
        _ => bail!("give exactly one of --cloud or --manifest"),
    };

    for (idx, cloud) in clouds.iter().enumerate() {
        let label = match cloud.label {
            Some(l) => l,
            None => model.forward(cloud)?.predicted,
        };
        let part = partition(cloud, m, seed_value)?;
        let per_cloud_seed = seed::derive(seed_value, idx as u64);
        let map = if m <= EXACT_THRESHOLD {
            shapley_exact(&model, cloud, &part, label)?
        } else {
            shapley_monte_carlo(&model, cloud, &part, label, budget, per_cloud_seed)?
        };

        if map.estimator == Estimator::Exact {
            let g_full = value_function(&model, cloud, &part, &RegionSubset::full(m), label)?;
            let g_empty = value_function(&model, cloud, &part, &RegionSubset::empty(), label)?;
            let total: f64 = map.phi.iter().sum();
            eprintln!(
                "{}: efficiency check |sum(phi) - (g(M) - g(empty))| = {:.3e}",
                cloud.name,
                (total - (g_full - g_empty)).abs()
            );
        }

        let base = args.out.join(&cloud.name);
        map.save(&base.with_extension("saliency"))?;
        let flags: Vec<u32> = part.assignment.iter().map(|&r| r as u32).collect();
        save_xyz_flagged(cloud, &base.with_extension("regions.xyz"), &flags)?;
        part.save(&base.with_extension("partition"))?;
        let top: Vec<usize> = map.rank.iter().take(5.min(m)).copied().collect();
        eprintln!("{}: top regions {:?}", cloud.name, top);
    }

    let mut echo = ConfigEcho::new();
    echo.push("model", args.model.display());
    echo.push("regions", m);
    echo.push("budget", budget);
    echo.push("seed", seed_value);
    echo.write(&args.out.join("config.echo"))?;
    Ok(())
}

//! `attack`: run the attack over a manifest split and emit the evaluation
//! report. Samples are processed by a worker pool in fixed-size chunks;
//! a single writer appends rows in sample-index order, so long runs stay
//! resumable to inspect and reruns are byte-identical.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;

use pcadv::attack::{al_adv_attack, global_baseline_attack, AttackConfig, AttackResult};
use pcadv::classifier::{load_model, load_split, ClassifierModel};
use pcadv::geometry::{save_cloud, CloudFormat, DatasetManifest, PointCloud, Split};
use pcadv::regions::partition;
use pcadv::seed;
use pcadv::shapley::{shapley_exact, shapley_monte_carlo, EXACT_THRESHOLD};

use crate::config::{resolve, ConfigEcho, ConfigMap};
use crate::report::{Aggregate, SampleAttack, SampleRow, RECORDS_HEADER, RECORD_COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackMode {
    /// Perturb only the top-k salient regions.
    Local,
    /// Perturb every point (baseline).
    Global,
}

impl AttackMode {
    fn as_str(self) -> &'static str {
        match self {
            AttackMode::Local => "local",
            AttackMode::Global => "global",
        }
    }
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, value_enum)]
    pub mode: Option<AttackMode>,
    /// Attack at most this many correctly-classified clouds.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Regions attacked (k).
    #[arg(long)]
    pub attack_regions: Option<usize>,
    /// Total regions (m).
    #[arg(long)]
    pub regions: Option<usize>,
    /// Inner iterations per bisection round (T).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Monte Carlo permutations for the saliency step.
    #[arg(long)]
    pub mc_permutations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip writing per-sample adversarial cloud files.
    #[arg(long, default_value_t = false)]
    pub no_clouds: bool,
}

struct SampleOutcome {
    row: SampleRow,
    adversarial: Option<(PointCloud, Vec<bool>)>,
    wall_seconds: f64,
}

pub fn run_attack(args: &AttackArgs) -> Result<Aggregate> {
    let cfg = match &args.config {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::default(),
    };
    let mode = match args.mode {
        Some(m) => m,
        None => match cfg.get_string("mode").as_deref() {
            Some("local") | None => AttackMode::Local,
            Some("global") => AttackMode::Global,
            Some(other) => bail!("unknown mode {other:?}"),
        },
    };
    let defaults = AttackConfig::default();
    let attack_config = AttackConfig {
        epsilon: resolve(args.epsilon, &cfg, "epsilon", defaults.epsilon)?,
        lambda2: resolve(args.lambda2, &cfg, "lambda2", defaults.lambda2)?,
        k: resolve(args.attack_regions, &cfg, "attack_regions", defaults.k)?,
        m: resolve(args.regions, &cfg, "regions", defaults.m)?,
        iterations: resolve(args.iterations, &cfg, "iterations", defaults.iterations)?,
        learning_rate: resolve(args.learning_rate, &cfg, "learning_rate", defaults.learning_rate)?,
        lambda1_rounds: resolve(args.rounds, &cfg, "rounds", defaults.lambda1_rounds)?,
        seed: resolve(args.seed, &cfg, "seed", defaults.seed)?,
        ..defaults
    };
    attack_config.validate()?;
    let mc_permutations = resolve(args.mc_permutations, &cfg, "mc_permutations", 200)?;
    let split = Split::parse(&args.split)
        .ok_or_else(|| anyhow::anyhow!("unknown split {:?}", args.split))?;

    let model = load_model(&args.model)?;
    let model_hash = crate::file_sha256(&args.model)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let clouds = load_split(&manifest, split)?;
    if clouds.is_empty() {
        bail!("split {:?} is empty", args.split);
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let clouds_dir = args.out.join("clouds");
    if !args.no_clouds {
        fs::create_dir_all(&clouds_dir)?;
    }

    let mut echo = ConfigEcho::new();
    echo.push("model", args.model.display());
    echo.push("manifest", args.manifest.display());
    echo.push("split", args.split.clone());
    echo.push("mode", mode.as_str());
    if let Some(l) = args.limit {
        echo.push("limit", l);
    }
    echo.push("epsilon", attack_config.epsilon);
    echo.push("lambda2", attack_config.lambda2);
    echo.push("attack_regions", attack_config.k);
    echo.push("regions", attack_config.m);
    echo.push("iterations", attack_config.iterations);
    echo.push("learning_rate", attack_config.learning_rate);
    echo.push("rounds", attack_config.lambda1_rounds);
    echo.push("mc_permutations", mc_permutations);
    echo.push("seed", attack_config.seed);
    echo.write(&args.out.join("config.echo"))?;

    let records_path = args.out.join("samples.records");
    let mut records = fs::File::create(&records_path)?;
    writeln!(records, "{RECORDS_HEADER}")?;
    writeln!(records, "# model_sha256 {model_hash}")?;
    writeln!(records, "# mode {}", mode.as_str())?;
    writeln!(records, "{RECORD_COLUMNS}")?;
    let mut timings = fs::File::create(args.out.join("timings.records"))?;
    writeln!(timings, "# pcadv attack timings (not reproducible)")?;

    // Which samples get attacked: correctly-classified ones, in split
    // order, up to the limit.
    let predictions: Vec<usize> = clouds
        .par_iter()
        .map(|c| model.forward(c).expect("nonempty cloud").predicted)
        .collect();
    let mut attacked = 0usize;
    let mut jobs: Vec<(usize, bool)> = Vec::with_capacity(clouds.len());
    let limit = args.limit.unwrap_or(usize::MAX);
    for (i, cloud) in clouds.iter().enumerate() {
        let correct = Some(predictions[i]) == cloud.label;
        let run = correct && attacked < limit;
        if run {
            attacked += 1;
        }
        jobs.push((i, run));
        if attacked >= limit {
            break;
        }
    }

    let mut rows: Vec<SampleRow> = Vec::with_capacity(clouds.len());
    for chunk in jobs.chunks(8) {
        let outcomes: Vec<SampleOutcome> = chunk
            .par_iter()
            .map(|&(i, run)| {
                attack_sample(
                    &model,
                    &clouds[i],
                    i,
                    predictions[i],
                    run,
                    mode,
                    &attack_config,
                    mc_permutations,
                )
            })
            .collect::<Result<_>>()?;
        for outcome in outcomes {
            writeln!(records, "{}", outcome.row.to_line())?;
            writeln!(
                timings,
                "{}\t{:.3}",
                outcome.row.index, outcome.wall_seconds
            )?;
            if let Some((cloud, mask)) = &outcome.adversarial {
                if !args.no_clouds {
                    save_cloud(
                        cloud,
                        &clouds_dir.join(format!("{}.pcb", cloud.name)),
                        CloudFormat::NativeBinary,
                        Some(mask),
                    )?;
                    save_cloud(
                        cloud,
                        &clouds_dir.join(format!("{}.xyz", cloud.name)),
                        CloudFormat::XyzText,
                        Some(mask),
                    )?;
                }
            }
            rows.push(outcome.row);
        }
        records.flush()?;
    }

    let aggregate = Aggregate::from_rows(&rows);
    fs::write(
        args.out.join("aggregate.summary"),
        aggregate.to_text(&model_hash, mode.as_str()),
    )?;
    eprintln!(
        "attack ({}): {} samples, {} attacked, success rate {:.4}, mean chamfer {:.3e}, mean |modified| {:.1}",
        mode.as_str(),
        aggregate.samples_total,
        aggregate.attacks_run,
        aggregate.success_rate,
        aggregate.mean_chamfer,
        aggregate.mean_points_modified,
    );
    Ok(aggregate)
}

#[allow(clippy::too_many_arguments)]
fn attack_sample(
    model: &ClassifierModel,
    cloud: &PointCloud,
    index: usize,
    predicted: usize,
    run: bool,
    mode: AttackMode,
    config: &AttackConfig,
    mc_permutations: usize,
) -> Result<SampleOutcome> {
    let start = Instant::now();
    let label = cloud.label.context("manifest clouds carry labels")?;
    let base_row = SampleRow {
        index,
        name: cloud.name.clone(),
        class: label,
        correct: predicted == label,
        attack: None,
    };
    if !run {
        return Ok(SampleOutcome {
            row: base_row,
            adversarial: None,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }

    let per_sample_seed = seed::derive(config.seed, index as u64);
    let config = AttackConfig {
        seed: per_sample_seed,
        ..config.clone()
    };
    let result: AttackResult = match mode {
        AttackMode::Local => {
            let part = partition(cloud, config.m, per_sample_seed)?;
            let saliency = if config.m <= EXACT_THRESHOLD {
                shapley_exact(model, cloud, &part, label)?
            } else {
                shapley_monte_carlo(model, cloud, &part, label, mc_permutations, per_sample_seed)?
            };
            al_adv_attack(model, cloud, label, &part, &saliency, &config)?
        }
        AttackMode::Global => global_baseline_attack(model, cloud, label, &config)?,
    };

    // Flag the points that actually moved beyond tau, and verify that the
    // attack never touched anything outside its mask.
    let moved: Vec<bool> = cloud
        .points
        .iter()
        .zip(&result.adversarial.points)
        .map(|(a, b)| a.dist(*b) > config.tau)
        .collect();
    let locality_violations = cloud
        .points
        .iter()
        .zip(&result.adversarial.points)
        .zip(&result.mask)
        .filter(|((a, b), &masked)| {
            !masked
                && (a.x.to_bits() != b.x.to_bits()
                    || a.y.to_bits() != b.y.to_bits()
                    || a.z.to_bits() != b.z.to_bits())
        })
        .count();
    let row = SampleRow {
        attack: Some(SampleAttack {
            success: result.success,
            adv_class: result.adversarial_class,
            chamfer: result.chamfer,
            hausdorff: result.hausdorff,
            points_modified: result.points_modified,
            masked_points: result.masked_points,
            cloud_size: cloud.len(),
            lambda1: result.lambda1,
            locality_violations,
        }),
        ..base_row
    };
    Ok(SampleOutcome {
        row,
        adversarial: Some((result.adversarial, moved)),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

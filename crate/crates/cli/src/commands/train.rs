//! `train`: fit the victim classifier and persist it with a log.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use pcadv::classifier::{save_model, train, ClassifierModel, TrainConfig, TrainReport};
use pcadv::geometry::DatasetManifest;

use crate::config::{resolve, ConfigEcho, ConfigMap};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory (model.pmdl, train.log, config.echo).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Stop once test accuracy reaches this value.
    #[arg(long)]
    pub early_stop_accuracy: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run_train(args: &TrainArgs) -> Result<TrainReport> {
    let cfg = match &args.config {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::default(),
    };
    let epochs = resolve(args.epochs, &cfg, "epochs", 30)?;
    let batch_size = resolve(args.batch_size, &cfg, "batch_size", 32)?;
    let learning_rate = resolve(args.learning_rate, &cfg, "learning_rate", 1e-3)?;
    let seed_value = resolve(args.seed, &cfg, "seed", 0)?;
    let early_stop = match args.early_stop_accuracy {
        Some(v) => Some(v),
        None => cfg.get::<f64>("early_stop_accuracy")?,
    };

    let manifest = DatasetManifest::load(&args.manifest)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut model = ClassifierModel::new_seeded(manifest.classes.len(), seed_value);
    let train_config = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        seed: seed_value,
        early_stop_accuracy: early_stop,
    };
    let report = train(&mut model, &manifest, &train_config)?;

    let model_path = args.out.join("model.pmdl");
    save_model(&model, &model_path)?;

    let mut log = String::from("# pcadv training log v1\n");
    log.push_str("# columns: epoch train_loss train_accuracy test_accuracy\n");
    for e in &report.epochs {
        log.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.epoch, e.train_loss, e.train_accuracy, e.test_accuracy
        ));
    }
    log.push_str(&format!(
        "final_test_accuracy = {}\n",
        report.final_test_accuracy
    ));
    fs::write(args.out.join("train.log"), log)?;

    let mut echo = ConfigEcho::new();
    echo.push("manifest", args.manifest.display());
    echo.push("epochs", epochs);
    echo.push("batch_size", batch_size);
    echo.push("learning_rate", learning_rate);
    if let Some(v) = early_stop {
        echo.push("early_stop_accuracy", v);
    }
    echo.push("seed", seed_value);
    echo.write(&args.out.join("config.echo"))?;

    for e in &report.epochs {
        eprintln!(
            "epoch {:>3}: loss {:.4}  train acc {:.4}  test acc {:.4}",
            e.epoch, e.train_loss, e.train_accuracy, e.test_accuracy
        );
    }
    eprintln!(
        "train: final test accuracy {:.4} -> {}",
        report.final_test_accuracy,
        model_path.display()
    );
    Ok(report)
}

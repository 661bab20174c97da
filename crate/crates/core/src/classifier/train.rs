//! Adam + cross-entropy training over a dataset manifest.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{colmax_with_winners, ClassifierModel, ParamGrads};
use crate::geometry::{load_cloud, CloudFormat, DatasetManifest, PointCloud, Split};
use crate::optim::{Adam, AdamConfig};
use crate::{seed, Error, Result};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop once the test accuracy reaches this value, if set.
    pub early_stop_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            early_stop_accuracy: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_test_accuracy: f64,
}

/// Load every cloud referenced by a manifest split.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<PointCloud>> {
    manifest
        .entries_for(split)
        .map(|e| {
            let path = manifest.resolve(e);
            let format = CloudFormat::from_extension(&path).unwrap_or(CloudFormat::NativeBinary);
            let mut cloud = load_cloud(&path, format)?;
            cloud.label = Some(e.class);
            Ok(cloud)
        })
        .collect()
}

/// Train a fresh model on the manifest. Deterministic for a fixed seed:
/// shuffling is seeded and per-batch gradients are reduced in sample order.
pub fn train(
    model: &mut ClassifierModel,
    manifest: &DatasetManifest,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if manifest.classes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs >= 2 classes, manifest has {}",
            manifest.classes.len()
        )));
    }
    if manifest.classes.len() != model.n_classes {
        return Err(Error::InvalidArgument(format!(
            "model has {} classes but manifest has {}",
            model.n_classes,
            manifest.classes.len()
        )));
    }
    let train_set = load_split(manifest, Split::Train)?;
    let test_set = load_split(manifest, Split::Test)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::InvalidArgument(
            "both train and test splits must be nonempty".into(),
        ));
    }

    let mut rng = seed::rng(seed::derive(config.seed, 0x7261));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..Default::default()
        },
        model.param_count(),
    );
    let mut flat = model.to_flat();
    let mut report = TrainReport {
        epochs: Vec::new(),
        final_test_accuracy: 0.0,
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, bool, ParamGrads)> = batch
                .par_iter()
                .map(|&i| cloud_grads(model, &train_set[i]))
                .collect();
            let mut grads = ParamGrads::zeros_like(model);
            for (loss, ok, g) in &results {
                loss_sum += loss;
                correct += usize::from(*ok);
                grads.add(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            let batch_loss = results.iter().map(|r| r.0).sum::<f64>() / batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            adam.step(&mut flat, &grads.to_flat());
            model.set_from_flat(&flat);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_accuracy = correct as f64 / train_set.len() as f64;
        let test_accuracy = evaluate_accuracy(model, &test_set);
        report.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            test_accuracy,
        });
        report.final_test_accuracy = test_accuracy;
        if let Some(target) = config.early_stop_accuracy {
            if test_accuracy >= target {
                break;
            }
        }
    }
    Ok(report)
}

/// Fraction of clouds whose argmax prediction matches the label.
pub fn evaluate_accuracy(model: &ClassifierModel, clouds: &[PointCloud]) -> f64 {
    if clouds.is_empty() {
        return 0.0;
    }
    let correct: usize = clouds
        .par_iter()
        .map(|c| {
            let rec = model.forward(c).expect("nonempty cloud");
            usize::from(Some(rec.predicted) == c.label)
        })
        .sum();
    correct as f64 / clouds.len() as f64
}

/// Cross-entropy loss, correctness flag, and parameter gradients for one cloud.
fn cloud_grads(model: &ClassifierModel, cloud: &PointCloud) -> (f64, bool, ParamGrads) {
    let label = cloud.label.expect("training cloud must carry a label");
    let (trace, head) = model.forward_traced(cloud).expect("nonempty cloud");
    let (_, winners) = colmax_with_winners(&trace.a3);
    let rec = &head.record;
    let loss = -rec.probabilities[label].max(f64::MIN_POSITIVE).ln();
    // d(cross-entropy)/d(logits) = softmax - onehot.
    let mut dlogits = rec.probabilities.clone();
    dlogits[label] -= 1.0;
    let mut grads = ParamGrads::zeros_like(model);
    let dpooled = model.head_backward(&head, &dlogits, Some(&mut grads));
    let channel_rows: Vec<Option<usize>> = winners.iter().map(|&r| Some(r)).collect();
    let mut sink = vec![[0.0f64; 3]; cloud.len()];
    model.pool_backward(&trace, &channel_rows, &dpooled, &mut sink, Some(&mut grads));
    (loss, rec.predicted == label, grads)
}

// Validation helper shared by tests and the parameter-gradient oracle: the
// loss as a pure function of a flat parameter vector.
#[doc(hidden)]
pub fn loss_at_flat(model: &ClassifierModel, flat: &[f64], cloud: &PointCloud) -> f64 {
    let mut probe = model.clone();
    probe.set_from_flat(flat);
    let label = cloud.label.expect("labeled cloud");
    let rec = probe.forward(cloud).expect("nonempty cloud");
    -rec.probabilities[label].max(f64::MIN_POSITIVE).ln()
}

#[doc(hidden)]
pub fn param_grads_for(model: &ClassifierModel, cloud: &PointCloud) -> ParamGrads {
    cloud_grads(model, cloud).2
}

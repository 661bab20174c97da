//! Adaptive local adversarial attack.
//!
//! The optimized variable is a per-point offset; each iteration the
//! adversarial cloud is rebuilt from the *original* points as
//!
//! ```text
//! x'_j = x_j + epsilon * ratio_j (.) sign(grad_j) (.) offset_j    (masked j)
//! ```
//!
//! where `ratio` splits the step across the x/y/z axes in proportion to the
//! gradient magnitudes and both `ratio` and `sign` are recomputed from the
//! current gradient and frozen within the step. The offset descends
//! `d(objective)/d(offset)` under Adam. An outer bisection on the distance
//! weight seeks the tightest perturbation that still flips the prediction.

use ndarray::Array1;

use crate::classifier::{
    colmax_with_winners, margin_loss, ClassifierModel, LogitsRecord, ScalarObjective,
};
use crate::geometry::{Point3, PointCloud};
use crate::metrics::{distances_with_grad, DistancePair};
use crate::optim::{Adam, AdamConfig};
use crate::regions::RegionPartition;
use crate::shapley::{top_k_regions, SaliencyMap};
use crate::{Error, Result};

/// How the per-axis ratio aggregates gradient magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatioMode {
    /// Each point normalizes its own three components.
    #[default]
    PerPoint,
    /// One shared ratio from axis-wise sums over all points.
    Global,
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    /// Perturbation scale epsilon.
    pub epsilon: f64,
    /// Weight of the modified-point count in the objective.
    pub lambda2: f64,
    /// Number of regions attacked.
    pub k: usize,
    /// Number of regions the cloud is partitioned into.
    pub m: usize,
    /// Inner iterations per bisection round.
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Bisection rounds over the distance weight.
    pub lambda1_rounds: usize,
    pub lambda1_min: f64,
    pub lambda1_max: f64,
    pub lambda1_init: f64,
    /// Displacement threshold for counting a point as modified.
    pub tau: f64,
    pub ratio_mode: RatioMode,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.6,
            lambda2: 0.15,
            k: 5,
            m: 32,
            iterations: 200,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            lambda1_rounds: 6,
            lambda1_min: 0.01,
            lambda1_max: 100.0,
            lambda1_init: 1.0,
            tau: 1e-4,
            ratio_mode: RatioMode::PerPoint,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        // epsilon = 0 is degenerate but well-defined: the cloud never moves.
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
        }
        if self.k == 0 || self.k > self.m {
            return Err(Error::InvalidArgument(format!(
                "k = {} must be in [1, m = {}]",
                self.k, self.m
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument("tau must be > 0".into()));
        }
        if self.lambda1_rounds == 0
            || !(self.lambda1_min < self.lambda1_max)
            || !(self.lambda1_init >= self.lambda1_min && self.lambda1_init <= self.lambda1_max)
        {
            return Err(Error::InvalidArgument(
                "lambda1 search range is empty or excludes the initial value".into(),
            ));
        }
        Ok(())
    }
}

/// One bisection round: the weight tried, whether any iterate succeeded,
/// and the best (lowest) distance among that round's successes.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub lambda1: f64,
    pub succeeded: bool,
    pub best_distance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: PointCloud,
    /// True iff the model predicts a class other than the label.
    pub success: bool,
    pub adversarial_class: usize,
    pub chamfer: f64,
    pub hausdorff: f64,
    /// Points displaced farther than tau.
    pub points_modified: usize,
    /// Size of the attacked-region mask.
    pub masked_points: usize,
    /// The distance weight that produced the returned cloud.
    pub lambda1: f64,
    /// Objective value at every evaluated iterate, all rounds concatenated.
    pub objective_trace: Vec<f64>,
    /// The optimized offset at the returned iterate (zero outside the mask).
    pub offsets: Vec<[f64; 3]>,
    /// epsilon * ratio (.) sign at the returned iterate (zero outside the
    /// mask), so `adversarial = original + modulation (.) offsets`.
    pub modulation: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
    /// Attacked region indices (empty for the whole-cloud baseline).
    pub attacked_regions: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
}

/// Margin loss of a forward record (zero once the cloud is misclassified).
pub fn adversarial_loss(record: &LogitsRecord, label: usize) -> f64 {
    margin_loss(&record.logits, label)
}

/// Count of points displaced beyond `tau` (Euclidean).
pub fn points_modified(original: &PointCloud, adversarial: &PointCloud, tau: f64) -> usize {
    original
        .points
        .iter()
        .zip(&adversarial.points)
        .filter(|(a, b)| a.dist(**b) > tau)
        .count()
}

/// The composite objective: margin loss + lambda1 * (chamfer + hausdorff)
/// + lambda2 * (modified-point count). The count term carries no gradient.
pub fn objective(
    original: &PointCloud,
    adversarial: &PointCloud,
    model: &ClassifierModel,
    label: usize,
    lambda1: f64,
    lambda2: f64,
    tau: f64,
) -> Result<f64> {
    if original.len() != adversarial.len() {
        return Err(Error::InvalidArgument(format!(
            "objective needs same-size clouds ({} vs {})",
            original.len(),
            adversarial.len()
        )));
    }
    let record = model.forward(adversarial)?;
    let loss = adversarial_loss(&record, label);
    let pair = crate::metrics::distances(original, adversarial)?;
    let p = points_modified(original, adversarial, tau) as f64;
    Ok(loss + lambda1 * pair.total() + lambda2 * p)
}

/// Value of the objective's differentiable part, margin + lambda1 * D.
pub fn objective_diff_value(
    original: &PointCloud,
    adversarial: &PointCloud,
    model: &ClassifierModel,
    label: usize,
    lambda1: f64,
) -> Result<f64> {
    let record = model.forward(adversarial)?;
    let pair = crate::metrics::distances(original, adversarial)?;
    Ok(adversarial_loss(&record, label) + lambda1 * pair.total())
}

/// Gradient of the objective's differentiable part with respect to the
/// adversarial coordinates.
pub fn objective_diff_grad(
    original: &PointCloud,
    adversarial: &PointCloud,
    model: &ClassifierModel,
    label: usize,
    lambda1: f64,
) -> Result<Vec<[f64; 3]>> {
    let mut grad = model.input_gradient(adversarial, ScalarObjective::MarginLoss { label })?;
    let (_, dgrad) = distances_with_grad(original, adversarial)?;
    for (g, d) in grad.iter_mut().zip(&dgrad) {
        for k in 0..3 {
            g[k] += lambda1 * d[k];
        }
    }
    Ok(grad)
}

/// Per-axis disturbance ratio from gradient magnitudes. Points with an
/// exactly zero gradient get a zero ratio.
pub fn adaptive_ratio(gradient: &[[f64; 3]], mode: RatioMode) -> Vec<[f64; 3]> {
    match mode {
        RatioMode::PerPoint => gradient
            .iter()
            .map(|g| {
                let s = g[0].abs() + g[1].abs() + g[2].abs();
                if s > 0.0 {
                    [g[0].abs() / s, g[1].abs() / s, g[2].abs() / s]
                } else {
                    [0.0; 3]
                }
            })
            .collect(),
        RatioMode::Global => {
            let mut sums = [0.0f64; 3];
            for g in gradient {
                for k in 0..3 {
                    sums[k] += g[k].abs();
                }
            }
            let total: f64 = sums.iter().sum();
            let shared = if total > 0.0 {
                [sums[0] / total, sums[1] / total, sums[2] / total]
            } else {
                [0.0; 3]
            };
            vec![shared; gradient.len()]
        }
    }
}

/// The symbolic sign with sign(0) = 0, componentwise.
pub fn sign3(g: [f64; 3]) -> [f64; 3] {
    let s = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    [s(g[0]), s(g[1]), s(g[2])]
}

/// Rebuild the adversarial cloud from the original:
/// `x'_j = x_j + epsilon * ratio_j (.) sign(grad_j) (.) offset_j` on masked
/// points, `x'_j = x_j` elsewhere.
pub fn apply_update(
    original: &PointCloud,
    offset: &[[f64; 3]],
    gradient: &[[f64; 3]],
    ratio: &[[f64; 3]],
    mask: &[bool],
    epsilon: f64,
) -> Result<PointCloud> {
    let n = original.len();
    if offset.len() != n || gradient.len() != n || ratio.len() != n || mask.len() != n {
        return Err(Error::InvalidArgument(
            "apply_update: per-point array lengths disagree".into(),
        ));
    }
    let points = original
        .points
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            if !mask[j] {
                return p;
            }
            let s = sign3(gradient[j]);
            Point3::new(
                p.x + epsilon * ratio[j][0] * s[0] * offset[j][0],
                p.y + epsilon * ratio[j][1] * s[1] * offset[j][1],
                p.z + epsilon * ratio[j][2] * s[2] * offset[j][2],
            )
        })
        .collect();
    Ok(PointCloud::new(points, original.label, original.name.clone()))
}

/// Incremental evaluator: per-point features of immovable points are
/// computed once; each iterate only recomputes the masked rows. Values and
/// winner routing are bit-identical to a full forward pass.
struct MaskedEvaluator<'a> {
    model: &'a ClassifierModel,
    original: &'a PointCloud,
    masked_idx: Vec<usize>,
    /// Channel max over unmasked rows and the (global) winner index.
    base_max: Vec<f64>,
    base_winner: Vec<usize>,
    has_unmasked: bool,
}

struct EvalOutput {
    record: LogitsRecord,
    pair: DistancePair,
    modified: usize,
    /// Full objective value l + l1*D + l2*P.
    objective: f64,
    /// d(margin + lambda1 * D)/d(coordinates) at the masked rows.
    grad_masked: Vec<[f64; 3]>,
}

impl<'a> MaskedEvaluator<'a> {
    fn new(model: &'a ClassifierModel, original: &'a PointCloud, mask: &[bool]) -> Self {
        let masked_idx: Vec<usize> = (0..original.len()).filter(|&j| mask[j]).collect();
        let unmasked: Vec<Point3> = original
            .points
            .iter()
            .enumerate()
            .filter(|(j, _)| !mask[*j])
            .map(|(_, p)| *p)
            .collect();
        let unmasked_idx: Vec<usize> = (0..original.len()).filter(|&j| !mask[j]).collect();
        let width = model.feature_width();
        let (base_max, base_winner, has_unmasked) = if unmasked.is_empty() {
            (vec![f64::NEG_INFINITY; width], vec![usize::MAX; width], false)
        } else {
            let trace = model.point_feature_trace(&unmasked);
            let (pooled, winners) = colmax_with_winners(&trace.a3);
            let winners_global = winners.iter().map(|&r| unmasked_idx[r]).collect();
            (pooled, winners_global, true)
        };
        MaskedEvaluator {
            model,
            original,
            masked_idx,
            base_max,
            base_winner,
            has_unmasked,
        }
    }

    fn evaluate(
        &self,
        current: &PointCloud,
        label: usize,
        lambda1: f64,
        lambda2: f64,
        tau: f64,
    ) -> EvalOutput {
        let masked_points: Vec<Point3> =
            self.masked_idx.iter().map(|&j| current.points[j]).collect();
        let trace = self.model.point_feature_trace(&masked_points);
        let (masked_max, masked_arg) = colmax_with_winners(&trace.a3);

        // Merge the frozen unmasked maxima with the masked rows, preserving
        // the full forward's lowest-global-index winner rule. Channels won
        // by an unmasked point are blocked for the backward pass.
        let width = masked_max.len();
        let mut pooled = Vec::with_capacity(width);
        let mut channel_rows: Vec<Option<usize>> = Vec::with_capacity(width);
        for c in 0..width {
            if !self.has_unmasked {
                pooled.push(masked_max[c]);
                channel_rows.push(Some(masked_arg[c]));
                continue;
            }
            let (b, m) = (self.base_max[c], masked_max[c]);
            if b > m {
                pooled.push(b);
                channel_rows.push(None);
            } else if m > b {
                pooled.push(m);
                channel_rows.push(Some(masked_arg[c]));
            } else if self.base_winner[c] < self.masked_idx[masked_arg[c]] {
                pooled.push(b);
                channel_rows.push(None);
            } else {
                pooled.push(m);
                channel_rows.push(Some(masked_arg[c]));
            }
        }

        let head = self.model.head_forward(Array1::from(pooled));
        let record = head.record.clone();
        let margin = margin_loss(&record.logits, label);

        let dlogits = ScalarObjective::MarginLoss { label }.dlogits(&record.logits);
        let dpooled = self.model.head_backward(&head, &dlogits, None);
        let mut grad_masked = vec![[0.0f64; 3]; self.masked_idx.len()];
        self.model
            .pool_backward(&trace, &channel_rows, &dpooled, &mut grad_masked, None);

        let (pair, dgrad) =
            distances_with_grad(self.original, current).expect("clouds are nonempty");
        for (k, &j) in self.masked_idx.iter().enumerate() {
            for axis in 0..3 {
                grad_masked[k][axis] += lambda1 * dgrad[j][axis];
            }
        }

        let modified = self
            .masked_idx
            .iter()
            .filter(|&&j| self.original.points[j].dist(current.points[j]) > tau)
            .count();
        let objective = margin + lambda1 * pair.total() + lambda2 * modified as f64;
        EvalOutput {
            record,
            pair,
            modified,
            objective,
            grad_masked,
        }
    }
}

/// Tracked best successful iterate.
struct BestCandidate {
    points: Vec<Point3>,
    offsets: Vec<[f64; 3]>,
    modulation: Vec<[f64; 3]>,
    lambda1: f64,
    pair: DistancePair,
    adversarial_class: usize,
    modified: usize,
}

/// The attack restricted to the top-k salient regions of a partition.
pub fn al_adv_attack(
    model: &ClassifierModel,
    cloud: &PointCloud,
    label: usize,
    partition: &RegionPartition,
    saliency: &SaliencyMap,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let (regions, mask) = top_k_regions(saliency, partition, config.k)?;
    attack_masked(model, cloud, label, &mask, regions, config)
}

/// Whole-cloud baseline: the identical optimizer with every point movable.
pub fn global_baseline_attack(
    model: &ClassifierModel,
    cloud: &PointCloud,
    label: usize,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let mask = vec![true; cloud.len()];
    attack_masked(model, cloud, label, &mask, Vec::new(), config)
}

/// Core optimization loop over an explicit point mask.
pub fn attack_masked(
    model: &ClassifierModel,
    cloud: &PointCloud,
    label: usize,
    mask: &[bool],
    attacked_regions: Vec<usize>,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    if mask.len() != cloud.len() {
        return Err(Error::InvalidArgument(
            "mask length does not match cloud".into(),
        ));
    }
    let record = model.forward(cloud)?;
    if record.predicted != label {
        return Err(Error::Misclassified {
            name: cloud.name.clone(),
            predicted: record.predicted,
            label,
        });
    }

    let n = cloud.len();
    let evaluator = MaskedEvaluator::new(model, cloud, mask);
    let n_masked = evaluator.masked_idx.len();

    let mut offsets = vec![[0.0f64; 3]; n];
    let mut modulation = vec![[0.0f64; 3]; n];
    let mut current = cloud.clone();
    let mut best: Option<BestCandidate> = None;
    let mut trace = Vec::with_capacity(config.lambda1_rounds * (config.iterations + 1));
    let mut rounds = Vec::with_capacity(config.lambda1_rounds);

    let (mut lo, mut hi) = (config.lambda1_min, config.lambda1_max);
    let mut lambda1 = config.lambda1_init;
    let mut final_eval: Option<EvalOutput> = None;
    let mut final_lambda1 = lambda1;

    for _round in 0..config.lambda1_rounds {
        // Moments reset each round; the offset warm-starts.
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: config.learning_rate,
                beta1: config.beta1,
                beta2: config.beta2,
                epsilon: 1e-8,
            },
            3 * n_masked,
        );
        let mut round_success = false;
        let mut round_best: Option<f64> = None;

        for t in 0..=config.iterations {
            let eval = evaluator.evaluate(&current, label, lambda1, config.lambda2, config.tau);
            trace.push(eval.objective);
            if eval.record.predicted != label {
                round_success = true;
                let d = eval.pair.total();
                if round_best.map_or(true, |b| d < b) {
                    round_best = Some(d);
                }
                if best.as_ref().map_or(true, |b| d < b.pair.total()) {
                    best = Some(BestCandidate {
                        points: current.points.clone(),
                        offsets: offsets.clone(),
                        modulation: modulation.clone(),
                        lambda1,
                        pair: eval.pair,
                        adversarial_class: eval.record.predicted,
                        modified: eval.modified,
                    });
                }
            }
            if t == config.iterations {
                final_eval = Some(eval);
                final_lambda1 = lambda1;
                break;
            }

            // ratio and sign are frozen within the step; the offset descends
            // d(objective)/d(offset) = grad (.) epsilon * ratio (.) sign.
            let ratio = adaptive_ratio(&eval.grad_masked, config.ratio_mode);
            let mut flat_offset = Vec::with_capacity(3 * n_masked);
            let mut flat_grad = Vec::with_capacity(3 * n_masked);
            for (k, &j) in evaluator.masked_idx.iter().enumerate() {
                let s = sign3(eval.grad_masked[k]);
                for axis in 0..3 {
                    flat_offset.push(offsets[j][axis]);
                    flat_grad.push(
                        eval.grad_masked[k][axis] * config.epsilon * ratio[k][axis] * s[axis],
                    );
                }
            }
            adam.step(&mut flat_offset, &flat_grad);
            for (k, &j) in evaluator.masked_idx.iter().enumerate() {
                let s = sign3(eval.grad_masked[k]);
                for axis in 0..3 {
                    offsets[j][axis] = flat_offset[3 * k + axis];
                    modulation[j][axis] = config.epsilon * ratio[k][axis] * s[axis];
                }
                current.points[j] = Point3::new(
                    cloud.points[j].x + modulation[j][0] * offsets[j][0],
                    cloud.points[j].y + modulation[j][1] * offsets[j][1],
                    cloud.points[j].z + modulation[j][2] * offsets[j][2],
                );
            }
        }

        rounds.push(RoundRecord {
            lambda1,
            succeeded: round_success,
            best_distance: round_best,
        });
        // Success affords a tighter distance next round; failure relaxes it.
        if round_success {
            lo = lambda1;
        } else {
            hi = lambda1;
        }
        lambda1 = 0.5 * (lo + hi);
    }

    let masked_points = n_masked;
    let result = match best {
        Some(b) => {
            let adversarial = PointCloud::new(b.points, cloud.label, format!("{}_adv", cloud.name));
            AttackResult {
                success: true,
                adversarial_class: b.adversarial_class,
                chamfer: b.pair.chamfer,
                hausdorff: b.pair.hausdorff,
                points_modified: b.modified,
                masked_points,
                lambda1: b.lambda1,
                objective_trace: trace,
                offsets: b.offsets,
                modulation: b.modulation,
                mask: mask.to_vec(),
                attacked_regions,
                rounds,
                adversarial,
            }
        }
        None => {
            let eval = final_eval.expect("at least one round ran");
            let adversarial =
                PointCloud::new(current.points, cloud.label, format!("{}_adv", cloud.name));
            AttackResult {
                success: false,
                adversarial_class: eval.record.predicted,
                chamfer: eval.pair.chamfer,
                hausdorff: eval.pair.hausdorff,
                points_modified: eval.modified,
                masked_points,
                lambda1: final_lambda1,
                objective_trace: trace,
                offsets,
                modulation,
                mask: mask.to_vec(),
                attacked_regions,
                rounds,
                adversarial,
            }
        }
    };
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{gen_synthetic, ShapeClass};
    use crate::regions::partition;
    use crate::shapley::shapley_exact;

    use crate::classifier::argmax_lowest;

    #[test]
    fn adversarial_loss_examples() {
        let rec = |logits: Vec<f64>| LogitsRecord {
            probabilities: vec![0.0; logits.len()],
            predicted: argmax_lowest(&logits),
            logits,
        };
        assert_eq!(adversarial_loss(&rec(vec![3.0, 1.0]), 0), 2.0);
        assert_eq!(adversarial_loss(&rec(vec![1.0, 3.0]), 0), 0.0);
        assert_eq!(adversarial_loss(&rec(vec![2.0, 2.0]), 0), 0.0);
    }

    #[test]
    fn adaptive_ratio_examples() {
        let r = adaptive_ratio(&[[3.0, -1.0, 0.0]], RatioMode::PerPoint);
        assert_eq!(r[0], [0.75, 0.25, 0.0]);
        let r = adaptive_ratio(&[[0.0, 0.0, 0.0]], RatioMode::PerPoint);
        assert_eq!(r[0], [0.0, 0.0, 0.0]);
        let r = adaptive_ratio(&[[0.4, 0.4, 0.4]], RatioMode::PerPoint);
        for v in r[0] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sign_is_symbolic() {
        assert_eq!(sign3([2.0, -0.5, 0.0]), [1.0, -1.0, 0.0]);
    }

    #[test]
    fn apply_update_examples() {
        let x = PointCloud::new(
            vec![Point3::new(1.0, 1.0, 1.0), Point3::new(-1.0, 0.0, 0.5)],
            None,
            "t",
        );
        let zeros = vec![[0.0; 3]; 2];
        let grad = vec![[1.0, -2.0, 0.0]; 2];
        let ratio = vec![[0.5, 0.5, 0.0]; 2];

        // zero offset leaves the cloud unchanged
        let out = apply_update(&x, &zeros, &grad, &ratio, &[true, true], 0.6).unwrap();
        assert_eq!(out.points, x.points);

        // all-false mask ignores any offset
        let offset = vec![[9.0, 9.0, 9.0]; 2];
        let out = apply_update(&x, &offset, &grad, &ratio, &[false, false], 0.6).unwrap();
        assert_eq!(out.points, x.points);

        // single masked point with ratio (1,0,0), positive-x gradient,
        // offset (0.5, 0.9, 0.9), epsilon 0.6 -> displacement (0.3, 0, 0)
        let offset = vec![[0.5, 0.9, 0.9], [0.0; 3]];
        let ratio = vec![[1.0, 0.0, 0.0], [0.0; 3]];
        let grad = vec![[0.7, 0.1, -0.4], [0.0; 3]];
        let out = apply_update(&x, &offset, &grad, &ratio, &[true, false], 0.6).unwrap();
        assert!((out.points[0].x - 1.3).abs() < 1e-15);
        assert_eq!(out.points[0].y, 1.0);
        assert_eq!(out.points[0].z, 1.0);

        // shape mismatch is rejected
        assert!(apply_update(&x, &offset[..1], &grad, &ratio, &[true, false], 0.6).is_err());
    }

    #[test]
    fn objective_composes_its_parts() {
        let model = ClassifierModel::new_seeded(4, 3);
        let x = gen_synthetic(ShapeClass::Sphere, 48, 1, 0.0).unwrap();
        let mut adv = x.clone();
        let tau = 1e-4;
        // displace one point by 2 tau
        adv.points[5].x += 2.0 * tau;
        let label = 0;
        let (l1, l2) = (0.7, 0.15);
        let c = objective(&x, &adv, &model, label, l1, l2, tau).unwrap();
        let rec = model.forward(&adv).unwrap();
        let expected = adversarial_loss(&rec, label)
            + l1 * crate::metrics::distances(&x, &adv).unwrap().total()
            + l2 * 1.0;
        assert!((c - expected).abs() < 1e-12);

        // x' = x: both penalty terms vanish
        let c0 = objective(&x, &x, &model, label, l1, l2, tau).unwrap();
        let rec0 = model.forward(&x).unwrap();
        assert!((c0 - adversarial_loss(&rec0, label)).abs() < 1e-15);
    }

    #[test]
    fn masked_evaluator_matches_full_path() {
        let model = ClassifierModel::new_seeded(5, 17);
        let x = gen_synthetic(ShapeClass::Cone, 80, 21, 0.01).unwrap();
        let mask: Vec<bool> = (0..80).map(|i| i % 3 == 0).collect();
        let evaluator = MaskedEvaluator::new(&model, &x, &mask);

        // Perturb masked points to make the candidate nontrivial.
        let mut current = x.clone();
        for (j, &m) in mask.iter().enumerate() {
            if m {
                current.points[j].x += 0.05;
                current.points[j].z -= 0.02;
            }
        }
        let label = 2;
        let lambda1 = 0.8;
        let eval = evaluator.evaluate(&current, label, lambda1, 0.15, 1e-4);

        let full = model.forward(&current).unwrap();
        assert_eq!(eval.record.logits, full.logits);

        let grad_full = objective_diff_grad(&x, &current, &model, label, lambda1).unwrap();
        for (k, &j) in evaluator.masked_idx.iter().enumerate() {
            for axis in 0..3 {
                assert!(
                    (eval.grad_masked[k][axis] - grad_full[j][axis]).abs() < 1e-12,
                    "row {j} axis {axis}: {} vs {}",
                    eval.grad_masked[k][axis],
                    grad_full[j][axis]
                );
            }
        }
    }

    fn quick_config() -> AttackConfig {
        AttackConfig {
            iterations: 12,
            lambda1_rounds: 3,
            m: 4,
            k: 2,
            ..Default::default()
        }
    }

    /// A model trained just enough to classify a two-class toy problem.
    fn tiny_victim() -> (ClassifierModel, Vec<PointCloud>) {
        use crate::classifier::{train, TrainConfig};
        use crate::geometry::{save_cloud, CloudFormat, DatasetManifest, ManifestEntry, Split};
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = DatasetManifest {
            classes: vec!["sphere".into(), "plane".into()],
            entries: Vec::new(),
            root: dir.path().to_path_buf(),
        };
        for (ci, class) in [ShapeClass::Sphere, ShapeClass::Plane].iter().enumerate() {
            for i in 0..10 {
                let split = if i < 8 { Split::Train } else { Split::Test };
                let cloud = gen_synthetic(*class, 96, (1000 + ci * 50 + i) as u64, 0.02).unwrap();
                let rel = format!("{ci}_{i}.pcb");
                save_cloud(&cloud, &dir.path().join(&rel), CloudFormat::NativeBinary, None)
                    .unwrap();
                manifest.entries.push(ManifestEntry {
                    path: rel.into(),
                    class: ci,
                    split,
                });
            }
        }
        let mut model = ClassifierModel::new_seeded(2, 7);
        let report = train(
            &mut model,
            &manifest,
            &TrainConfig {
                epochs: 12,
                batch_size: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.final_test_accuracy > 0.5);
        let clouds = (0..4)
            .map(|i| gen_synthetic(ShapeClass::Sphere, 96, 5000 + i, 0.02).unwrap())
            .collect();
        (model, clouds)
    }

    #[test]
    fn attack_behaviour_end_to_end() {
        let (model, clouds) = tiny_victim();
        let config = quick_config();
        for cloud in &clouds {
            let label = cloud.label.unwrap();
            if model.forward(cloud).unwrap().predicted != label {
                continue;
            }
            let part = partition(cloud, config.m, 0).unwrap();
            let saliency = shapley_exact(&model, cloud, &part, label).unwrap();
            let result = al_adv_attack(&model, cloud, label, &part, &saliency, &config).unwrap();

            // locality: unmasked points are bit-identical
            for (j, &masked) in result.mask.iter().enumerate() {
                if !masked {
                    assert_eq!(result.adversarial.points[j], cloud.points[j]);
                    assert_eq!(result.offsets[j], [0.0; 3]);
                }
            }
            // reconstruction from stored offsets and modulation
            for j in 0..cloud.len() {
                let rebuilt = Point3::new(
                    cloud.points[j].x + result.modulation[j][0] * result.offsets[j][0],
                    cloud.points[j].y + result.modulation[j][1] * result.offsets[j][1],
                    cloud.points[j].z + result.modulation[j][2] * result.offsets[j][2],
                );
                assert!(rebuilt.dist(result.adversarial.points[j]) < 1e-12);
            }
            // success flag consistent with the recorded class
            assert_eq!(result.success, result.adversarial_class != label);
            // modified points bounded by the mask
            assert!(result.points_modified <= result.masked_points);
            // bisection bracket: success raises lo, failure lowers hi
            let (mut lo, mut hi) = (config.lambda1_min, config.lambda1_max);
            let mut expect = config.lambda1_init;
            for round in &result.rounds {
                assert!((round.lambda1 - expect).abs() < 1e-12);
                if round.succeeded {
                    lo = round.lambda1;
                } else {
                    hi = round.lambda1;
                }
                expect = 0.5 * (lo + hi);
            }
            // the returned lambda1 was actually tried
            assert!(result
                .rounds
                .iter()
                .any(|r| (r.lambda1 - result.lambda1).abs() < 1e-15));
            if result.success {
                // best-tracking: returned distance <= each round's best
                let d = result.chamfer + result.hausdorff;
                for round in &result.rounds {
                    if let Some(rb) = round.best_distance {
                        assert!(d <= rb + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn attack_is_deterministic() {
        let (model, clouds) = tiny_victim();
        let config = quick_config();
        let cloud = &clouds[0];
        let label = cloud.label.unwrap();
        if model.forward(cloud).unwrap().predicted != label {
            return;
        }
        let part = partition(cloud, config.m, 0).unwrap();
        let saliency = shapley_exact(&model, cloud, &part, label).unwrap();
        let a = al_adv_attack(&model, cloud, label, &part, &saliency, &config).unwrap();
        let b = al_adv_attack(&model, cloud, label, &part, &saliency, &config).unwrap();
        assert_eq!(a.adversarial.points, b.adversarial.points);
        assert_eq!(a.objective_trace, b.objective_trace);
        assert_eq!(a.lambda1, b.lambda1);
    }

    #[test]
    fn zero_epsilon_never_moves_or_succeeds() {
        let (model, clouds) = tiny_victim();
        let config = AttackConfig {
            epsilon: 0.0,
            ..quick_config()
        };
        for cloud in &clouds {
            let label = cloud.label.unwrap();
            if model.forward(cloud).unwrap().predicted != label {
                continue;
            }
            let part = partition(cloud, config.m, 0).unwrap();
            let saliency = shapley_exact(&model, cloud, &part, label).unwrap();
            let result = al_adv_attack(&model, cloud, label, &part, &saliency, &config).unwrap();
            assert!(!result.success);
            assert_eq!(result.adversarial.points, cloud.points);
            assert_eq!(result.points_modified, 0);
        }
    }

    #[test]
    fn misclassified_input_is_rejected() {
        let (model, clouds) = tiny_victim();
        let cloud = &clouds[0];
        let wrong_label = 1 - model.forward(cloud).unwrap().predicted;
        let part = partition(cloud, 4, 0).unwrap();
        let saliency = shapley_exact(&model, cloud, &part, wrong_label).unwrap();
        let err = al_adv_attack(&model, cloud, wrong_label, &part, &saliency, &quick_config());
        assert!(matches!(err, Err(Error::Misclassified { .. })));
    }

    #[test]
    fn global_baseline_masks_everything() {
        let (model, clouds) = tiny_victim();
        let cloud = &clouds[1];
        let label = cloud.label.unwrap();
        if model.forward(cloud).unwrap().predicted != label {
            return;
        }
        let result = global_baseline_attack(&model, cloud, label, &quick_config()).unwrap();
        assert_eq!(result.masked_points, cloud.len());
        assert!(result.points_modified <= cloud.len());
        let again = global_baseline_attack(&model, cloud, label, &quick_config()).unwrap();
        assert_eq!(result.adversarial.points, again.adversarial.points);
    }
}

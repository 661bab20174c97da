//! Finite-difference oracles for every gradient path: input gradients,
//! parameter gradients, and the composite attack objective.

use pcadv::attack::{objective_diff_grad, objective_diff_value};
use pcadv::classifier::{loss_at_flat, param_grads_for, ClassifierModel, ScalarObjective};
use pcadv::geometry::{Point3, PointCloud};
use rand::Rng;

const FD_STEP: f64 = 1e-5;

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = pcadv::seed::rng(seed);
    let points = (0..n)
        .map(|_| {
            Point3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    PointCloud::new(points, Some(0), format!("rand{seed}"))
}

/// Smallest top-2 gap across *live* max-pool channels; probes near a tie
/// are excluded from finite-difference comparisons. Channels whose maximum
/// is zero are dead after the rectifier and carry no gradient.
fn min_pool_gap(model: &ClassifierModel, cloud: &PointCloud) -> f64 {
    let feats = model.point_feature_trace(&cloud.points).a3;
    let (n, m) = feats.dim();
    let mut min_gap = f64::INFINITY;
    for c in 0..m {
        let (mut top1, mut top2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for r in 0..n {
            let v = feats[[r, c]];
            if v > top1 {
                top2 = top1;
                top1 = v;
            } else if v > top2 {
                top2 = v;
            }
        }
        if n > 1 && top1 > 0.0 {
            min_gap = min_gap.min(top1 - top2);
        }
    }
    min_gap
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn input_gradient_matches_central_differences() {
    let model = ClassifierModel::new_seeded(5, 101);
    // pick a cloud clear of max-pool ties
    let cloud = (0..20u64)
        .map(|s| random_cloud(48, 200 + s))
        .find(|c| min_pool_gap(&model, c) > 1e-6)
        .expect("a tie-free cloud exists");

    for objective in [
        ScalarObjective::Logit { class: 3, scale: 1.0 },
        ScalarObjective::MarginLoss { label: 0 },
    ] {
        let analytic = model.input_gradient(&cloud, objective).unwrap();
        let mut rng = pcadv::seed::rng(7);
        let mut bad = 0usize;
        for _ in 0..20 {
            let pi = rng.gen_range(0..cloud.len());
            let axis = rng.gen_range(0..3usize);
            let mut probe = cloud.clone();
            let mut arr = probe.points[pi].to_array();
            arr[axis] += FD_STEP;
            probe.points[pi] = Point3::from_array(arr);
            let fp = objective.value(&model.forward(&probe).unwrap().logits);
            arr[axis] -= 2.0 * FD_STEP;
            probe.points[pi] = Point3::from_array(arr);
            let fm = objective.value(&model.forward(&probe).unwrap().logits);
            let fd = (fp - fm) / (2.0 * FD_STEP);
            if rel_err(fd, analytic[pi][axis]) > 1e-4 {
                bad += 1;
            }
        }
        assert_eq!(bad, 0, "{objective:?}: {bad}/20 probes disagree");
    }
}

#[test]
fn parameter_gradient_matches_central_differences() {
    let model = ClassifierModel::new_seeded(4, 55);
    let cloud = (0..20u64)
        .map(|s| random_cloud(32, 900 + s))
        .find(|c| min_pool_gap(&model, c) > 1e-6)
        .expect("a tie-free cloud exists");

    let analytic = param_grads_for(&model, &cloud).to_flat();
    let base = model.to_flat();
    let mut rng = pcadv::seed::rng(13);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let idx = rng.gen_range(0..base.len());
        let mut flat = base.clone();
        flat[idx] += FD_STEP;
        let fp = loss_at_flat(&model, &flat, &cloud);
        flat[idx] -= 2.0 * FD_STEP;
        let fm = loss_at_flat(&model, &flat, &cloud);
        let fd = (fp - fm) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(fd, analytic[idx]));
    }
    assert!(worst <= 1e-4, "worst parameter-gradient error {worst}");
}

#[test]
fn composite_objective_gradient_matches_central_differences() {
    let model = ClassifierModel::new_seeded(5, 77);
    let original = (0..20u64)
        .map(|s| random_cloud(40, 300 + s))
        .find(|c| min_pool_gap(&model, c) > 1e-6)
        .expect("a tie-free cloud exists");

    // a perturbed candidate, as the attack would see mid-run
    let mut adversarial = original.clone();
    let mut rng = pcadv::seed::rng(3);
    for p in adversarial.points.iter_mut() {
        p.x += rng.gen_range(-0.02..0.02);
        p.y += rng.gen_range(-0.02..0.02);
        p.z += rng.gen_range(-0.02..0.02);
    }
    let label = 0;
    let lambda1 = 0.9;
    let analytic = objective_diff_grad(&original, &adversarial, &model, label, lambda1).unwrap();

    let mut bad = 0usize;
    let probes = 40;
    for _ in 0..probes {
        let pi = rng.gen_range(0..adversarial.len());
        let axis = rng.gen_range(0..3usize);
        let mut probe = adversarial.clone();
        let mut arr = probe.points[pi].to_array();
        arr[axis] += FD_STEP;
        probe.points[pi] = Point3::from_array(arr);
        let fp = objective_diff_value(&original, &probe, &model, label, lambda1).unwrap();
        arr[axis] -= 2.0 * FD_STEP;
        probe.points[pi] = Point3::from_array(arr);
        let fm = objective_diff_value(&original, &probe, &model, label, lambda1).unwrap();
        let fd = (fp - fm) / (2.0 * FD_STEP);
        if rel_err(fd, analytic[pi][axis]) > 1e-4 {
            bad += 1;
        }
    }
    // nearest-neighbor switches are legitimate kinks; allow 1% of probes
    assert!(bad <= probes / 100, "{bad}/{probes} probes disagree");
}

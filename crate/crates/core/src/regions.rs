//! Spatial region partitioning and the coalition value function.
//!
//! Regions are the players of the cooperative game used for saliency
//! analysis: a subset of regions is "present", the classifier evaluates the
//! surviving points, and the true-class readout is the coalition's value.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::classifier::ClassifierModel;
use crate::geometry::{Point3, PointCloud};
use crate::{Error, Result};

/// Assignment of each point to one of `m` regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    pub m: usize,
    /// Region index per point, values in `[0, m)`.
    pub assignment: Vec<usize>,
    /// The farthest-point-sampled seed of each region.
    pub seeds: Vec<Point3>,
}

impl RegionPartition {
    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.m];
        for &r in &self.assignment {
            sizes[r] += 1;
        }
        sizes
    }

    /// Per-point membership mask for a set of regions.
    pub fn point_mask(&self, regions: &[usize]) -> Vec<bool> {
        let set: BTreeSet<usize> = regions.iter().copied().collect();
        self.assignment.iter().map(|r| set.contains(r)).collect()
    }

    /// Text export: one `point-index region-index` line per point.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# pcadv partition v1\n");
        for (i, r) in self.assignment.iter().enumerate() {
            out.push_str(&format!("{i} {r}\n"));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// A set of region indices; duplicates collapse.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegionSubset {
    members: BTreeSet<usize>,
}

impl RegionSubset {
    pub fn empty() -> RegionSubset {
        RegionSubset::default()
    }

    pub fn full(m: usize) -> RegionSubset {
        RegionSubset {
            members: (0..m).collect(),
        }
    }

    pub fn from_iter(iter: impl IntoIterator<Item = usize>) -> RegionSubset {
        RegionSubset {
            members: iter.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, region: usize) {
        self.members.insert(region);
    }

    pub fn contains(&self, region: usize) -> bool {
        self.members.contains(&region)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }
}

/// Partition a cloud into `m` regions: farthest-point sampling picks seeds
/// (first seed is the point of maximum norm), then every point joins its
/// nearest seed. All ties resolve to the lowest index.
pub fn partition(cloud: &PointCloud, m: usize, _seed: u64) -> Result<RegionPartition> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "region count {m} must be in [1, {n}]"
        )));
    }
    let pts = &cloud.points;

    let mut seed_idx = Vec::with_capacity(m);
    let mut first = 0usize;
    for (i, p) in pts.iter().enumerate() {
        if p.norm() > pts[first].norm() {
            first = i;
        }
    }
    seed_idx.push(first);

    // min squared distance from each point to the chosen seeds
    let mut min_d = vec![f64::INFINITY; n];
    while seed_idx.len() < m {
        let last = *seed_idx.last().unwrap();
        for i in 0..n {
            let d = pts[i].dist_sq(pts[last]);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
        let mut next = None;
        let mut best = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if seed_idx.contains(&i) {
                continue;
            }
            if d > best {
                best = d;
                next = Some(i);
            }
        }
        seed_idx.push(next.expect("m <= n guarantees an unchosen point"));
    }

    let seeds: Vec<Point3> = seed_idx.iter().map(|&i| pts[i]).collect();
    let assignment = pts
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = p.dist_sq(seeds[0]);
            for (s, seed) in seeds.iter().enumerate().skip(1) {
                let d = p.dist_sq(*seed);
                if d < best_d {
                    best_d = d;
                    best = s;
                }
            }
            best
        })
        .collect();

    Ok(RegionPartition { m, assignment, seeds })
}

/// The points of a cloud restricted to a region subset, original order kept.
pub fn subset_cloud(
    cloud: &PointCloud,
    partition: &RegionPartition,
    subset: &RegionSubset,
) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .zip(&partition.assignment)
        .filter(|(_, r)| subset.contains(**r))
        .map(|(p, _)| *p)
        .collect();
    PointCloud::new(points, cloud.label, cloud.name.clone())
}

/// Which scalar the value function reads out of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Readout {
    /// True-class logit (pre-softmax).
    #[default]
    Logit,
    /// True-class softmax probability.
    Probability,
}

/// How absent regions are treated when evaluating a coalition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Occlusion {
    /// Absent regions are removed from the input.
    #[default]
    Remove,
    /// Absent regions' points are moved to the cloud centroid.
    Centroid,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GameSpec {
    pub readout: Readout,
    pub occlusion: Occlusion,
}

/// Coalition value g(S) under the default game spec: the true-class logit
/// of the cloud restricted to S. The empty coalition (under removal
/// occlusion) is evaluated on a single origin point.
pub fn value_function(
    model: &ClassifierModel,
    cloud: &PointCloud,
    partition: &RegionPartition,
    subset: &RegionSubset,
    label: usize,
) -> Result<f64> {
    value_function_with(model, cloud, partition, subset, label, GameSpec::default())
}

pub fn value_function_with(
    model: &ClassifierModel,
    cloud: &PointCloud,
    partition: &RegionPartition,
    subset: &RegionSubset,
    label: usize,
    spec: GameSpec,
) -> Result<f64> {
    if label >= model.n_classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            model.n_classes
        )));
    }
    let evaluated = match spec.occlusion {
        Occlusion::Remove => {
            let sub = subset_cloud(cloud, partition, subset);
            if sub.is_empty() {
                PointCloud::new(vec![Point3::ORIGIN], cloud.label, "empty-coalition")
            } else {
                sub
            }
        }
        Occlusion::Centroid => {
            let c = cloud.centroid();
            let points = cloud
                .points
                .iter()
                .zip(&partition.assignment)
                .map(|(p, r)| if subset.contains(*r) { *p } else { c })
                .collect();
            PointCloud::new(points, cloud.label, cloud.name.clone())
        }
    };
    let rec = model.forward(&evaluated)?;
    Ok(match spec.readout {
        Readout::Logit => rec.logits[label],
        Readout::Probability => rec.probabilities[label],
    })
}

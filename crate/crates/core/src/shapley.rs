//! Shapley-value saliency of regions.
//!
//! Each region is a player; the coalition value is the classifier readout
//! on the surviving points. Small games are solved exactly by subset
//! enumeration, larger ones by Monte Carlo permutation sampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::classifier::ClassifierModel;
use crate::geometry::{Point3, PointCloud};
use crate::regions::{GameSpec, Occlusion, Readout, RegionPartition, RegionSubset};
use crate::{seed, Error, Result};

/// Largest m solved by exact subset enumeration (2^m evaluations).
pub const EXACT_THRESHOLD: usize = 12;

/// A cooperative game over regions.
pub trait RegionGame: Sync {
    fn region_count(&self) -> usize;
    fn value(&self, subset: &RegionSubset) -> f64;
}

/// A game given by an explicit table over all subsets (test fixtures).
#[derive(Debug, Clone)]
pub struct TabulatedGame {
    pub m: usize,
    /// Value per subset bitmask; length 2^m.
    pub values: Vec<f64>,
}

impl TabulatedGame {
    pub fn new(m: usize, values: Vec<f64>) -> TabulatedGame {
        assert_eq!(values.len(), 1 << m);
        TabulatedGame { m, values }
    }

    pub fn mask_of(subset: &RegionSubset) -> usize {
        subset.iter().fold(0usize, |acc, r| acc | (1 << r))
    }
}

impl RegionGame for TabulatedGame {
    fn region_count(&self) -> usize {
        self.m
    }

    fn value(&self, subset: &RegionSubset) -> f64 {
        self.values[Self::mask_of(subset)]
    }
}

/// The classifier-backed game.
///
/// Per-point features are computed once; a coalition's logits are the head
/// applied to the channel max over the member points, which is identical to
/// running the full forward pass on the subset cloud.
pub struct ModelGame<'a> {
    model: &'a ClassifierModel,
    spec: GameSpec,
    label: usize,
    region_rows: Vec<Vec<usize>>,
    features: ndarray::Array2<f64>,
    /// Features of the single fallback point (origin or centroid).
    fallback_features: Vec<f64>,
}

impl<'a> ModelGame<'a> {
    pub fn new(
        model: &'a ClassifierModel,
        cloud: &PointCloud,
        partition: &RegionPartition,
        label: usize,
        spec: GameSpec,
    ) -> Result<ModelGame<'a>> {
        if label >= model.n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                model.n_classes
            )));
        }
        if cloud.len() != partition.assignment.len() {
            return Err(Error::InvalidArgument(
                "partition does not match cloud size".into(),
            ));
        }
        let features = model.point_feature_trace(&cloud.points).a3;
        let mut region_rows = vec![Vec::new(); partition.m];
        for (i, &r) in partition.assignment.iter().enumerate() {
            region_rows[r].push(i);
        }
        let fallback_point = match spec.occlusion {
            Occlusion::Remove => Point3::ORIGIN,
            Occlusion::Centroid => cloud.centroid(),
        };
        let fallback_features = model
            .point_feature_trace(&[fallback_point])
            .a3
            .row(0)
            .to_vec();
        Ok(ModelGame {
            model,
            spec,
            label,
            region_rows,
            features,
            fallback_features,
        })
    }

    fn readout(&self, pooled: Vec<f64>) -> f64 {
        let head = self.model.head_forward(Array1::from(pooled));
        match self.spec.readout {
            Readout::Logit => head.record.logits[self.label],
            Readout::Probability => head.record.probabilities[self.label],
        }
    }
}

impl RegionGame for ModelGame<'_> {
    fn region_count(&self) -> usize {
        self.region_rows.len()
    }

    fn value(&self, subset: &RegionSubset) -> f64 {
        let width = self.features.ncols();
        let mut pooled = vec![f64::NEG_INFINITY; width];
        let mut any = false;
        for r in subset.iter() {
            for &row in &self.region_rows[r] {
                any = true;
                let feat = self.features.row(row);
                for c in 0..width {
                    if feat[c] > pooled[c] {
                        pooled[c] = feat[c];
                    }
                }
            }
        }
        let absent_points = match self.spec.occlusion {
            // Removal: an empty coalition falls back to the origin point.
            Occlusion::Remove => !any,
            // Centroid: every absent *point* contributes centroid features.
            Occlusion::Centroid => {
                let member_points: usize = subset.iter().map(|r| self.region_rows[r].len()).sum();
                member_points < self.features.nrows()
            }
        };
        if absent_points {
            for c in 0..width {
                if self.fallback_features[c] > pooled[c] {
                    pooled[c] = self.fallback_features[c];
                }
            }
        }
        self.readout(pooled)
    }
}

/// Which estimator produced a saliency map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Exact,
    MonteCarlo { permutations: usize },
}

/// Per-region Shapley values with a descending rank order.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub phi: Vec<f64>,
    /// Region indices sorted by descending phi; ties break to lower index.
    pub rank: Vec<usize>,
    pub estimator: Estimator,
    /// Monte Carlo only: standard error of each phi estimate.
    pub std_errors: Option<Vec<f64>>,
}

impl SaliencyMap {
    fn from_phi(phi: Vec<f64>, estimator: Estimator, std_errors: Option<Vec<f64>>) -> SaliencyMap {
        let mut rank: Vec<usize> = (0..phi.len()).collect();
        rank.sort_by(|&a, &b| {
            phi[b]
                .partial_cmp(&phi[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        SaliencyMap {
            phi,
            rank,
            estimator,
            std_errors,
        }
    }

    /// Structured text export: region, phi, standard error, rank position.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# pcadv saliency v1\n");
        out.push_str(&format!(
            "# estimator {}\n",
            match self.estimator {
                Estimator::Exact => "exact".to_string(),
                Estimator::MonteCarlo { permutations } => format!("monte-carlo:{permutations}"),
            }
        ));
        out.push_str("# columns: region phi stderr rank_position\n");
        let mut position = vec![0usize; self.phi.len()];
        for (pos, &r) in self.rank.iter().enumerate() {
            position[r] = pos;
        }
        for (r, &phi) in self.phi.iter().enumerate() {
            let se = match &self.std_errors {
                Some(s) => format!("{}", s[r]),
                None => "-".to_string(),
            };
            out.push_str(&format!("{r} {phi} {se} {}\n", position[r]));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Exact Shapley values by full subset enumeration; `m` must not exceed
/// [`EXACT_THRESHOLD`]. Every subset value is evaluated exactly once.
pub fn shapley_exact_game(game: &impl RegionGame) -> Result<SaliencyMap> {
    let m = game.region_count();
    if m > EXACT_THRESHOLD {
        return Err(Error::InvalidArgument(format!(
            "m = {m} exceeds the exact threshold {EXACT_THRESHOLD}; use the Monte Carlo estimator"
        )));
    }
    let n_subsets = 1usize << m;
    let values: Vec<f64> = (0..n_subsets)
        .into_par_iter()
        .map(|mask| {
            let subset = RegionSubset::from_iter((0..m).filter(|&r| mask & (1 << r) != 0));
            game.value(&subset)
        })
        .collect();

    // weight(s) = s! (m-1-s)! / m!
    let mut factorial = vec![1.0f64; m + 1];
    for i in 1..=m {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..m)
        .map(|s| factorial[s] * factorial[m - 1 - s] / factorial[m])
        .collect();

    let phi: Vec<f64> = (0..m)
        .map(|i| {
            let bit = 1usize << i;
            let mut total = 0.0;
            for mask in 0..n_subsets {
                if mask & bit != 0 {
                    continue;
                }
                let s = (mask as u32).count_ones() as usize;
                total += weight[s] * (values[mask | bit] - values[mask]);
            }
            total
        })
        .collect();
    Ok(SaliencyMap::from_phi(phi, Estimator::Exact, None))
}

/// Monte Carlo estimate: average marginal contributions over `permutations`
/// sampled region orderings. Each permutation costs m+1 value evaluations;
/// results are reduced in permutation order, so fixed seeds reproduce.
pub fn shapley_monte_carlo_game(
    game: &impl RegionGame,
    permutations: usize,
    seed_value: u64,
) -> Result<SaliencyMap> {
    if permutations == 0 {
        return Err(Error::InvalidArgument(
            "permutation budget must be >= 1".into(),
        ));
    }
    let m = game.region_count();
    let marginals: Vec<Vec<f64>> = (0..permutations)
        .into_par_iter()
        .map(|j| {
            let mut rng = seed::rng(seed::derive(seed_value, j as u64));
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng);
            let mut row = vec![0.0f64; m];
            let mut coalition = RegionSubset::empty();
            let mut prev = game.value(&coalition);
            for &r in &order {
                coalition.insert(r);
                let next = game.value(&coalition);
                row[r] = next - prev;
                prev = next;
            }
            row
        })
        .collect();

    let p = permutations as f64;
    let mut phi = vec![0.0f64; m];
    for row in &marginals {
        for (i, &v) in row.iter().enumerate() {
            phi[i] += v;
        }
    }
    for v in &mut phi {
        *v /= p;
    }
    let mut std_errors = vec![0.0f64; m];
    if permutations > 1 {
        for (i, se) in std_errors.iter_mut().enumerate() {
            let var = marginals
                .iter()
                .map(|row| (row[i] - phi[i]).powi(2))
                .sum::<f64>()
                / (p - 1.0);
            *se = (var / p).sqrt();
        }
    }
    Ok(SaliencyMap::from_phi(
        phi,
        Estimator::MonteCarlo { permutations },
        Some(std_errors),
    ))
}

/// Exact Shapley saliency of a cloud's regions under the default game.
pub fn shapley_exact(
    model: &ClassifierModel,
    cloud: &PointCloud,
    partition: &RegionPartition,
    label: usize,
) -> Result<SaliencyMap> {
    let game = ModelGame::new(model, cloud, partition, label, GameSpec::default())?;
    shapley_exact_game(&game)
}

/// Monte Carlo Shapley saliency of a cloud's regions under the default game.
pub fn shapley_monte_carlo(
    model: &ClassifierModel,
    cloud: &PointCloud,
    partition: &RegionPartition,
    label: usize,
    permutations: usize,
    seed_value: u64,
) -> Result<SaliencyMap> {
    let game = ModelGame::new(model, cloud, partition, label, GameSpec::default())?;
    shapley_monte_carlo_game(&game, permutations, seed_value)
}

/// The top-k ranked regions and the membership mask of their points.
pub fn top_k_regions(
    map: &SaliencyMap,
    partition: &RegionPartition,
    k: usize,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let m = map.phi.len();
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in [1, {m}]"
        )));
    }
    let selected: Vec<usize> = map.rank[..k].to_vec();
    let mask = partition.point_mask(&selected);
    Ok((selected, mask))
}

/// Full forward on the subset cloud; the slow reference the cached-feature
/// path must match bit for bit.
#[doc(hidden)]
pub fn value_by_subset_forward(
    model: &ClassifierModel,
    cloud: &PointCloud,
    partition: &RegionPartition,
    subset: &RegionSubset,
    label: usize,
) -> Result<f64> {
    crate::regions::value_function(model, cloud, partition, subset, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::partition;

    #[test]
    fn symmetric_additive_game() {
        // m=2: g(∅)=0, g({0})=1, g({1})=1, g({0,1})=2.
        let game = TabulatedGame::new(2, vec![0.0, 1.0, 1.0, 2.0]);
        let map = shapley_exact_game(&game).unwrap();
        assert!((map.phi[0] - 1.0).abs() < 1e-12);
        assert!((map.phi[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dictator_game() {
        // m=3: g(S) = 1 iff region 0 in S.
        let values: Vec<f64> = (0..8).map(|mask| f64::from(mask & 1 != 0)).collect();
        let game = TabulatedGame::new(3, values);
        let map = shapley_exact_game(&game).unwrap();
        assert!((map.phi[0] - 1.0).abs() < 1e-12);
        assert!(map.phi[1].abs() < 1e-12);
        assert!(map.phi[2].abs() < 1e-12);
        assert_eq!(map.rank[0], 0);

        // Dictator marginals are constant, so any Monte Carlo budget is exact.
        let mc = shapley_monte_carlo_game(&game, 3, 1).unwrap();
        assert!((mc.phi[0] - 1.0).abs() < 1e-12);
        assert!(mc.phi[1].abs() < 1e-12);
        assert_eq!(mc.std_errors.as_ref().unwrap()[0], 0.0);
    }

    #[test]
    fn exact_rejects_large_m() {
        let game = TabulatedGame::new(2, vec![0.0; 4]);
        assert_eq!(game.region_count(), 2);
        struct Big;
        impl RegionGame for Big {
            fn region_count(&self) -> usize {
                EXACT_THRESHOLD + 1
            }
            fn value(&self, _: &RegionSubset) -> f64 {
                0.0
            }
        }
        assert!(shapley_exact_game(&Big).is_err());
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let values: Vec<f64> = (0..16).map(|mask: usize| mask.count_ones() as f64 * 0.5).collect();
        let game = TabulatedGame::new(4, values);
        let a = shapley_monte_carlo_game(&game, 50, 9).unwrap();
        let b = shapley_monte_carlo_game(&game, 50, 9).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.std_errors, b.std_errors);
    }

    #[test]
    fn rank_breaks_ties_by_lower_index() {
        let map = SaliencyMap::from_phi(vec![1.0, 3.0, 3.0, 0.0], Estimator::Exact, None);
        assert_eq!(map.rank, vec![1, 2, 0, 3]);
    }

    #[test]
    fn top_k_mask_matches_region_sizes() {
        let cloud = crate::geometry::gen_synthetic(crate::geometry::ShapeClass::Cube, 128, 3, 0.0)
            .unwrap();
        let part = partition(&cloud, 8, 0).unwrap();
        let model = ClassifierModel::new_seeded(4, 2);
        let map = shapley_exact(&model, &cloud, &part, 1).unwrap();

        let (all, mask) = top_k_regions(&map, &part, 8).unwrap();
        assert_eq!(all.len(), 8);
        assert!(mask.iter().all(|&b| b));

        let (top, mask) = top_k_regions(&map, &part, 3).unwrap();
        let sizes = part.region_sizes();
        let expected: usize = top.iter().map(|&r| sizes[r]).sum();
        assert_eq!(mask.iter().filter(|&&b| b).count(), expected);

        assert!(top_k_regions(&map, &part, 0).is_err());
        assert!(top_k_regions(&map, &part, 9).is_err());
    }

    #[test]
    fn cached_feature_value_matches_subset_forward_bitwise() {
        let cloud =
            crate::geometry::gen_synthetic(crate::geometry::ShapeClass::Torus, 96, 8, 0.01)
                .unwrap();
        let part = partition(&cloud, 6, 0).unwrap();
        let model = ClassifierModel::new_seeded(5, 21);
        let game = ModelGame::new(&model, &cloud, &part, 2, GameSpec::default()).unwrap();
        for mask in 0usize..64 {
            let subset = RegionSubset::from_iter((0..6).filter(|&r| mask & (1 << r) != 0));
            let fast = game.value(&subset);
            let slow = value_by_subset_forward(&model, &cloud, &part, &subset, 2).unwrap();
            assert_eq!(fast, slow, "mismatch on mask {mask:#b}");
        }
    }
}

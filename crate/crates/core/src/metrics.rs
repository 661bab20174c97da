//! Point-set distances and their subgradients.
//!
//! Chamfer: the larger of the two direction-averaged squared
//! nearest-neighbor distances. Hausdorff: the larger of the two directed
//! max-min Euclidean distances. Gradients flow only through the winning
//! direction (and, for Hausdorff, the single winning pair); ties resolve
//! to the first direction and the lowest point index.

use crate::geometry::{Point3, PointCloud};
use crate::{Error, Result};

/// Nearest-neighbor structure between two point lists.
pub struct NearestNeighbors {
    /// Per point of `x`: squared distance and index of its nearest in `y`.
    pub fwd: Vec<(f64, usize)>,
    /// Per point of `y`: squared distance and index of its nearest in `x`.
    pub rev: Vec<(f64, usize)>,
}

pub fn nearest_neighbors(x: &[Point3], y: &[Point3]) -> NearestNeighbors {
    let mut fwd = vec![(f64::INFINITY, 0usize); x.len()];
    let mut rev = vec![(f64::INFINITY, 0usize); y.len()];
    for (i, a) in x.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            let d = a.dist_sq(*b);
            if d < fwd[i].0 {
                fwd[i] = (d, j);
            }
            if d < rev[j].0 {
                rev[j] = (d, i);
            }
        }
    }
    NearestNeighbors { fwd, rev }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistancePair {
    pub chamfer: f64,
    pub hausdorff: f64,
}

impl DistancePair {
    /// The distance penalty used by the attack objective.
    pub fn total(&self) -> f64 {
        self.chamfer + self.hausdorff
    }
}

fn require_nonempty(x: &PointCloud, y: &PointCloud) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument(
            "point-set distance of an empty cloud".into(),
        ));
    }
    Ok(())
}

pub fn chamfer_distance(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    require_nonempty(x, y)?;
    let nn = nearest_neighbors(&x.points, &y.points);
    Ok(chamfer_from_nn(&nn))
}

pub fn hausdorff_distance(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    require_nonempty(x, y)?;
    let nn = nearest_neighbors(&x.points, &y.points);
    Ok(hausdorff_from_nn(&nn))
}

/// Both distances off one nearest-neighbor pass.
pub fn distances(x: &PointCloud, y: &PointCloud) -> Result<DistancePair> {
    require_nonempty(x, y)?;
    let nn = nearest_neighbors(&x.points, &y.points);
    Ok(DistancePair {
        chamfer: chamfer_from_nn(&nn),
        hausdorff: hausdorff_from_nn(&nn),
    })
}

fn chamfer_from_nn(nn: &NearestNeighbors) -> f64 {
    let d1 = nn.fwd.iter().map(|p| p.0).sum::<f64>() / nn.fwd.len() as f64;
    let d2 = nn.rev.iter().map(|p| p.0).sum::<f64>() / nn.rev.len() as f64;
    d1.max(d2)
}

fn hausdorff_from_nn(nn: &NearestNeighbors) -> f64 {
    let h1 = nn.fwd.iter().map(|p| p.0).fold(0.0, f64::max);
    let h2 = nn.rev.iter().map(|p| p.0).fold(0.0, f64::max);
    h1.max(h2).sqrt()
}

/// Distances plus the gradient of `chamfer + hausdorff` with respect to the
/// coordinates of `y` (the perturbed cloud).
pub fn distances_with_grad(
    x: &PointCloud,
    y: &PointCloud,
) -> Result<(DistancePair, Vec<[f64; 3]>)> {
    require_nonempty(x, y)?;
    let (xp, yp) = (&x.points, &y.points);
    let nn = nearest_neighbors(xp, yp);
    let pair = DistancePair {
        chamfer: chamfer_from_nn(&nn),
        hausdorff: hausdorff_from_nn(&nn),
    };
    let mut grad = vec![[0.0f64; 3]; yp.len()];

    // Chamfer: gradient of the winning direction's mean of squared
    // nearest-neighbor distances. Match points are treated as constant.
    let d1 = nn.fwd.iter().map(|p| p.0).sum::<f64>() / nn.fwd.len() as f64;
    let d2 = nn.rev.iter().map(|p| p.0).sum::<f64>() / nn.rev.len() as f64;
    if d1 >= d2 {
        let scale = 2.0 / nn.fwd.len() as f64;
        for (i, &(_, j)) in nn.fwd.iter().enumerate() {
            let diff = yp[j] - xp[i];
            grad[j][0] += scale * diff.x;
            grad[j][1] += scale * diff.y;
            grad[j][2] += scale * diff.z;
        }
    } else {
        let scale = 2.0 / nn.rev.len() as f64;
        for (j, &(_, i)) in nn.rev.iter().enumerate() {
            let diff = yp[j] - xp[i];
            grad[j][0] += scale * diff.x;
            grad[j][1] += scale * diff.y;
            grad[j][2] += scale * diff.z;
        }
    }

    // Hausdorff: only the winning pair carries gradient.
    let (mut h1, mut b1) = (f64::NEG_INFINITY, 0usize);
    for (i, &(d, _)) in nn.fwd.iter().enumerate() {
        if d > h1 {
            h1 = d;
            b1 = i;
        }
    }
    let (mut h2, mut a2) = (f64::NEG_INFINITY, 0usize);
    for (j, &(d, _)) in nn.rev.iter().enumerate() {
        if d > h2 {
            h2 = d;
            a2 = j;
        }
    }
    if h1 >= h2 {
        let (i, j) = (b1, nn.fwd[b1].1);
        let dist = h1.sqrt();
        if dist > 0.0 {
            let diff = yp[j] - xp[i];
            grad[j][0] += diff.x / dist;
            grad[j][1] += diff.y / dist;
            grad[j][2] += diff.z / dist;
        }
    } else {
        let (j, i) = (a2, nn.rev[a2].1);
        let dist = h2.sqrt();
        if dist > 0.0 {
            let diff = yp[j] - xp[i];
            grad[j][0] += diff.x / dist;
            grad[j][1] += diff.y / dist;
            grad[j][2] += diff.z / dist;
        }
    }

    Ok((pair, grad))
}

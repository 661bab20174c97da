//! Point clouds: types, normalization, file formats, synthetic shapes.

mod formats;
mod manifest;
mod synthetic;

pub use formats::{load_cloud, save_cloud, save_xyz_flagged, CloudFormat};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synthetic::{gen_synthetic, sample_mesh, shape_surface, ShapeClass, CLASS_NAMES};

use crate::{Error, Result};

/// A point in 3D space. Coordinates are unitless after normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3 {
            x: a[0],
            y: a[1],
            z: a[2],
        }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dist_sq(self, other: Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn dist(self, other: Point3) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// An ordered set of 3D points with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub label: Option<usize>,
    pub name: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, label: Option<usize>, name: impl Into<String>) -> Self {
        PointCloud {
            points,
            label,
            name: name.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len().max(1) as f64;
        let mut c = Point3::ORIGIN;
        for p in &self.points {
            c = c + *p;
        }
        c * (1.0 / n)
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "cloud {:?}: non-finite coordinate at point {i}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Center a cloud at the origin and scale it so the farthest point has norm 1.
///
/// When all points coincide the cloud is centered only (no rescale).
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot normalize an empty cloud".into(),
        ));
    }
    let c = cloud.centroid();
    let mut points: Vec<Point3> = cloud.points.iter().map(|&p| p - c).collect();
    let max_norm = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if max_norm > 0.0 {
        let inv = 1.0 / max_norm;
        for p in &mut points {
            *p = *p * inv;
        }
    }
    Ok(PointCloud::new(points, cloud.label, cloud.name.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_two_points_on_axis() {
        let c = PointCloud::new(
            vec![Point3::new(2.0, 0.0, 0.0), Point3::new(4.0, 0.0, 0.0)],
            None,
            "t",
        );
        let n = normalize_unit_sphere(&c).unwrap();
        assert_eq!(n.points[0], Point3::new(-1.0, 0.0, 0.0));
        assert_eq!(n.points[1], Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn normalize_is_idempotent() {
        let c = PointCloud::new(
            vec![
                Point3::new(0.3, -1.2, 2.0),
                Point3::new(1.0, 0.1, -0.4),
                Point3::new(-2.0, 0.7, 0.9),
            ],
            None,
            "t",
        );
        let once = normalize_unit_sphere(&c).unwrap();
        let twice = normalize_unit_sphere(&once).unwrap();
        for (a, b) in once.points.iter().zip(&twice.points) {
            assert!(a.dist(*b) < 1e-12);
        }
        let centroid = twice.centroid();
        assert!(centroid.norm() < 1e-9);
        let max_norm = twice.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_single_point_goes_to_origin() {
        let c = PointCloud::new(vec![Point3::new(5.0, 5.0, 5.0)], None, "t");
        let n = normalize_unit_sphere(&c).unwrap();
        assert_eq!(n.points[0], Point3::ORIGIN);
    }
}

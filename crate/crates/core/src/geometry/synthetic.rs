//! Synthetic shape dataset and mesh surface sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{normalize_unit_sphere, Point3, PointCloud};
use crate::{seed, Error, Result};

/// Canonical class order for the synthetic dataset.
pub const CLASS_NAMES: [&str; 8] = [
    "sphere", "cube", "cylinder", "cone", "torus", "plane", "pyramid", "helix",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
    Pyramid,
    Helix,
}

impl ShapeClass {
    pub fn from_name(name: &str) -> Result<ShapeClass> {
        Ok(match name {
            "sphere" => ShapeClass::Sphere,
            "cube" => ShapeClass::Cube,
            "cylinder" => ShapeClass::Cylinder,
            "cone" => ShapeClass::Cone,
            "torus" => ShapeClass::Torus,
            "plane" => ShapeClass::Plane,
            "pyramid" => ShapeClass::Pyramid,
            "helix" => ShapeClass::Helix,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown shape class {name:?}; known: {}",
                    CLASS_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn index(self) -> usize {
        match self {
            ShapeClass::Sphere => 0,
            ShapeClass::Cube => 1,
            ShapeClass::Cylinder => 2,
            ShapeClass::Cone => 3,
            ShapeClass::Torus => 4,
            ShapeClass::Plane => 5,
            ShapeClass::Pyramid => 6,
            ShapeClass::Helix => 7,
        }
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }
}

/// Sample `n` points uniformly from the named parametric surface,
/// before jitter and normalization.
pub fn shape_surface(class: ShapeClass, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let mut pts = Vec::with_capacity(n);
    match class {
        ShapeClass::Sphere => {
            // Antipodal pairs cancel exactly, so the centroid is the origin
            // and normalization keeps every sample on the unit sphere.
            while pts.len() + 1 < n {
                let p = unit_sphere_point(rng);
                pts.push(p);
                pts.push(p * -1.0);
            }
            if pts.len() < n {
                pts.push(unit_sphere_point(rng));
            }
        }
        ShapeClass::Cube => {
            // Six faces of the cube [-1,1]^3, equal areas.
            for _ in 0..n {
                let face = rng.gen_range(0..6u8);
                let u = rng.gen_range(-1.0..=1.0);
                let v = rng.gen_range(-1.0..=1.0);
                pts.push(match face {
                    0 => Point3::new(1.0, u, v),
                    1 => Point3::new(-1.0, u, v),
                    2 => Point3::new(u, 1.0, v),
                    3 => Point3::new(u, -1.0, v),
                    4 => Point3::new(u, v, 1.0),
                    _ => Point3::new(u, v, -1.0),
                });
            }
        }
        ShapeClass::Cylinder => {
            // Radius 0.6, z in [-1,1], with end caps; area-weighted choice.
            let r = 0.6;
            let lateral = 2.0 * std::f64::consts::PI * r * 2.0;
            let caps = 2.0 * std::f64::consts::PI * r * r;
            for _ in 0..n {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                if rng.gen_range(0.0..lateral + caps) < lateral {
                    let z = rng.gen_range(-1.0..=1.0);
                    pts.push(Point3::new(r * theta.cos(), r * theta.sin(), z));
                } else {
                    let rr = r * rng.gen_range(0.0f64..=1.0).sqrt();
                    let z = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    pts.push(Point3::new(rr * theta.cos(), rr * theta.sin(), z));
                }
            }
        }
        ShapeClass::Cone => {
            // Apex (0,0,1), base disk radius 1 at z = -1.
            let slant = std::f64::consts::PI * 5.0f64.sqrt();
            let base = std::f64::consts::PI;
            for _ in 0..n {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                if rng.gen_range(0.0..slant + base) < slant {
                    // Radius grows linearly from apex; area density ~ u.
                    let u = rng.gen_range(0.0f64..=1.0).sqrt();
                    pts.push(Point3::new(u * theta.cos(), u * theta.sin(), 1.0 - 2.0 * u));
                } else {
                    let rr = rng.gen_range(0.0f64..=1.0).sqrt();
                    pts.push(Point3::new(rr * theta.cos(), rr * theta.sin(), -1.0));
                }
            }
        }
        ShapeClass::Torus => {
            // Major radius 0.7, minor 0.3; rejection on the tube angle keeps
            // the surface density uniform.
            let major = 0.7;
            let minor = 0.3;
            for _ in 0..n {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let phi = loop {
                    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                    let accept = (major + minor * phi.cos()) / (major + minor);
                    if rng.gen_range(0.0..1.0) < accept {
                        break phi;
                    }
                };
                let ring = major + minor * phi.cos();
                pts.push(Point3::new(
                    ring * theta.cos(),
                    ring * theta.sin(),
                    minor * phi.sin(),
                ));
            }
        }
        ShapeClass::Plane => {
            for _ in 0..n {
                let x = rng.gen_range(-1.0..=1.0);
                let y = rng.gen_range(-1.0..=1.0);
                pts.push(Point3::new(x, y, 0.0));
            }
        }
        ShapeClass::Pyramid => {
            // Square base at z = -0.5, apex (0,0,1), sampled as a mesh.
            let apex = Point3::new(0.0, 0.0, 1.0);
            let c = [
                Point3::new(-1.0, -1.0, -0.5),
                Point3::new(1.0, -1.0, -0.5),
                Point3::new(1.0, 1.0, -0.5),
                Point3::new(-1.0, 1.0, -0.5),
            ];
            let vertices = vec![c[0], c[1], c[2], c[3], apex];
            let faces = vec![
                [0, 1, 4],
                [1, 2, 4],
                [2, 3, 4],
                [3, 0, 4],
                [0, 2, 1],
                [0, 3, 2],
            ];
            pts = sample_triangles(&vertices, &faces, n, rng).expect("pyramid mesh is nondegenerate");
        }
        ShapeClass::Helix => {
            // Three turns of a circular helix; arc length is uniform in t.
            let turns = 3.0;
            let r = 0.8;
            for _ in 0..n {
                let t = rng.gen_range(0.0..turns * std::f64::consts::TAU);
                let z = -1.0 + 2.0 * t / (turns * std::f64::consts::TAU);
                pts.push(Point3::new(r * t.cos(), r * t.sin(), z));
            }
        }
    }
    pts
}

fn unit_sphere_point(rng: &mut ChaCha8Rng) -> Point3 {
    let z = rng.gen_range(-1.0..=1.0);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0f64 - z * z).max(0.0).sqrt();
    Point3::new(r * theta.cos(), r * theta.sin(), z)
}

/// Generate a labeled, normalized synthetic cloud.
///
/// Points are drawn from the class surface, perturbed by Gaussian noise of
/// scale `jitter` per coordinate, then normalized to the unit sphere.
pub fn gen_synthetic(class: ShapeClass, n: usize, seed_value: u64, jitter: f64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("point count must be >= 1".into()));
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidArgument("jitter must be >= 0".into()));
    }
    let mut rng = seed::rng(seed_value);
    let mut points = shape_surface(class, n, &mut rng);
    if jitter > 0.0 {
        for p in &mut points {
            p.x += jitter * sample_standard_normal(&mut rng);
            p.y += jitter * sample_standard_normal(&mut rng);
            p.z += jitter * sample_standard_normal(&mut rng);
        }
    }
    let cloud = PointCloud::new(
        points,
        Some(class.index()),
        format!("{}_{}", class.name(), seed_value),
    );
    normalize_unit_sphere(&cloud)
}

/// Box-Muller; two uniforms per normal keeps the stream layout obvious.
fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Uniform area-weighted surface sampling of a triangle mesh.
pub fn sample_mesh(
    vertices: &[Point3],
    faces: &[[usize; 3]],
    n: usize,
    seed_value: u64,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    for f in faces {
        for &i in f {
            if i >= vertices.len() {
                return Err(Error::InvalidArgument(format!(
                    "face references vertex {i} of {}",
                    vertices.len()
                )));
            }
        }
    }
    let mut rng = seed::rng(seed_value);
    let points = sample_triangles(vertices, faces, n, &mut rng)?;
    Ok(PointCloud::new(points, None, format!("mesh_{seed_value}")))
}

fn triangle_area(a: Point3, b: Point3, c: Point3) -> f64 {
    let u = b - a;
    let v = c - a;
    let cx = u.y * v.z - u.z * v.y;
    let cy = u.z * v.x - u.x * v.z;
    let cz = u.x * v.y - u.y * v.x;
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

fn sample_triangles(
    vertices: &[Point3],
    faces: &[[usize; 3]],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Point3>> {
    let mut cdf = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for f in faces {
        total += triangle_area(vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(
            "degenerate mesh: total surface area is zero".into(),
        ));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.gen_range(0.0..total);
        let fi = cdf.partition_point(|&c| c <= target).min(faces.len() - 1);
        let [ia, ib, ic] = faces[fi];
        let (a, b, c) = (vertices[ia], vertices[ib], vertices[ic]);
        // Uniform barycentric coordinates.
        let r1: f64 = rng.gen_range(0.0..1.0);
        let r2: f64 = rng.gen_range(0.0..1.0);
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        points.push(a * wa + b * wb + c * wc);
    }
    Ok(points)
}

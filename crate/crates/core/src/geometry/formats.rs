//! Cloud file formats: xyz text, OFF meshes, and a native binary format.
//!
//! Native binary layout: magic `PCAD`, version byte, u32 point count, a
//! label-presence byte (0/1) followed by a u32 label when present, then
//! little-endian f64 coordinate triples. Bit-exact across round trips.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Point3, PointCloud};
use crate::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"PCAD";
const BINARY_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// One point per line, whitespace-separated decimals, optional flag column.
    XyzText,
    /// Standard OFF header; only the vertex set is loaded.
    OffMesh,
    /// The `PCAD` binary format above.
    NativeBinary,
}

impl CloudFormat {
    /// Guess a format from a file extension (`xyz`, `off`, `pcb`).
    pub fn from_extension(path: &Path) -> Option<CloudFormat> {
        match path.extension()?.to_str()? {
            "xyz" | "txt" => Some(CloudFormat::XyzText),
            "off" => Some(CloudFormat::OffMesh),
            "pcb" => Some(CloudFormat::NativeBinary),
            _ => None,
        }
    }
}

fn cloud_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().replace(['\t', '\n'], "_"))
        .unwrap_or_else(|| "cloud".into())
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let cloud = match format {
        CloudFormat::XyzText => load_xyz(path)?,
        CloudFormat::OffMesh => load_off_vertices(path)?,
        CloudFormat::NativeBinary => load_binary(path)?,
    };
    cloud.assert_finite()?;
    Ok(cloud)
}

/// Save a cloud; with `perturbed_mask`, an extra 0/1 flag column (xyz) or
/// flag block (binary) is written per point.
pub fn save_cloud(
    cloud: &PointCloud,
    path: &Path,
    format: CloudFormat,
    perturbed_mask: Option<&[bool]>,
) -> Result<()> {
    if let Some(mask) = perturbed_mask {
        if mask.len() != cloud.len() {
            return Err(Error::InvalidArgument(format!(
                "mask length {} does not match cloud size {}",
                mask.len(),
                cloud.len()
            )));
        }
    }
    match format {
        CloudFormat::XyzText => {
            let flags: Option<Vec<u32>> =
                perturbed_mask.map(|m| m.iter().map(|&b| u32::from(b)).collect());
            save_xyz(cloud, path, flags.as_deref())
        }
        CloudFormat::OffMesh => Err(Error::InvalidArgument(
            "saving OFF meshes is not supported; use xyz or native binary".into(),
        )),
        CloudFormat::NativeBinary => save_binary(cloud, path, perturbed_mask),
    }
}

/// xyz text with an arbitrary integer flag column (e.g. region indices).
pub fn save_xyz_flagged(cloud: &PointCloud, path: &Path, flags: &[u32]) -> Result<()> {
    if flags.len() != cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "flag length {} does not match cloud size {}",
            flags.len(),
            cloud.len()
        )));
    }
    save_xyz(cloud, path, Some(flags))
}

fn save_xyz(cloud: &PointCloud, path: &Path, flags: Option<&[u32]>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, p) in cloud.points.iter().enumerate() {
        // 9 significant digits per coordinate.
        match flags {
            Some(f) => writeln!(w, "{:.8e} {:.8e} {:.8e} {}", p.x, p.y, p.z, f[i]),
            None => writeln!(w, "{:.8e} {:.8e} {:.8e}", p.x, p.y, p.z),
        }
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_xyz(path: &Path) -> Result<PointCloud> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut points = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 3 && tokens.len() != 4 {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected 3 or 4 columns, found {}", tokens.len()),
            ));
        }
        let mut coords = [0.0f64; 3];
        for (k, tok) in tokens.iter().take(3).enumerate() {
            coords[k] = tok.parse::<f64>().map_err(|_| {
                Error::parse(path, lineno + 1, format!("non-numeric token {tok:?}"))
            })?;
        }
        points.push(Point3::from_array(coords));
    }
    if points.is_empty() {
        return Err(Error::parse(path, 0, "file contains no points"));
    }
    Ok(PointCloud::new(points, None, cloud_name(path)))
}

/// Parse an OFF file into its vertex and face lists.
pub(crate) fn load_off(path: &Path) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let mut next_content = || -> Result<Option<(usize, String)>> {
        for (lineno, line) in lines.by_ref() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let t = line.trim().to_string();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok(Some((lineno + 1, t)));
            }
        }
        Ok(None)
    };

    let (lineno, header) = next_content()?.ok_or_else(|| Error::parse(path, 0, "empty file"))?;
    // Header is "OFF", optionally with the counts on the same line.
    let mut counts_tokens: Vec<String> = Vec::new();
    if let Some(rest) = header.strip_prefix("OFF") {
        let rest = rest.trim();
        if !rest.is_empty() {
            counts_tokens = rest.split_whitespace().map(str::to_string).collect();
        }
    } else {
        return Err(Error::parse(
            path,
            lineno,
            format!("malformed header {header:?}, expected \"OFF\""),
        ));
    }
    let (counts_line, counts) = if counts_tokens.is_empty() {
        next_content()?.ok_or_else(|| Error::parse(path, lineno, "missing counts line"))?
    } else {
        (lineno, counts_tokens.join(" "))
    };
    let counts: Vec<&str> = counts.split_whitespace().collect();
    if counts.len() < 2 {
        return Err(Error::parse(
            path,
            counts_line,
            "counts line needs at least vertex and face counts",
        ));
    }
    let n_vertices: usize = counts[0]
        .parse()
        .map_err(|_| Error::parse(path, counts_line, "non-numeric vertex count"))?;
    let n_faces: usize = counts[1]
        .parse()
        .map_err(|_| Error::parse(path, counts_line, "non-numeric face count"))?;

    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (lineno, line) = next_content()?
            .ok_or_else(|| Error::parse(path, counts_line, "vertex count mismatch"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::parse(path, lineno, "vertex line needs 3 coordinates"));
        }
        let mut coords = [0.0f64; 3];
        for (k, tok) in toks.iter().take(3).enumerate() {
            coords[k] = tok
                .parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("non-numeric token {tok:?}")))?;
        }
        vertices.push(Point3::from_array(coords));
    }

    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (lineno, line) =
            next_content()?.ok_or_else(|| Error::parse(path, counts_line, "face count mismatch"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let arity: usize = toks[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, "non-numeric face arity"))?;
        if toks.len() < arity + 1 {
            return Err(Error::parse(path, lineno, "face index count mismatch"));
        }
        let idx: Vec<usize> = toks[1..=arity]
            .iter()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::parse(path, lineno, format!("non-numeric index {t:?}")))
            })
            .collect::<Result<_>>()?;
        for &i in &idx {
            if i >= vertices.len() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("face references vertex {i} of {}", vertices.len()),
                ));
            }
        }
        // Fan-triangulate polygons.
        for w in 1..arity.saturating_sub(1) {
            faces.push([idx[0], idx[w], idx[w + 1]]);
        }
    }
    if vertices.is_empty() {
        return Err(Error::parse(path, counts_line, "mesh declares no vertices"));
    }
    Ok((vertices, faces))
}

fn load_off_vertices(path: &Path) -> Result<PointCloud> {
    let (vertices, _) = load_off(path)?;
    Ok(PointCloud::new(vertices, None, cloud_name(path)))
}

fn save_binary(cloud: &PointCloud, path: &Path, mask: Option<&[bool]>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(BINARY_MAGIC).map_err(io)?;
    w.write_all(&[BINARY_VERSION]).map_err(io)?;
    w.write_all(&(cloud.len() as u32).to_le_bytes()).map_err(io)?;
    match cloud.label {
        Some(l) => {
            w.write_all(&[1]).map_err(io)?;
            w.write_all(&(l as u32).to_le_bytes()).map_err(io)?;
        }
        None => w.write_all(&[0]).map_err(io)?,
    }
    w.write_all(&[u8::from(mask.is_some())]).map_err(io)?;
    for p in &cloud.points {
        for c in p.to_array() {
            w.write_all(&c.to_le_bytes()).map_err(io)?;
        }
    }
    if let Some(mask) = mask {
        for &b in mask {
            w.write_all(&[u8::from(b)]).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn load_binary(path: &Path) -> Result<PointCloud> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::parse(path, 0, msg);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != BINARY_MAGIC {
        return Err(bad("bad magic bytes, not a PCAD file"));
    }
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte).map_err(|_| bad("truncated header"))?;
    if byte[0] != BINARY_VERSION {
        return Err(bad(&format!("unsupported version {}", byte[0])));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|_| bad("truncated point count"))?;
    let n = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut byte).map_err(|_| bad("truncated label marker"))?;
    let label = match byte[0] {
        0 => None,
        1 => {
            r.read_exact(&mut u32buf).map_err(|_| bad("truncated label"))?;
            Some(u32::from_le_bytes(u32buf) as usize)
        }
        v => return Err(bad(&format!("bad label marker {v}"))),
    };
    r.read_exact(&mut byte).map_err(|_| bad("truncated mask marker"))?;
    let has_mask = match byte[0] {
        0 => false,
        1 => true,
        v => return Err(bad(&format!("bad mask marker {v}"))),
    };
    if n == 0 {
        return Err(bad("point count is zero"));
    }
    let mut points = Vec::with_capacity(n);
    let mut f64buf = [0u8; 8];
    for i in 0..n {
        let mut coords = [0.0f64; 3];
        for c in &mut coords {
            r.read_exact(&mut f64buf)
                .map_err(|_| bad(&format!("truncated at point {i}")))?;
            *c = f64::from_le_bytes(f64buf);
        }
        points.push(Point3::from_array(coords));
    }
    if has_mask {
        let mut skip = vec![0u8; n];
        r.read_exact(&mut skip).map_err(|_| bad("truncated mask block"))?;
    }
    Ok(PointCloud::new(points, label, cloud_name(path)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn xyz_two_line_file_parses() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("two.xyz");
        fs::write(&path, "0 0 0\n1 0 0\n").unwrap();
        let cloud = load_cloud(&path, CloudFormat::XyzText).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[0], Point3::new(0.0, 0.0, 0.0));
        assert_eq!(cloud.points[1], Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.xyz");
        fs::write(&path, "").unwrap();
        assert!(matches!(
            load_cloud(&path, CloudFormat::XyzText),
            Err(Error::Parse { .. })
        ));
        let path = dir.path().join("empty.off");
        fs::write(&path, "").unwrap();
        assert!(matches!(
            load_cloud(&path, CloudFormat::OffMesh),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn xyz_rejects_garbage_tokens() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        fs::write(&path, "0 0 zero\n").unwrap();
        let err = load_cloud(&path, CloudFormat::XyzText).unwrap_err();
        assert!(err.to_string().contains("zero"));
    }

    #[test]
    fn off_unit_cube_has_eight_vertices() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cube.off");
        fs::write(&path, cube_off()).unwrap();
        let cloud = load_cloud(&path, CloudFormat::OffMesh).unwrap();
        assert_eq!(cloud.len(), 8);
    }

    #[test]
    fn off_face_index_out_of_range_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.off");
        fs::write(&path, "OFF\n1 1 0\n0 0 0\n3 0 1 2\n").unwrap();
        assert!(load_cloud(&path, CloudFormat::OffMesh).is_err());
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.pcb");
        let cloud = PointCloud::new(
            vec![
                Point3::new(0.1, -0.25, 1e-17),
                Point3::new(f64::MIN_POSITIVE, 3.7, -2.0),
            ],
            Some(5),
            "c",
        );
        save_cloud(&cloud, &path, CloudFormat::NativeBinary, None).unwrap();
        let back = load_cloud(&path, CloudFormat::NativeBinary).unwrap();
        assert_eq!(back.points, cloud.points);
        assert_eq!(back.label, Some(5));
    }

    #[test]
    fn xyz_mask_writes_four_columns() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.xyz");
        let cloud = PointCloud::new(
            vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)],
            None,
            "m",
        );
        save_cloud(&cloud, &path, CloudFormat::XyzText, Some(&[true, false])).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let rows: Vec<Vec<&str>> = text
            .lines()
            .map(|l| l.split_whitespace().collect())
            .collect();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.len() == 4));
        assert_eq!(rows[0][3], "1");
        assert_eq!(rows[1][3], "0");
    }

    #[test]
    fn save_to_unwritable_path_errors() {
        let cloud = PointCloud::new(vec![Point3::ORIGIN], None, "x");
        let path = Path::new("/nonexistent-dir/deep/c.pcb");
        assert!(save_cloud(&cloud, path, CloudFormat::NativeBinary, None).is_err());
    }

    #[test]
    fn truncated_binary_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pcb");
        let cloud = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0); 4], None, "t");
        save_cloud(&cloud, &path, CloudFormat::NativeBinary, None).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_cloud(&path, CloudFormat::NativeBinary).is_err());
    }

    pub(crate) fn cube_off() -> &'static str {
        "OFF\n\
         8 12 0\n\
         -1 -1 -1\n 1 -1 -1\n 1 1 -1\n -1 1 -1\n\
         -1 -1 1\n 1 -1 1\n 1 1 1\n -1 1 1\n\
         3 0 1 2\n3 0 2 3\n\
         3 4 6 5\n3 4 7 6\n\
         3 0 4 5\n3 0 5 1\n\
         3 1 5 6\n3 1 6 2\n\
         3 2 6 7\n3 2 7 3\n\
         3 3 7 4\n3 3 4 0\n"
    }
}

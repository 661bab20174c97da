//! Model persistence.
//!
//! Layout: magic `PMDL`, version byte, architecture descriptor (u32 counts
//! and layer widths), u32 class count, then every parameter as little-endian
//! f64 in flat order (per layer: W row-major, then b). Round trips are
//! bit-exact; mismatched descriptors and truncated files are rejected.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ClassifierModel, Dense, HEAD_HIDDEN, POINT_WIDTHS};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PMDL";
const VERSION: u8 = 1;

pub fn save_model(model: &ClassifierModel, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&[VERSION]).map_err(io)?;
    let mut widths: Vec<u32> = Vec::new();
    widths.push(model.point_layers.len() as u32);
    for l in &model.point_layers {
        widths.push(l.w.ncols() as u32);
        widths.push(l.w.nrows() as u32);
    }
    widths.push(model.head_layers.len() as u32);
    for l in &model.head_layers {
        widths.push(l.w.ncols() as u32);
        widths.push(l.w.nrows() as u32);
    }
    widths.push(model.n_classes as u32);
    for v in widths {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for v in model.to_flat() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: String| Error::ModelFormat {
        path: path.to_path_buf(),
        message: msg,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(bad("bad magic, not a PMDL file".into()));
    }
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte)
        .map_err(|_| bad("truncated header".into()))?;
    if byte[0] != VERSION {
        return Err(bad(format!("unsupported version {}", byte[0])));
    }
    let read_u32 = |r: &mut BufReader<fs::File>| -> Result<u32> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)
            .map_err(|_| bad("truncated descriptor".into()))?;
        Ok(u32::from_le_bytes(buf))
    };

    let n_point = read_u32(&mut r)? as usize;
    let mut point_dims = Vec::with_capacity(n_point);
    for _ in 0..n_point {
        let inp = read_u32(&mut r)? as usize;
        let out = read_u32(&mut r)? as usize;
        point_dims.push((inp, out));
    }
    let n_head = read_u32(&mut r)? as usize;
    let mut head_dims = Vec::with_capacity(n_head);
    for _ in 0..n_head {
        let inp = read_u32(&mut r)? as usize;
        let out = read_u32(&mut r)? as usize;
        head_dims.push((inp, out));
    }
    let n_classes = read_u32(&mut r)? as usize;

    // This crate only ever builds one architecture family; refuse others.
    let expected_point: Vec<(usize, usize)> = (0..POINT_WIDTHS.len() - 1)
        .map(|i| (POINT_WIDTHS[i], POINT_WIDTHS[i + 1]))
        .collect();
    if point_dims != expected_point {
        return Err(bad(format!(
            "unexpected per-point layer widths {point_dims:?}"
        )));
    }
    let expected_head = vec![
        (*POINT_WIDTHS.last().unwrap(), HEAD_HIDDEN),
        (HEAD_HIDDEN, n_classes),
    ];
    if head_dims != expected_head {
        return Err(bad(format!(
            "head widths {head_dims:?} inconsistent with class count {n_classes}"
        )));
    }
    if n_classes < 2 {
        return Err(bad(format!("class count {n_classes} < 2")));
    }

    let mut model = ClassifierModel {
        point_layers: point_dims
            .iter()
            .map(|&(i, o)| Dense::zeros(o, i))
            .collect(),
        head_layers: head_dims
            .iter()
            .map(|&(i, o)| Dense::zeros(o, i))
            .collect(),
        n_classes,
    };
    let count = model.param_count();
    let mut flat = vec![0.0f64; count];
    let mut buf = [0u8; 8];
    for (i, v) in flat.iter_mut().enumerate() {
        r.read_exact(&mut buf)
            .map_err(|_| bad(format!("truncated weights at parameter {i} of {count}")))?;
        *v = f64::from_le_bytes(buf);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after weights".into()));
    }
    model.set_from_flat(&flat);
    Ok(model)
}

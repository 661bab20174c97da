//! Dataset manifest: class names plus (file, class, split) entries.
//!
//! Stored as a line-based key-value text file:
//! `class <index> <name>` and `entry <relative-path> <class-index> <split>`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    /// Path relative to the manifest file.
    pub path: PathBuf,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# pcadv dataset manifest v1\n");
        for (i, c) in self.classes.iter().enumerate() {
            out.push_str(&format!("class {i} {c}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!(
                "entry {} {} {}\n",
                e.path.display(),
                e.class,
                e.split.as_str()
            ));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Load and validate: class indices in range, every referenced file exists.
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut manifest = DatasetManifest {
            root,
            ..Default::default()
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "class" if toks.len() == 3 => {
                    let idx: usize = toks[1].parse().map_err(|_| {
                        Error::parse(path, lineno + 1, "non-numeric class index")
                    })?;
                    if idx != manifest.classes.len() {
                        return Err(Error::parse(
                            path,
                            lineno + 1,
                            format!("class index {idx} out of order"),
                        ));
                    }
                    manifest.classes.push(toks[2].to_string());
                }
                "entry" if toks.len() == 4 => {
                    let class: usize = toks[2].parse().map_err(|_| {
                        Error::parse(path, lineno + 1, "non-numeric class index")
                    })?;
                    let split = Split::parse(toks[3]).ok_or_else(|| {
                        Error::parse(path, lineno + 1, format!("unknown split {:?}", toks[3]))
                    })?;
                    manifest.entries.push(ManifestEntry {
                        path: PathBuf::from(toks[1]),
                        class,
                        split,
                    });
                }
                other => {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        format!("unrecognized record {other:?}"),
                    ))
                }
            }
        }
        for (i, e) in manifest.entries.iter().enumerate() {
            if e.class >= manifest.classes.len() {
                return Err(Error::parse(
                    path,
                    0,
                    format!(
                        "entry {i}: class {} out of range ({} classes)",
                        e.class,
                        manifest.classes.len()
                    ),
                ));
            }
            let full = manifest.resolve(e);
            if !full.exists() {
                return Err(Error::parse(
                    path,
                    0,
                    format!("entry {i}: file {} does not exist", full.display()),
                ));
            }
        }
        Ok(manifest)
    }
}

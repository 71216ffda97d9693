//! Evaluation manifests: `utt_id,system_id,path,mos` CSV files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestRow {
    pub utt_id: String,
    pub system_id: String,
    pub path: String,
    #[serde(default, deserialize_with = "csv::invalid_option")]
    pub mos: Option<f64>,
}

/// Manifest rows plus the directory that relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert(row.utt_id.as_str()) {
                return Err(Error::InvariantViolation(format!("duplicate utt_id {}", row.utt_id)));
            }
            if let Some(m) = row.mos {
                if !(1.0..=5.0).contains(&m) {
                    return Err(Error::InvariantViolation(format!(
                        "MOS {m} for {} outside [1, 5]",
                        row.utt_id
                    )));
                }
            }
        }
        Ok(Self { rows, base_dir: base_dir.into() })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn get(&self, utt_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.utt_id == utt_id)
    }
}

pub fn read_manifest<R: std::io::Read>(input: R, base_dir: impl Into<PathBuf>) -> Result<Manifest> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
    Manifest::new(rows, base_dir)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    read_manifest(std::fs::File::open(path)?, base)
}

pub fn write_manifest<W: std::io::Write>(out: W, manifest: &Manifest) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for row in &manifest.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

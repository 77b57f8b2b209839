//! On-disk tensor bundles.
//!
//! A checkpoint is a directory holding `manifest.tsv` (`name`, `dtype`,
//! `dims` per row, dims joined by `x`) and one raw little-endian blob
//! `<name>.bin` per tensor.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, shape_str, Tensor};

pub const MANIFEST: &str = "manifest.tsv";
const HEADER: &str = "name\tdtype\tdims";

/// One row of a manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub dims: Vec<usize>,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        numel(&self.dims)
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

pub fn write_tensors<S: Scalar>(dir: &Path, tensors: &[(String, &Tensor<S>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    for (name, t) in tensors {
        if !valid_name(name) {
            return Err(Error::Contract(format!("invalid tensor name `{name}`")));
        }
        manifest.push_str(&format!("{name}\t{}\t{}\n", S::DTYPE, shape_str(t.shape())));
        let mut blob = Vec::with_capacity(t.len() * S::BYTES);
        for &v in t.data() {
            v.write_le(&mut blob);
        }
        let path = dir.join(format!("{name}.bin"));
        fs::write(&path, blob).map_err(|e| Error::io(path, e))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::CorruptCheckpoint(format!("{}: bad header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::CorruptCheckpoint(format!("bad manifest row `{line}`"));
            if cols.len() != 3 || !valid_name(cols[0]) {
                return Err(bad());
            }
            let dims = cols[2]
                .split('x')
                .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(bad)?;
            Ok(ManifestEntry { name: cols[0].to_string(), dtype: cols[1].to_string(), dims })
        })
        .collect()
}

/// Reads every tensor listed in the manifest, validating dtype and blob size.
pub fn read_tensors<S: Scalar>(dir: &Path) -> Result<Vec<(String, Tensor<S>)>> {
    read_manifest(dir)?
        .into_iter()
        .map(|entry| {
            if entry.dtype != S::DTYPE {
                return Err(Error::CorruptCheckpoint(format!(
                    "{}: dtype {} but reader expects {}",
                    entry.name,
                    entry.dtype,
                    S::DTYPE
                )));
            }
            let path = dir.join(format!("{}.bin", entry.name));
            let blob = fs::read(&path)
                .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
            if blob.len() != entry.numel() * S::BYTES {
                return Err(Error::CorruptCheckpoint(format!(
                    "{}: {} bytes, manifest implies {}",
                    path.display(),
                    blob.len(),
                    entry.numel() * S::BYTES
                )));
            }
            let data = blob.chunks_exact(S::BYTES).map(S::read_le).collect();
            Ok((entry.name, Tensor::new(entry.dims, data)?))
        })
        .collect()
}

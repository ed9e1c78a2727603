//! Corpus manifests: one record-file path per line.
//!
//! Blank lines and lines starting with `#` are skipped. Relative paths are
//! resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::record::{read_records, VideoRecord};
use crate::error::{Error, Result};

pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = Path::new(l);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        })
        .collect())
}

pub fn write_manifest(path: &Path, files: &[PathBuf]) -> Result<()> {
    let mut text = String::new();
    for f in files {
        let line = f
            .to_str()
            .ok_or_else(|| Error::Data(format!("non UTF-8 path {f:?}")))?;
        text.push_str(line);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Every record of every file in the manifest, in manifest order. Ids must
/// be unique across the corpus.
pub fn load_manifest(path: &Path) -> Result<Vec<VideoRecord>> {
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for file in read_manifest(path)? {
        for r in read_records(&file)? {
            if !seen.insert(r.id.clone()) {
                return Err(Error::Data(format!("duplicate video id {:?} in {}", r.id, file.display())));
            }
            records.push(r);
        }
    }
    Ok(records)
}

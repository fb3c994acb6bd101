//! Format dispatch on file names.
//!
//! `*.nii` is read as NIfTI-1. Anything else is a raw pair: a `.f32` payload
//! and a JSON header. Given `a.f32` the header is looked up as `a.json`, then
//! `a.hdr.json`, then (for `id.x.f32` style names) `id.hdr.json`. Given a
//! header `a.json` or `a.hdr.json`, the payload is `a.f32`.

use std::path::{Path, PathBuf};

use super::{load_nifti1, load_raw, save_raw, Volume};
use crate::error::{Error, Result};

fn file_name(path: &Path) -> &str {
    path.file_name().and_then(|n| n.to_str()).unwrap_or("")
}

fn sibling(path: &Path, name: String) -> PathBuf {
    path.with_file_name(name)
}

/// Header and payload paths of a raw volume named by either file.
pub fn raw_paths(path: &Path) -> (PathBuf, PathBuf) {
    let name = file_name(path);
    if let Some(stem) = name.strip_suffix(".f32") {
        let mut candidates = vec![format!("{stem}.json"), format!("{stem}.hdr.json")];
        if let Some((base, _)) = stem.rsplit_once('.') {
            candidates.push(format!("{base}.hdr.json"));
        }
        let header = candidates
            .iter()
            .map(|c| sibling(path, c.clone()))
            .find(|p| p.exists())
            .unwrap_or_else(|| sibling(path, candidates[0].clone()));
        return (header, path.to_path_buf());
    }
    let stem = name
        .strip_suffix(".hdr.json")
        .or_else(|| name.strip_suffix(".json"))
        .unwrap_or(name);
    (path.to_path_buf(), sibling(path, format!("{stem}.f32")))
}

pub fn is_nifti(path: &Path) -> bool {
    file_name(path).ends_with(".nii")
}

/// Load a NIfTI-1 or raw volume.
pub fn load_volume(path: &Path) -> Result<Volume> {
    if is_nifti(path) {
        load_nifti1(path)
    } else {
        let (h, d) = raw_paths(path);
        load_raw(&h, &d)
    }
}

/// Save as a raw pair; `path` names either the payload or the header.
pub fn save_volume(volume: &Volume, path: &Path) -> Result<(PathBuf, PathBuf)> {
    if is_nifti(path) {
        return Err(Error::BadConfig("writing NIfTI is not supported; use .f32".into()));
    }
    let name = file_name(path);
    let (h, d) = if let Some(stem) = name.strip_suffix(".f32") {
        (sibling(path, format!("{stem}.json")), path.to_path_buf())
    } else {
        raw_paths(path)
    };
    save_raw(volume, &h, &d)?;
    Ok((h, d))
}

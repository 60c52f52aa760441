//! Scan ingestion, the synthetic scene generator, splits and file formats.

pub mod container;
pub mod export;
pub mod kitti;
pub mod split;
pub mod synth;

use std::path::{Path, PathBuf};

pub use container::{load_range_image, save_range_image};
pub use kitti::{load_scan, write_scan, LoadedScan};
pub use split::{make_split, read_id_list, write_id_list, DatasetSplit};
pub use synth::{synth_dataset, synth_scan, Scene, SceneConfig};

use crate::error::{Error, Result};
use crate::geometry::{project, ProjectionConfig, RangeImage};

pub const SCAN_EXT: &str = "bin";
pub const IMAGE_EXT: &str = "rimg";

/// Scan files (`.bin` point clouds or `.rimg` containers) in `dir`, sorted by name.
pub fn list_scans(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str());
        if matches!(ext, Some(SCAN_EXT) | Some(IMAGE_EXT)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Scan id: the file stem.
pub fn scan_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads a range image from a container, or projects a point cloud.
/// Containers must match the requested grid size.
pub fn load_any(path: &Path, proj: &ProjectionConfig) -> Result<RangeImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(IMAGE_EXT) => {
            let img = load_range_image(path)?;
            if img.height() != proj.height || img.width() != proj.width {
                return Err(Error::shape(format!(
                    "{} is {}x{}, configured grid is {}x{}",
                    path.display(),
                    img.height(),
                    img.width(),
                    proj.height,
                    proj.width
                )));
            }
            Ok(img)
        }
        _ => Ok(project(&load_scan(path)?.cloud, proj)?.0),
    }
}

/// Loads every scan under each directory, ids prefixed by the directory
/// index when more than one directory is given.
pub fn load_sources(dirs: &[PathBuf], proj: &ProjectionConfig) -> Result<Vec<(String, RangeImage)>> {
    let mut out = Vec::new();
    for (k, dir) in dirs.iter().enumerate() {
        let files = list_scans(dir)?;
        if files.is_empty() {
            return Err(Error::config(format!("{} contains no .bin or .rimg scans", dir.display())));
        }
        for f in files {
            let id = if dirs.len() > 1 { format!("{k}:{}", scan_id(&f)) } else { scan_id(&f) };
            out.push((id, load_any(&f, proj)?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::unproject;

    #[test]
    fn sources_load_both_formats() {
        let proj = ProjectionConfig::desk();
        let dir = tempfile::tempdir().unwrap();
        let img = synth_scan(&SceneConfig::default().with_seed(1), &proj).unwrap();
        save_range_image(&img, &dir.path().join("a.rimg")).unwrap();
        write_scan(&dir.path().join("b.bin"), &unproject(&img)).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let loaded = load_sources(&[dir.path().to_path_buf()], &proj).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "a");
        assert_eq!(loaded[0].1, img);
        assert_eq!(loaded[1].1.valid, img.valid);
    }

    #[test]
    fn empty_or_missing_dirs_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_sources(&[dir.path().to_path_buf()], &ProjectionConfig::desk()).is_err());
        assert!(matches!(
            load_sources(&[dir.path().join("nope")], &ProjectionConfig::desk()),
            Err(Error::Io { .. })
        ));
    }
}

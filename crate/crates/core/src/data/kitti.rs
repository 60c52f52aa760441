//! KITTI Velodyne `.bin` scans: little-endian `f32` quadruples
//! `(x, y, z, reflectance)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

const RECORD: usize = 16;

/// A parsed scan plus the number of records dropped for non-finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScan {
    pub cloud: PointCloud,
    pub skipped: usize,
}

pub fn parse_scan(bytes: &[u8]) -> Result<LoadedScan> {
    if bytes.len() % RECORD != 0 {
        return Err(Error::Parse {
            offset: (bytes.len() / RECORD * RECORD) as u64,
            message: format!("{} trailing bytes after the last 16-byte record", bytes.len() % RECORD),
        });
    }
    let n = bytes.len() / RECORD;
    let mut points = Vec::with_capacity(n);
    let mut reflectance = Vec::with_capacity(n);
    let mut skipped = 0;
    for rec in bytes.chunks_exact(RECORD) {
        let v: [f32; 4] = std::array::from_fn(|k| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()));
        if v.iter().any(|x| !x.is_finite()) {
            skipped += 1;
            continue;
        }
        points.push([v[0], v[1], v[2]]);
        reflectance.push(v[3].clamp(0.0, 1.0));
    }
    Ok(LoadedScan {
        cloud: PointCloud::new(points, reflectance)?,
        skipped,
    })
}

pub fn load_scan(path: &Path) -> Result<LoadedScan> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_scan(&bytes)
}

pub fn scan_bytes(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD);
    for (p, r) in cloud.points.iter().zip(&cloud.reflectance) {
        for v in [p[0], p[1], p[2], *r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, scan_bytes(cloud)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(v: [f32; 4]) -> Vec<u8> {
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    #[test]
    fn one_record() {
        let s = parse_scan(&record([1.0, 2.0, 3.0, 0.5])).unwrap();
        assert_eq!(s.cloud.points, vec![[1.0, 2.0, 3.0]]);
        assert_eq!(s.cloud.reflectance, vec![0.5]);
        assert_eq!(s.skipped, 0);
    }

    #[test]
    fn empty_file_is_an_empty_cloud() {
        assert!(parse_scan(&[]).unwrap().cloud.is_empty());
    }

    #[test]
    fn seventeen_bytes_fail_at_offset_sixteen() {
        let mut b = record([1.0, 2.0, 3.0, 0.5]);
        b.push(0);
        match parse_scan(&b) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_points_are_skipped_and_reflectance_clamped() {
        let mut b = record([f32::NAN, 0.0, 0.0, 0.1]);
        b.extend(record([1.0, 1.0, 1.0, 7.0]));
        b.extend(record([1.0, f32::INFINITY, 1.0, 0.1]));
        let s = parse_scan(&b).unwrap();
        assert_eq!(s.skipped, 2);
        assert_eq!(s.cloud.reflectance, vec![1.0]);
    }

    #[test]
    fn write_then_load_is_bit_exact() {
        let cloud = PointCloud::new(
            vec![[1.5, -2.25, 0.1], [f32::MIN_POSITIVE, 3e7, -0.0]],
            vec![0.25, 1.0],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_scan(&path, &cloud).unwrap();
        let back = load_scan(&path).unwrap().cloud;
        for (a, b) in cloud.points.iter().flatten().zip(back.points.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(load_scan(Path::new("/nonexistent/x.bin")), Err(Error::Io { .. })));
    }
}

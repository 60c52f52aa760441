//! Binary range-image container.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 8 | magic `RDRIMG\0\x01` |
//! | 4 | version `u32` = 1 |
//! | 4 + 4 | height, width `u32` |
//! | 6 x 8 | fov_up, fov_down, d_max, reflectance_min, reflectance_max, return_threshold `f64` |
//! | 4HW | depth plane `f32`, row-major |
//! | 4HW | reflectance plane `f32` |
//! | HW | validity `u8` (0 or 1) |

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{ProjectionConfig, RangeImage};

pub const MAGIC: &[u8; 8] = b"RDRIMG\0\x01";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 8 + 4 + 8 + 6 * 8;

fn fail(message: impl Into<String>) -> Error {
    Error::Format {
        what: "range image",
        message: message.into(),
    }
}

pub fn range_image_bytes(img: &RangeImage) -> Vec<u8> {
    let c = &img.config;
    let mut out = Vec::with_capacity(HEADER_BYTES + 9 * c.pixels());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(c.height as u32).to_le_bytes());
    out.extend_from_slice(&(c.width as u32).to_le_bytes());
    for v in [c.fov_up, c.fov_down, c.d_max, c.reflectance_min, c.reflectance_max, c.return_threshold] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in img.depth.iter().chain(&img.reflectance) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(img.valid.iter().map(|&v| v as u8));
    out
}

pub fn parse_range_image(bytes: &[u8]) -> Result<RangeImage> {
    if bytes.len() < HEADER_BYTES {
        return Err(fail(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(fail("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let (h, w) = (u32_at(12) as usize, u32_at(16) as usize);
    let config = ProjectionConfig {
        height: h,
        width: w,
        fov_up: f64_at(20),
        fov_down: f64_at(28),
        d_max: f64_at(36),
        reflectance_min: f64_at(44),
        reflectance_max: f64_at(52),
        return_threshold: f64_at(60),
    };
    config.validate().map_err(|e| fail(e.to_string()))?;
    let n = h.checked_mul(w).ok_or_else(|| fail("image size overflows"))?;
    let expected = n.checked_mul(9).and_then(|b| b.checked_add(HEADER_BYTES)).ok_or_else(|| fail("image size overflows"))?;
    if bytes.len() != expected {
        return Err(fail(format!("expected {expected} bytes for {h}x{w}, found {}", bytes.len())));
    }
    let plane = |start: usize| -> Vec<f32> {
        bytes[start..start + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let depth = plane(HEADER_BYTES);
    let reflectance = plane(HEADER_BYTES + 4 * n);
    let mut valid = Vec::with_capacity(n);
    for (i, &b) in bytes[HEADER_BYTES + 8 * n..].iter().enumerate() {
        match b {
            0 => valid.push(false),
            1 => valid.push(true),
            _ => return Err(fail(format!("validity byte {i} is {b}"))),
        }
    }
    let img = RangeImage {
        config,
        depth,
        reflectance,
        valid,
    };
    img.validate().map_err(|e| fail(e.to_string()))?;
    Ok(img)
}

pub fn save_range_image(img: &RangeImage, path: &Path) -> Result<()> {
    img.validate()?;
    std::fs::write(path, range_image_bytes(img)).map_err(|e| Error::io(path, e))
}

pub fn load_range_image(path: &Path) -> Result<RangeImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_range_image(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_scan, SceneConfig};

    fn sample() -> RangeImage {
        synth_scan(&SceneConfig::default().with_seed(5), &ProjectionConfig::desk()).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact_and_sized() {
        let img = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.rimg");
        save_range_image(&img, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES + 32 * 256 * 9);
        assert_eq!(HEADER_BYTES, 68);
        let back = load_range_image(&p).unwrap();
        assert_eq!(range_image_bytes(&back), bytes);
        for (a, b) in img.depth.iter().zip(&back.depth) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, img);
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = range_image_bytes(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_range_image(&bad), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(parse_range_image(&bad).is_err());
        assert!(parse_range_image(&bytes[..bytes.len() - 1]).is_err());
        assert!(parse_range_image(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() = 7;
        assert!(parse_range_image(&bad).is_err());
        let mut bad = bytes;
        bad[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(parse_range_image(&bad).is_err());
    }
}

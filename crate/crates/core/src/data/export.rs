//! Grayscale PNG exports for figures.

use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::geometry::RangeImage;
use crate::mask::Mask;

fn to_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * u16::MAX as f32).round() as u16
}

/// Normalized depth as 16-bit gray; invalid pixels are black.
pub fn depth_gray16(img: &RangeImage) -> Vec<u16> {
    img.depth.iter().map(|&v| to_u16(v)).collect()
}

pub fn reflectance_gray16(img: &RangeImage) -> Vec<u16> {
    img.reflectance.iter().map(|&v| to_u16(v)).collect()
}

fn save_png16(path: &Path, width: usize, height: usize, data: Vec<u16>) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(width as u32, height as u32, data)
        .ok_or_else(|| Error::shape("pixel buffer does not match the image size"))?;
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

pub fn export_depth_png(img: &RangeImage, path: &Path) -> Result<()> {
    save_png16(path, img.width(), img.height(), depth_gray16(img))
}

pub fn export_reflectance_png(img: &RangeImage, path: &Path) -> Result<()> {
    save_png16(path, img.width(), img.height(), reflectance_gray16(img))
}

/// Known pixels white, unknown black, 8-bit.
pub fn export_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width as u32, mask.height as u32, mask.to_gray8()).ok_or_else(|| Error::shape("mask size"))?;
    buf.save(path).map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

//! PNG and raw float raster I/O.

use std::fs;
use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an H x W x 3 raster in [0, 1] as 8-bit RGB.
pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = rgb.iter().map(|&v| quantize(v)).collect();
    let img = RgbImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::Dataset(format!("{}: raster size mismatch", path.display())))?;
    img.save(path).map_err(|e| Error::image(path, e))
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, values.to_vec())
        .ok_or_else(|| Error::Dataset(format!("{}: raster size mismatch", path.display())))?;
    img.save(path).map_err(|e| Error::image(path, e))
}

pub fn write_unit_gray_png(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    write_gray_png(path, width, height, &bytes)
}

fn check_dims(path: &Path, got: (u32, u32), width: usize, height: usize) -> Result<()> {
    if got != (width as u32, height as u32) {
        return Err(Error::Dataset(format!(
            "{}: expected {width}x{height}, found {}x{}",
            path.display(),
            got.0,
            got.1
        )));
    }
    Ok(())
}

pub fn read_rgb_png(path: &Path, width: usize, height: usize) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.into_rgb8();
    check_dims(path, img.dimensions(), width, height)?;
    Ok(img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect())
}

pub fn read_gray_png(path: &Path, width: usize, height: usize) -> Result<Vec<u8>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.into_luma8();
    check_dims(path, img.dimensions(), width, height)?;
    Ok(img.into_raw())
}

/// Row-major little-endian float32 values with no header.
pub fn write_f32_raster(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_raster(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Dataset(format!("{}: length {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

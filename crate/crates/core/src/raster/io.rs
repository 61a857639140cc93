//! `.fras` raster files: `"FRAS"`, version byte, u32 LE height, u32 LE width,
//! f64 LE pitch, then `height * width` f32 LE values in row-major order.

use std::fs;
use std::path::Path;

use super::FloatRaster;
use crate::error::{Error, FormatError, Result};
use crate::scalar::Real;

pub const FRAS_MAGIC: [u8; 4] = *b"FRAS";
pub const FRAS_VERSION: u8 = 1;
const HEADER_LEN: usize = 21;

pub fn encode_raster<T: Real>(img: &FloatRaster<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * img.len());
    out.extend_from_slice(&FRAS_MAGIC);
    out.push(FRAS_VERSION);
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&img.pitch().to_le_bytes());
    for &v in img.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_raster<T: Real>(bytes: &[u8]) -> Result<FloatRaster<T>> {
    if bytes.len() < 4 || bytes[..4] != FRAS_MAGIC {
        return Err(FormatError::BadMagic {
            expected: FRAS_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        }
        .into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            needed: HEADER_LEN,
            found: bytes.len(),
        }
        .into());
    }
    if bytes[4] != FRAS_VERSION {
        return Err(FormatError::Version(bytes[4]).into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let height = u32_at(5);
    let width = u32_at(9);
    let pitch = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
    let count = height
        .checked_mul(width)
        .ok_or_else(|| FormatError::Malformed(format!("dimensions {height}x{width} overflow")))?;
    let needed = HEADER_LEN + 4 * count;
    if bytes.len() < needed {
        return Err(FormatError::Truncated {
            needed,
            found: bytes.len(),
        }
        .into());
    }
    if bytes.len() > needed {
        return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - needed)).into());
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite(i).into());
        }
        data.push(T::of(v as f64));
    }
    FloatRaster::new(height, width, pitch, data)
}

pub fn write_raster<T: Real>(img: &FloatRaster<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_raster(img))
}

pub fn read_raster<T: Real>(path: impl AsRef<Path>) -> Result<FloatRaster<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_raster(&bytes)
}

/// Writes `bytes` to a hidden sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| crate::error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// RGB to luminance weights used for colour PNG input.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Reads an 8/16-bit grayscale or colour PNG as luminance in `[0, 1]`.
pub fn read_png_luminance(path: impl AsRef<Path>, pitch: f64) -> Result<FloatRaster<f64>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match &img {
        image::DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        image::DynamicImage::ImageLuma16(g) => g.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| (0..3).map(|k| LUMA_WEIGHTS[k] * p.0[k] as f64).sum())
            .collect(),
    };
    FloatRaster::new(h, w, pitch, data)
}

//! Binary PGM (`P5`) and grayscale PFM (`Pf`) images.
//!
//! PGM samples are one byte for `maxval < 256` and two big-endian bytes
//! otherwise. PFM data is written little-endian (scale `-1.0`) with rows stored
//! bottom-to-top; both byte orders are accepted on read.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage<T> {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub data: Vec<T>,
}

impl<T: Copy> GrayImage<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::invalid(format!(
                "image {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }
}

pub fn encode_pgm(img: &GrayImage<u16>, maxval: u16) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::invalid("PGM maxval must be >= 1"));
    }
    if let Some(v) = img.data.iter().find(|&&v| v > maxval) {
        return Err(Error::invalid(format!("PGM sample {v} exceeds maxval {maxval}")));
    }
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, maxval).into_bytes();
    if maxval < 256 {
        out.extend(img.data.iter().map(|&v| v as u8));
    } else {
        for &v in &img.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    Ok(out)
}

/// Parses whitespace-separated header tokens (with `#` comments) and returns
/// them plus the offset of the first data byte.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return None;
    }
    Some((tokens, i + 1))
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(GrayImage<u16>, u16)> {
    let bad = |reason: &str| Error::format(path, reason);
    let (tok, offset) = header_tokens(bytes, 4).ok_or_else(|| bad("truncated PGM header"))?;
    if tok[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric PGM header field"));
    let (w, h, maxval) = (parse(&tok[1])?, parse(&tok[2])?, parse(&tok[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("PGM dimensions or maxval out of range"));
    }
    let wide = maxval >= 256;
    let need = w * h * if wide { 2 } else { 1 };
    let raster = bytes.get(offset..offset + need).ok_or_else(|| bad("truncated PGM raster"))?;
    let data = if wide {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    Ok((GrayImage::new(w, h, data)?, maxval as u16))
}

pub fn encode_pfm(img: &GrayImage<f32>) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    for row in img.data.chunks_exact(img.width).rev() {
        for &v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<GrayImage<f32>> {
    let bad = |reason: &str| Error::format(path, reason);
    let (tok, offset) = header_tokens(bytes, 4).ok_or_else(|| bad("truncated PFM header"))?;
    if tok[0] != "Pf" {
        return Err(bad("not a grayscale PFM (Pf)"));
    }
    let w: usize = tok[1].parse().map_err(|_| bad("bad PFM width"))?;
    let h: usize = tok[2].parse().map_err(|_| bad("bad PFM height"))?;
    let scale: f64 = tok[3].parse().map_err(|_| bad("bad PFM scale"))?;
    if w == 0 || h == 0 || scale == 0.0 {
        return Err(bad("PFM dimensions or scale out of range"));
    }
    let little = scale < 0.0;
    let raster = bytes
        .get(offset..offset + w * h * 4)
        .ok_or_else(|| bad("truncated PFM raster"))?;
    let mut data = vec![0.0f32; w * h];
    for (r, row) in raster.chunks_exact(w * 4).enumerate() {
        let dst = &mut data[(h - 1 - r) * w..(h - r) * w];
        for (d, c) in dst.iter_mut().zip(row.chunks_exact(4)) {
            let b = [c[0], c[1], c[2], c[3]];
            *d = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    GrayImage::new(w, h, data)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, img: &GrayImage<u16>, maxval: u16) -> Result<()> {
    write_bytes(path, &encode_pgm(img, maxval)?)
}

pub fn read_pgm(path: &Path) -> Result<(GrayImage<u16>, u16)> {
    decode_pgm(&read_bytes(path)?, path)
}

pub fn write_pfm(path: &Path, img: &GrayImage<f32>) -> Result<()> {
    write_bytes(path, &encode_pfm(img))
}

pub fn read_pfm(path: &Path) -> Result<GrayImage<f32>> {
    decode_pfm(&read_bytes(path)?, path)
}

/// Maps `[0, 1]` intensities to 16-bit samples.
pub fn quantize_unit(values: &[f32]) -> Vec<u16> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
        .collect()
}

/// Linear map of `[lo, hi]` onto `[0, 65535]` (clamped).
pub fn quantize_range(values: &[f32], lo: f32, hi: f32) -> Vec<u16> {
    let span = (hi - lo).max(f32::MIN_POSITIVE) as f64;
    values
        .iter()
        .map(|&v| (((v - lo) as f64 / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect()
}

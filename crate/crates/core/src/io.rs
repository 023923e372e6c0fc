//! File formats: single-channel PFM, 16-bit PNG depth, 8-bit PNG masks and
//! RGB images.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DepthMap, DisparityMap, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthFormat {
    Pfm,
    Png16,
}

impl DepthFormat {
    /// Guesses the format from the file extension (`.pfm` or `.png`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path
            .extension()?
            .to_str()?
            .to_ascii_lowercase()
            .as_str()
        {
            "pfm" => Some(DepthFormat::Pfm),
            "png" => Some(DepthFormat::Png16),
            _ => None,
        }
    }
}

/// Decoded single-channel PFM payload, rows top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Parses a grayscale (`Pf`) PFM. A negative scale line means little-endian
/// samples, a positive one big-endian. Rows are stored bottom to top.
pub fn parse_pfm(bytes: &[u8]) -> Result<PfmImage> {
    let bad = |m: &str| Error::format("PFM", m);
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?;
        tokens.push(tok);
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing header terminator"));
    }
    pos += 1;

    match tokens[0] {
        "Pf" => {}
        "PF" => return Err(bad("colour PFM (PF) is not a depth map")),
        other => return Err(bad(&format!("unknown magic {other:?}"))),
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    if !scale.is_finite() || scale == 0.0 {
        return Err(bad("scale must be finite and non-zero"));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| bad("dimension overflow"))?;
    let nbytes = n.checked_mul(4).ok_or_else(|| bad("dimension overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() != nbytes {
        return Err(bad(&format!(
            "expected {nbytes} sample bytes, found {}",
            payload.len()
        )));
    }
    let little = scale < 0.0;
    let mut data = vec![0f32; n];
    for (row, chunk) in payload.chunks_exact(width * 4).enumerate() {
        let y = height - 1 - row;
        for (x, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            data[y * width + x] = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Ok(PfmImage {
        width,
        height,
        data,
    })
}

/// Encodes a grayscale little-endian PFM.
pub fn encode_pfm(width: usize, height: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), width * height, "PFM payload size");
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    for y in (0..height).rev() {
        for v in &data[y * width..(y + 1) * width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decode_image(path: &Path) -> Result<DynamicImage> {
    let bytes = read(path)?;
    image::load_from_memory(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn encode_png(img: &DynamicImage, path: &Path) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf.into_inner())
}

/// Loads a depth map.
///
/// PFM samples are taken as depth directly (non-finite or non-positive
/// samples are invalid). For 16-bit PNG a code `v` maps to `v * scale` and
/// code 0 marks an invalid pixel; `scale` is ignored for PFM.
pub fn load_depth(path: &Path, format: DepthFormat, scale: f64) -> Result<DepthMap> {
    match format {
        DepthFormat::Pfm => {
            let pfm = parse_pfm(&read(path)?)?;
            DepthMap::from_values(
                pfm.width,
                pfm.height,
                pfm.data.into_iter().map(f64::from).collect(),
            )
        }
        DepthFormat::Png16 => {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "png16 depth scale must be positive, got {scale}"
                )));
            }
            let img = match decode_image(path)? {
                DynamicImage::ImageLuma16(img) => img,
                other => {
                    return Err(Error::format(
                        "png16",
                        format!("expected 16-bit grayscale, found {:?}", other.color()),
                    ))
                }
            };
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut values = Vec::with_capacity(w * h);
            let mut valid = Vec::with_capacity(w * h);
            for p in img.pixels() {
                let code = p.0[0];
                valid.push(code != 0);
                values.push(code as f64 * scale);
            }
            DepthMap::new(w, h, values, valid)
        }
    }
}

/// Writes depth as PFM; invalid pixels are stored as NaN. Samples are single
/// precision.
pub fn save_depth_pfm(depth: &DepthMap, path: &Path) -> Result<()> {
    let data: Vec<f32> = depth
        .values()
        .iter()
        .zip(depth.valid())
        .map(|(v, ok)| if *ok { *v as f32 } else { f32::NAN })
        .collect();
    write(path, &encode_pfm(depth.width(), depth.height(), &data))
}

/// Writes depth as 16-bit PNG codes `round(depth / scale)`; invalid pixels
/// become code 0.
pub fn save_depth_png16(depth: &DepthMap, path: &Path, scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "png16 depth scale must be positive, got {scale}"
        )));
    }
    let (w, h) = depth.dims();
    let mut codes = Vec::with_capacity(w * h);
    for (v, ok) in depth.values().iter().zip(depth.valid()) {
        if !ok {
            codes.push(0u16);
            continue;
        }
        let code = (v / scale).round();
        if !(1.0..=u16::MAX as f64).contains(&code) {
            return Err(Error::InvalidParameter(format!(
                "depth {v} is not representable as a png16 code at scale {scale}"
            )));
        }
        codes.push(code as u16);
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, codes).expect("buffer size matches");
    write(path, &encode_png(&DynamicImage::ImageLuma16(buf), path)?)
}

/// Loads a disparity map stored as PFM; non-finite or negative samples are
/// invalid.
pub fn load_disparity_pfm(path: &Path) -> Result<DisparityMap> {
    let pfm = parse_pfm(&read(path)?)?;
    DisparityMap::from_values(
        pfm.width,
        pfm.height,
        pfm.data.into_iter().map(f64::from).collect(),
    )
}

pub fn save_disparity_pfm(disp: &DisparityMap, path: &Path) -> Result<()> {
    let data: Vec<f32> = disp
        .values()
        .iter()
        .zip(disp.valid())
        .map(|(v, ok)| if *ok { *v as f32 } else { f32::NAN })
        .collect();
    write(path, &encode_pfm(disp.width(), disp.height(), &data))
}

/// Encodes a mask as an 8-bit grayscale PNG with 0 for unset and 255 for set.
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, bytes)
            .expect("buffer size matches");
    encode_png(&DynamicImage::ImageLuma8(buf), Path::new("<mask>"))
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    write(path, &encode_mask_png(mask)?)
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = match decode_image(path)? {
        DynamicImage::ImageLuma8(img) => img,
        other => {
            return Err(Error::format(
                "mask PNG",
                format!("expected 8-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bits = img
        .into_raw()
        .into_iter()
        .map(|v| match v {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(Error::format(
                "mask PNG",
                format!("pixel value {other} is neither 0 nor 255"),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    BinaryMask::new(w, h, bits)
}

/// Loads any PNG/JPEG as 8-bit RGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = decode_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    RgbImage::new(w, h, img.into_raw())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
            .expect("buffer size matches");
    write(path, &encode_png(&DynamicImage::ImageRgb8(buf), path)?)
}

//! Readers and writers for PFM disparity maps, 8-bit masks and RGB images.
//!
//! PFM layout: three ASCII header tokens (`Pf`/`PF`, `width height`, `scale`)
//! each followed by a single whitespace byte, then 32-bit floats stored
//! bottom row first. A negative scale means little-endian payload. `+inf`
//! marks pixels without ground truth.

use std::io::Cursor;

use image::{ColorType, DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{contract, Error, Result};
use crate::fields::{DisparityMap, FeatureMap, OcclusionMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfmHeader {
    /// 1 for `Pf`, 3 for `PF`.
    pub bands: usize,
    pub width: usize,
    pub height: usize,
    pub scale: f64,
}

impl PfmHeader {
    pub fn little_endian(&self) -> bool {
        self.scale < 0.0
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

// Reads one whitespace-terminated token starting at `*pos`, consuming the
// single terminating whitespace byte.
fn token<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a str> {
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos == start || *pos >= bytes.len() {
        return Err(parse_err(start, format!("expected {what}")));
    }
    let tok = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| parse_err(start, format!("{what} is not ASCII")))?;
    *pos += 1;
    Ok(tok)
}

fn skip_space(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
}

/// Parses the header; returns it with the offset of the first payload byte.
pub fn read_pfm_header(bytes: &[u8]) -> Result<(PfmHeader, usize)> {
    let mut pos = 0;
    let bands = match token(bytes, &mut pos, "PFM magic")? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(parse_err(0, format!("bad PFM magic {other:?}"))),
    };
    skip_space(bytes, &mut pos);
    let at = pos;
    let width: usize = token(bytes, &mut pos, "width")?
        .parse()
        .map_err(|_| parse_err(at, "width is not an integer"))?;
    skip_space(bytes, &mut pos);
    let at = pos;
    let height: usize = token(bytes, &mut pos, "height")?
        .parse()
        .map_err(|_| parse_err(at, "height is not an integer"))?;
    skip_space(bytes, &mut pos);
    let at = pos;
    let scale: f64 = token(bytes, &mut pos, "scale")?
        .parse()
        .map_err(|_| parse_err(at, "scale is not a number"))?;
    if width == 0 || height == 0 {
        return Err(parse_err(
            at,
            format!("image must be at least 1x1, got {width}x{height}"),
        ));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(parse_err(at, format!("scale must be finite and nonzero, got {scale}")));
    }
    Ok((
        PfmHeader {
            bands,
            width,
            height,
            scale,
        },
        pos,
    ))
}

/// Decodes every band, top row first, with `|scale|` applied when it is not 1.
/// Band samples are interleaved per pixel as in the file.
pub fn read_pfm_raw(bytes: &[u8]) -> Result<(PfmHeader, Vec<f64>)> {
    let (header, start) = read_pfm_header(bytes)?;
    let row_len = header.width * header.bands;
    let needed = row_len
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| parse_err(start, "dimensions overflow"))?;
    let payload = &bytes[start..];
    if payload.len() < needed {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: need {needed} bytes, found {}", payload.len()),
        ));
    }
    let mult = header.scale.abs();
    let decode = |c: &[u8]| {
        let raw: [u8; 4] = c.try_into().unwrap();
        let v = if header.little_endian() {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        } as f64;
        if mult != 1.0 {
            v * mult
        } else {
            v
        }
    };
    let mut values = Vec::with_capacity(row_len * header.height);
    for file_row in (0..header.height).rev() {
        let row = &payload[file_row * row_len * 4..(file_row + 1) * row_len * 4];
        values.extend(row.chunks_exact(4).map(decode));
    }
    Ok((header, values))
}

/// Reads a single-band PFM. Non-finite and negative entries become invalid.
pub fn read_pfm(bytes: &[u8]) -> Result<DisparityMap> {
    let (header, values) = read_pfm_raw(bytes)?;
    if header.bands != 1 {
        return Err(Error::Format(
            "disparity maps must be single-band (Pf) PFM files".into(),
        ));
    }
    DisparityMap::from_values(header.width, header.height, values)
}

/// Little-endian single-band PFM of arbitrary values; entries where `valid`
/// is false are written as `+inf`.
pub fn write_pfm_values(width: usize, height: usize, values: &[f64], valid: &[bool]) -> Result<Vec<u8>> {
    if values.len() != width * height || valid.len() != values.len() {
        return Err(contract("PFM values and mask must cover width * height pixels"));
    }
    let header = format!("Pf\n{width} {height}\n-1\n");
    let mut out = Vec::with_capacity(header.len() + 4 * values.len());
    out.extend_from_slice(header.as_bytes());
    for y in (0..height).rev() {
        for x in 0..width {
            let i = y * width + x;
            let v = if valid[i] { values[i] as f32 } else { f32::INFINITY };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_pfm(d: &DisparityMap) -> Vec<u8> {
    write_pfm_values(d.width(), d.height(), d.values(), d.valid()).expect("disparity map dimensions are consistent")
}

/// Decodes an 8-bit PNG or PGM into a 3-channel map in `[0, 1]`; grayscale
/// inputs are replicated across the channels.
pub fn read_image(bytes: &[u8]) -> Result<FeatureMap> {
    let img = image::load_from_memory(bytes)?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {}
        other => return Err(Error::Format(format!("unsupported pixel format {other:?}; 8-bit only"))),
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    FeatureMap::from_fn(3, w, h, |c, x, y| rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0)
}

/// Linear 0..255 levels, rounding half up; undefined pixels map to 0.
pub fn mask_levels(o: &OcclusionMap) -> Vec<u8> {
    o.values
        .iter()
        .zip(&o.valid)
        .map(|(v, ok)| {
            if *ok {
                (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

fn encode_png(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// 8-bit grayscale PNG: 0 visible, 255 occluded.
pub fn write_mask(o: &OcclusionMap) -> Result<Vec<u8>> {
    let img = GrayImage::from_raw(o.width as u32, o.height as u32, mask_levels(o))
        .ok_or_else(|| contract("occlusion map dimensions are inconsistent"))?;
    encode_png(DynamicImage::ImageLuma8(img))
}

/// 8-bit RGB PNG of a 3-channel map in `[0, 1]` (values are clamped).
pub fn write_rgb(image: &FeatureMap) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(contract("RGB export needs a 3-channel map"));
    }
    let (w, h) = (image.width(), image.height());
    let mut raw = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                raw.push((image.get(c, x, y).clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8);
            }
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, raw).ok_or_else(|| contract("bad image size"))?;
    encode_png(DynamicImage::ImageRgb8(img))
}

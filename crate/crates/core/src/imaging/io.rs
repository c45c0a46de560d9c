//! File formats: Middlebury `.flo`, PFM, 8/16-bit PNG frames and binary mask PNGs,
//! plus numbered-sequence discovery.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{DepthMap, DisocclusionMask, FlowField, FrameBuffer};
use crate::error::{Error, Result};

const FLO_MAGIC: &[u8; 4] = b"PIEH";

// ---------------------------------------------------------------------------
// .flo
// ---------------------------------------------------------------------------

pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::TruncatedFile {
            path: path.into(),
            detail: format!("{} byte header, need 12", bytes.len()),
        });
    }
    if &bytes[..4] != FLO_MAGIC {
        return Err(Error::BadMagic { path: path.into(), expected: "PIEH" });
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            detail: format!("flow dimensions {width}x{height}"),
        });
    }
    let (w, h) = (width as usize, height as usize);
    let need = w * h * 2 * 4;
    let payload = &bytes[12..];
    if payload.len() < need {
        return Err(Error::TruncatedFile {
            path: path.into(),
            detail: format!("payload {} bytes, need {need}", payload.len()),
        });
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for (i, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(Error::NonFiniteValues { path: path.into(), index: i });
        }
        if i % 2 == 0 {
            u.push(x);
        } else {
            v.push(x);
        }
    }
    FlowField::new(w, h, u, v)
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let n = flow.width() * flow.height();
    let mut out = Vec::with_capacity(12 + n * 8);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes, path)
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Decodes a PFM image. Rows are stored bottom-to-top on disk and returned
/// top-to-bottom. Samples are multiplied by `|scale|`.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<FrameBuffer> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Option<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let truncated = |what: &str| Error::TruncatedFile { path: path.into(), detail: format!("missing {what}") };

    let magic = token(bytes).ok_or_else(|| truncated("header"))?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(Error::BadMagic { path: path.into(), expected: "PF or Pf" }),
    };
    let bad = |detail: String| Error::UnsupportedFormat { path: path.into(), detail };
    let width: usize = token(bytes)
        .ok_or_else(|| truncated("width"))?
        .parse()
        .map_err(|_| bad("unparseable width".into()))?;
    let height: usize = token(bytes)
        .ok_or_else(|| truncated("height"))?
        .parse()
        .map_err(|_| bad("unparseable height".into()))?;
    let scale: f32 = token(bytes)
        .ok_or_else(|| truncated("scale"))?
        .parse()
        .map_err(|_| bad("unparseable scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad(format!("scale {scale}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let endian = if scale < 0.0 { Endian::Little } else { Endian::Big };
    let mag = scale.abs();

    let n = width * height * channels;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < n * 4 {
        return Err(Error::TruncatedFile {
            path: path.into(),
            detail: format!("raster {} bytes, need {}", raster.len(), n * 4),
        });
    }
    let mut data = vec![0f32; n];
    let row = width * channels;
    for (i, chunk) in raster[..n * 4].chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let mut x = match endian {
            Endian::Little => f32::from_le_bytes(raw),
            Endian::Big => f32::from_be_bytes(raw),
        };
        if !x.is_finite() {
            return Err(Error::NonFiniteValues { path: path.into(), index: i });
        }
        if mag != 1.0 {
            x *= mag;
        }
        let (r, c) = (i / row, i % row);
        data[(height - 1 - r) * row + c] = x;
    }
    FrameBuffer::new(width, height, channels, data)
}

pub fn encode_pfm(frame: &FrameBuffer, endian: Endian) -> Vec<u8> {
    let magic = if frame.channels() == 1 { "Pf" } else { "PF" };
    let scale = match endian {
        Endian::Little => "-1.0",
        Endian::Big => "1.0",
    };
    let mut out = format!("{magic}\n{} {}\n{scale}\n", frame.width(), frame.height()).into_bytes();
    let row = frame.width() * frame.channels();
    for r in (0..frame.height()).rev() {
        for &x in &frame.data()[r * row..(r + 1) * row] {
            match endian {
                Endian::Little => out.extend_from_slice(&x.to_le_bytes()),
                Endian::Big => out.extend_from_slice(&x.to_be_bytes()),
            }
        }
    }
    out
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<FrameBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

pub fn write_pfm(path: impl AsRef<Path>, frame: &FrameBuffer, endian: Endian) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(frame, endian)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Depth
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthFormat {
    Pfm,
    /// 16-bit grayscale PNG; depth = code * scale.
    Png16 { scale: f32 },
}

/// Loads a raw depth map. With `inverse` set the file is read as inverse depth
/// and reciprocated. Zero or negative values are rejected.
pub fn read_depth(path: impl AsRef<Path>, format: DepthFormat, inverse: bool) -> Result<DepthMap> {
    let path = path.as_ref();
    let (w, h, mut data) = match format {
        DepthFormat::Pfm => {
            let f = read_pfm(path)?;
            if f.channels() != 1 {
                return Err(Error::UnsupportedFormat {
                    path: path.into(),
                    detail: "depth PFM must be single-channel (Pf)".into(),
                });
            }
            (f.width(), f.height(), f.into_data())
        }
        DepthFormat::Png16 { scale } => {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::InvalidArgument(format!("png16 depth scale {scale}")));
            }
            let img = open_image(path)?;
            let luma = match img {
                DynamicImage::ImageLuma16(b) => b,
                other => {
                    return Err(Error::UnsupportedFormat {
                        path: path.into(),
                        detail: format!("expected 16-bit grayscale PNG, got {:?}", other.color()),
                    })
                }
            };
            let (w, h) = (luma.width() as usize, luma.height() as usize);
            let data = luma.into_raw().into_iter().map(|c| c as f32 * scale).collect();
            (w, h, data)
        }
    };
    for (i, d) in data.iter_mut().enumerate() {
        if !d.is_finite() {
            return Err(Error::NonFiniteValues { path: path.into(), index: i });
        }
        if *d <= 0.0 {
            return Err(Error::NonPositiveDepth { path: path.into(), value: *d, index: i });
        }
        if inverse {
            *d = 1.0 / *d;
        }
    }
    DepthMap::new(w, h, data)
}

pub fn write_depth_pfm(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let frame = FrameBuffer::new(depth.width(), depth.height(), 1, depth.data().to_vec())?;
    write_pfm(path, &frame, Endian::Little)
}

/// Writes depth as 16-bit codes `round(d / scale)`, saturating at the u16 range.
pub fn write_depth_png16(path: impl AsRef<Path>, depth: &DepthMap, scale: f32) -> Result<()> {
    let path = path.as_ref();
    let codes: Vec<u16> = depth
        .data()
        .iter()
        .map(|d| (d / scale).round().clamp(0.0, u16::MAX as f32) as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, codes).unwrap();
    save_image(path, &DynamicImage::ImageLuma16(buf))
}

// ---------------------------------------------------------------------------
// PNG frames and masks
// ---------------------------------------------------------------------------

fn open_image(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    image::open(path).map_err(|e| Error::Decode { path: path.into(), detail: e.to_string() })
}

fn save_image(path: &Path, img: &DynamicImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode { path: path.into(), detail: other.to_string() },
    })
}

#[inline]
fn srgb_to_linear(c: f32) -> f32 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Loads an 8- or 16-bit PNG as an RGB frame in `[0, 1]`.
pub fn read_png_frame(path: impl AsRef<Path>, srgb_decode: bool) -> Result<FrameBuffer> {
    let path = path.as_ref();
    let rgb = open_image(path)?.into_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = rgb.into_raw();
    if srgb_decode {
        data.iter_mut().for_each(|c| *c = srgb_to_linear(*c));
    }
    FrameBuffer::new(w, h, 3, data)
}

#[inline]
fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG (RGB or grayscale depending on channel count).
pub fn write_png_frame(path: impl AsRef<Path>, frame: &FrameBuffer) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = frame.data().iter().map(|&v| quantize8(v)).collect();
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let img = if frame.channels() == 3 {
        DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes).unwrap())
    } else {
        DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes).unwrap())
    };
    save_image(path, &img)
}

/// Writes a 16-bit RGB PNG.
pub fn write_png16_frame(path: impl AsRef<Path>, frame: &FrameBuffer) -> Result<()> {
    let path = path.as_ref();
    let codes: Vec<u16> =
        frame.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let img = if frame.channels() == 3 {
        DynamicImage::ImageRgb16(ImageBuffer::from_raw(w, h, codes).unwrap())
    } else {
        DynamicImage::ImageLuma16(ImageBuffer::from_raw(w, h, codes).unwrap())
    };
    save_image(path, &img)
}

/// Loads a mask PNG whose pixels are exactly 0 (disoccluded) or 255 (known).
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<DisocclusionMask> {
    let path = path.as_ref();
    let luma = open_image(path)?.into_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let mut data = Vec::with_capacity(w * h);
    for &v in luma.as_raw() {
        match v {
            0 => data.push(0),
            255 => data.push(1),
            other => return Err(Error::InvalidMask { path: path.into(), value: other as u16 }),
        }
    }
    DisocclusionMask::new(w, h, data)
}

pub fn write_mask_png(path: impl AsRef<Path>, mask: &DisocclusionMask) -> Result<()> {
    let path = path.as_ref();
    let bytes = mask.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let buf = ImageBuffer::<Luma<u8>, _>::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .unwrap();
    save_image(path, &DynamicImage::ImageLuma8(buf))
}

// ---------------------------------------------------------------------------
// Numbered sequences
// ---------------------------------------------------------------------------

/// A file-name pattern with one run of `#` standing for the zero-padded index,
/// e.g. `f###.png`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequencePattern {
    prefix: String,
    digits: usize,
    suffix: String,
}

impl SequencePattern {
    pub fn parse(pattern: &str) -> Result<Self> {
        let start = pattern
            .find('#')
            .ok_or_else(|| Error::InvalidArgument(format!("pattern {pattern:?} has no '#' run")))?;
        let digits = pattern[start..].chars().take_while(|&c| c == '#').count();
        let suffix = &pattern[start + digits..];
        if suffix.contains('#') {
            return Err(Error::InvalidArgument(format!("pattern {pattern:?} has two '#' runs")));
        }
        Ok(Self { prefix: pattern[..start].to_string(), digits, suffix: suffix.to_string() })
    }

    pub fn file_name(&self, index: usize) -> String {
        format!("{}{:0width$}{}", self.prefix, index, self.suffix, width = self.digits)
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        let mid = name.strip_prefix(&self.prefix)?.strip_suffix(&self.suffix)?;
        if mid.len() < self.digits || !mid.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        mid.parse().ok()
    }
}

/// Finds files matching `pattern` in `dir`, sorted by index. Indices must be
/// contiguous; the first gap (or an empty directory) is a `MissingIndex`.
pub fn sequence_paths(dir: impl AsRef<Path>, pattern: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let pat = SequencePattern::parse(pattern)?;
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(idx) = name.to_str().and_then(|n| pat.index_of(n)) {
            found.push((idx, entry.path()));
        }
    }
    found.sort();
    let Some(&(first, _)) = found.first() else {
        return Err(Error::MissingIndex { dir: dir.into(), index: 0 });
    };
    for (k, (idx, _)) in found.iter().enumerate() {
        if *idx != first + k {
            return Err(Error::MissingIndex { dir: dir.into(), index: first + k });
        }
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Loads a numbered PNG sequence; every frame must share the first frame's size.
pub fn read_frame_sequence(
    dir: impl AsRef<Path>,
    pattern: &str,
    srgb_decode: bool,
) -> Result<Vec<FrameBuffer>> {
    let paths = sequence_paths(dir, pattern)?;
    let mut frames: Vec<FrameBuffer> = Vec::with_capacity(paths.len());
    for p in &paths {
        let f = read_png_frame(p, srgb_decode)?;
        if let Some(first) = frames.first() {
            if f.dims() != first.dims() {
                return Err(Error::DimensionMismatch {
                    expected: first.dims(),
                    found: f.dims(),
                    context: p.display().to_string(),
                });
            }
        }
        frames.push(f);
    }
    Ok(frames)
}

pub fn read_depth_sequence(
    dir: impl AsRef<Path>,
    pattern: &str,
    format: DepthFormat,
    inverse: bool,
) -> Result<Vec<DepthMap>> {
    sequence_paths(dir, pattern)?.iter().map(|p| read_depth(p, format, inverse)).collect()
}

pub fn read_flow_sequence(dir: impl AsRef<Path>, pattern: &str) -> Result<Vec<FlowField>> {
    sequence_paths(dir, pattern)?.iter().map(read_flo).collect()
}

pub fn read_mask_sequence(dir: impl AsRef<Path>, pattern: &str) -> Result<Vec<DisocclusionMask>> {
    sequence_paths(dir, pattern)?.iter().map(read_mask_png).collect()
}

pub fn write_frame_sequence<'a>(
    dir: impl AsRef<Path>,
    pattern: &str,
    frames: impl IntoIterator<Item = &'a FrameBuffer>,
) -> Result<()> {
    let dir = dir.as_ref();
    let pat = SequencePattern::parse(pattern)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.into_iter().enumerate() {
        write_png_frame(dir.join(pat.file_name(i)), f)?;
    }
    Ok(())
}

pub fn write_mask_sequence<'a>(
    dir: impl AsRef<Path>,
    pattern: &str,
    masks: impl IntoIterator<Item = &'a DisocclusionMask>,
) -> Result<()> {
    let dir = dir.as_ref();
    let pat = SequencePattern::parse(pattern)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, m) in masks.into_iter().enumerate() {
        write_mask_png(dir.join(pat.file_name(i)), m)?;
    }
    Ok(())
}

//! Binary PPM (P6), PGM (P5), PFM and 8/16-bit PNG codecs.
//!
//! The decoders take untrusted bytes and never panic; every failure maps to a
//! distinct [`Error`] variant. The file extension selects the codec.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use super::{DepthMap, RgbImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Ppm,
    Pgm,
    Pfm,
    Png,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Format> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("ppm") => Ok(Format::Ppm),
            Some("pgm") => Ok(Format::Pgm),
            Some("pfm") => Ok(Format::Pfm),
            Some("png") => Ok(Format::Png),
            _ => Err(Error::UnsupportedFormat(format!(
                "unrecognized extension for {}",
                path.display()
            ))),
        }
    }
}

/// Maps `v` to an 8-bit code: clamp to `[0, 1]`, then round half up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

#[inline]
fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0 + 0.5).floor() as u16
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let format = Format::from_path(path)?;
    let bytes = read_file(path)?;
    match format {
        Format::Ppm => decode_ppm(&bytes),
        Format::Png => decode_png_rgb(&bytes),
        Format::Pgm | Format::Pfm => Err(Error::UnsupportedFormat(format!(
            "{} is not an RGB format",
            path.display()
        ))),
    }
}

/// Writes `img` as P6 or 8-bit PNG depending on the extension.
pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match Format::from_path(path)? {
        Format::Ppm => encode_ppm(img),
        Format::Png => encode_png_rgb(img)?,
        Format::Pgm | Format::Pfm => {
            return Err(Error::UnsupportedFormat(format!(
                "{} is not an RGB format",
                path.display()
            )))
        }
    };
    write_atomic(path, &bytes)
}

pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let format = Format::from_path(path)?;
    let bytes = read_file(path)?;
    decode_depth(format, &bytes)
}

/// Writes a depth map as 16-bit PGM, little-endian PFM or 16-bit PNG.
pub fn save_depth(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match Format::from_path(path)? {
        Format::Pgm => encode_pgm16(depth),
        Format::Pfm => encode_pfm(depth),
        Format::Png => encode_png_gray16(depth)?,
        Format::Ppm => {
            return Err(Error::UnsupportedFormat(
                "depth maps cannot be written as PPM".into(),
            ))
        }
    };
    write_atomic(path, &bytes)
}

pub fn decode_depth(format: Format, bytes: &[u8]) -> Result<DepthMap> {
    match format {
        Format::Pgm => decode_pgm(bytes),
        Format::Pfm => decode_pfm(bytes),
        Format::Png => decode_png_gray(bytes),
        Format::Ppm => {
            // A PPM is three-channel by construction; report it as such when the
            // magic confirms it.
            match bytes.get(..2) {
                Some(b"P6") | Some(b"P3") => Err(Error::MultiChannel { channels: 3 }),
                _ => Err(Error::MalformedHeader("missing P6 magic".into())),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Netpbm

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self, what: &str) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::MalformedHeader(format!("missing {what}")));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn next_uint(&mut self, what: &str) -> Result<usize> {
        let tok = self.next_token(what)?;
        if tok.len() > 9 || !tok.iter().all(u8::is_ascii_digit) {
            return Err(Error::MalformedHeader(format!(
                "invalid {what}: {:?}",
                String::from_utf8_lossy(tok)
            )));
        }
        // At most nine ASCII digits, so this cannot overflow.
        Ok(tok
            .iter()
            .fold(0usize, |acc, d| acc * 10 + usize::from(d - b'0')))
    }

    /// Consumes the single whitespace byte that separates header and raster.
    fn end_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::MalformedHeader(
                "header must end with a single whitespace byte".into(),
            )),
        }
    }
}

fn parse_netpbm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::MalformedHeader(format!(
            "missing {} magic",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut tokens = Tokens { bytes, pos: 2 };
    match tokens.bytes.get(2) {
        Some(b) if b.is_ascii_whitespace() || *b == b'#' => {}
        _ => {
            return Err(Error::MalformedHeader(
                "magic must be followed by whitespace".into(),
            ))
        }
    }
    let width = tokens.next_uint("width")?;
    let height = tokens.next_uint("height")?;
    let maxval = tokens.next_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!(
            "zero-sized image {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!(
            "maxval {maxval} out of range"
        )));
    }
    let data_start = tokens.end_header()?;
    Ok(Header {
        width,
        height,
        maxval,
        data_start,
    })
}

fn raster<'a>(
    bytes: &'a [u8],
    header: &Header,
    samples_per_pixel: usize,
    bytes_per_sample: usize,
) -> Result<&'a [u8]> {
    let expected = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(samples_per_pixel * bytes_per_sample))
        .ok_or_else(|| Error::MalformedHeader("image dimensions overflow".into()))?;
    let available = bytes.len() - header.data_start;
    if available < expected {
        return Err(Error::Truncated {
            expected,
            found: available,
        });
    }
    Ok(&bytes[header.data_start..header.data_start + expected])
}

/// Decodes a binary P6 file with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.starts_with(b"P5") {
        return Err(Error::UnsupportedFormat(
            "grayscale PGM where an RGB PPM was expected".into(),
        ));
    }
    let header = parse_netpbm_header(bytes, b"P6")?;
    if header.maxval != 255 {
        return Err(Error::UnsupportedBitDepth(format!(
            "PPM maxval {} (only 255 is supported)",
            header.maxval
        )));
    }
    let data = raster(bytes, &header, 3, 1)?;
    let samples = data.iter().map(|&b| f64::from(b) / 255.0).collect();
    RgbImage::new(header.width, header.height, samples)
}

/// Decodes a binary P5 file with maxval 255 or 65535 (big-endian samples).
pub fn decode_pgm(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.starts_with(b"P6") {
        return Err(Error::MultiChannel { channels: 3 });
    }
    let header = parse_netpbm_header(bytes, b"P5")?;
    let samples = match header.maxval {
        255 => raster(bytes, &header, 1, 1)?
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect(),
        65535 => raster(bytes, &header, 1, 2)?
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
            .collect(),
        other => {
            return Err(Error::UnsupportedBitDepth(format!(
                "PGM maxval {other} (only 255 and 65535 are supported)"
            )))
        }
    };
    DepthMap::new(header.width, header.height, samples)
}

/// Decodes a single-channel `Pf` file. Rows are stored bottom to top; the sign
/// of the scale selects byte order (negative means little-endian). Values are
/// clamped to `[0, 1]`.
pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.starts_with(b"PF") {
        return Err(Error::MultiChannel { channels: 3 });
    }
    if !bytes.starts_with(b"Pf") {
        return Err(Error::MalformedHeader("missing Pf magic".into()));
    }
    let mut tokens = Tokens { bytes, pos: 2 };
    let width = tokens.next_uint("width")?;
    let height = tokens.next_uint("height")?;
    let scale_tok = tokens.next_token("scale")?;
    let scale: f64 = std::str::from_utf8(scale_tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| {
            Error::MalformedHeader(format!(
                "invalid PFM scale {:?}",
                String::from_utf8_lossy(scale_tok)
            ))
        })?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!(
            "zero-sized image {width}x{height}"
        )));
    }
    let header = Header {
        width,
        height,
        maxval: 0,
        data_start: tokens.end_header()?,
    };
    let data = raster(bytes, &header, 1, 4)?;
    let little = scale < 0.0;
    let mut samples = vec![0.0; width * height];
    for (row_idx, row) in data.chunks_exact(width * 4).enumerate() {
        let y = height - 1 - row_idx;
        for (x, c) in row.chunks_exact(4).enumerate() {
            let raw = [c[0], c[1], c[2], c[3]];
            let v = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "non-finite PFM sample at ({x}, {y})"
                )));
            }
            samples[y * width + x] = f64::from(v).clamp(0.0, 1.0);
        }
    }
    DepthMap::new(width, height, samples)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_pgm16(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width(), depth.height()).into_bytes();
    for &v in depth.data() {
        out.extend_from_slice(&quantize16(v).to_be_bytes());
    }
    out
}

pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = depth.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(depth.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// PNG

fn png_err(e: png::DecodingError) -> Error {
    Error::MalformedHeader(format!("png: {e}"))
}

struct PngFrame {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

// Pixel budget that keeps the decoder allocation bounded on hostile headers.
const PNG_BYTE_LIMIT: usize = 256 << 20;

fn decode_png(bytes: &[u8]) -> Result<PngFrame> {
    let mut decoder = png::Decoder::new_with_limits(
        Cursor::new(bytes),
        png::Limits {
            bytes: PNG_BYTE_LIMIT,
        },
    );
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::MalformedHeader("png: image too large".into()))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(png_err)?;
    data.truncate(info.buffer_size());
    Ok(PngFrame {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn channel_count(color: png::ColorType) -> usize {
    match color {
        png::ColorType::Grayscale | png::ColorType::Indexed => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
    }
}

/// Decodes an 8-bit RGB PNG.
pub fn decode_png_rgb(bytes: &[u8]) -> Result<RgbImage> {
    let frame = decode_png(bytes)?;
    if frame.color != png::ColorType::Rgb {
        return Err(Error::UnsupportedFormat(format!(
            "png color type {:?} (expected RGB)",
            frame.color
        )));
    }
    if frame.depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth(format!(
            "png bit depth {:?} (only 8-bit RGB is supported)",
            frame.depth
        )));
    }
    let samples = frame.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    RgbImage::new(frame.width, frame.height, samples)
}

/// Decodes an 8- or 16-bit grayscale PNG as a depth map.
pub fn decode_png_gray(bytes: &[u8]) -> Result<DepthMap> {
    let frame = decode_png(bytes)?;
    if frame.color != png::ColorType::Grayscale {
        return Err(Error::MultiChannel {
            channels: channel_count(frame.color),
        });
    }
    let n = frame.width * frame.height;
    let samples: Vec<f64> = match frame.depth {
        png::BitDepth::Eight => frame.data.iter().map(|&b| f64::from(b) / 255.0).collect(),
        png::BitDepth::Sixteen => frame
            .data
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
            .collect(),
        other => {
            return Err(Error::UnsupportedBitDepth(format!(
                "png bit depth {other:?} (expected 8 or 16)"
            )))
        }
    };
    if samples.len() != n {
        return Err(Error::Truncated {
            expected: n,
            found: samples.len(),
        });
    }
    DepthMap::new(frame.width, frame.height, samples)
}

fn encode_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(depth);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::InvalidData(format!("png: {e}")))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::InvalidData(format!("png: {e}")))?;
    }
    Ok(out)
}

pub fn encode_png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let data: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    encode_png(
        img.width(),
        img.height(),
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &data,
    )
}

fn encode_png_gray16(depth: &DepthMap) -> Result<Vec<u8>> {
    let data: Vec<u8> = depth
        .data()
        .iter()
        .flat_map(|&v| quantize16(v).to_be_bytes())
        .collect();
    encode_png(
        depth.width(),
        depth.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &data,
    )
}

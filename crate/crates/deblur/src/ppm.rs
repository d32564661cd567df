//! Binary PPM (P6) reading and writing.
//!
//! Samples are mapped to `[0, 1]` by dividing by the header's maxval and
//! written back at 8 bits with rounding, so an 8-bit file survives a
//! load/save cycle byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use deblur_core::Image;

use crate::error::{with_path, CliError, CliResult};

/// Largest accepted width or height.
pub const MAX_DIM: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub width: usize,
    pub height: usize,
    pub maxval: usize,
    /// Offset of the first sample byte.
    pub data_offset: usize,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PpmError {
    #[error("not a binary PPM (expected magic P6)")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(&'static str),
    #[error("unsupported maxval {0}; only 8-bit files (maxval ≤ 255) are supported")]
    Depth(usize),
    #[error("image dimensions {0}x{1} are out of range")]
    Dimensions(usize, usize),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | b'\x0b' | b'\x0c')
}

/// Parses the header; comments (`#` to end of line) may appear between tokens.
pub fn parse_header(bytes: &[u8]) -> Result<Header, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(PpmError::BadMagic);
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(&b) if is_space(b) => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(PpmError::Header("ends before width, height and maxval")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos || pos - start > 9 {
            return Err(PpmError::Header("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos]).unwrap().parse().unwrap();
    }
    // Exactly one whitespace byte separates maxval from the samples.
    match bytes.get(pos) {
        Some(&b) if is_space(b) => pos += 1,
        _ => return Err(PpmError::Header("missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(PpmError::Depth(maxval));
    }
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(PpmError::Dimensions(width, height));
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_offset: pos,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Image, PpmError> {
    let h = parse_header(bytes)?;
    let n = h.width * h.height * 3;
    let payload = &bytes[h.data_offset..];
    if payload.len() < n {
        return Err(PpmError::Truncated {
            expected: n,
            found: payload.len(),
        });
    }
    let scale = h.maxval as f32;
    let plane = h.width * h.height;
    let mut data = vec![0.0f32; n];
    for (i, px) in payload[..n].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = (px[c] as f32 / scale).min(1.0);
        }
    }
    Ok(Image::new(h.height, h.width, data).expect("sizes agree"))
}

/// Rounds to the nearest 8-bit level after clamping to `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * 3);
    let plane = h * w;
    let d = img.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(d[c * plane + i]));
        }
    }
    out
}

pub fn load_image(path: &Path) -> CliResult<Image> {
    let bytes = fs::read(path).map_err(with_path(path))?;
    decode(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reads only as much of the file as the header needs.
pub fn read_dims(path: &Path) -> CliResult<(usize, usize)> {
    use std::io::Read;
    let mut buf = Vec::with_capacity(512);
    fs::File::open(path)
        .and_then(|f| f.take(4096).read_to_end(&mut buf))
        .map_err(with_path(path))?;
    let h = parse_header(&buf).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((h.height, h.width))
}

pub fn save_image(img: &Image, path: &Path) -> CliResult<()> {
    let mut f = fs::File::create(path).map_err(with_path(path))?;
    f.write_all(&encode(img)).map_err(with_path(path))
}

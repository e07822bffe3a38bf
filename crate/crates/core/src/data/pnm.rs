//! Binary Netpbm I/O: P6 (RGB) and P5 (grayscale) with 8-bit samples.
//!
//! Pixel values map to bytes as `round(clamp(v, 0, 1) * 255)`; reading divides
//! by the header's maxval. Masks are P5 files holding 0 or 255.

use std::path::Path;

use crate::binary::BinaryMask;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{Image, Shape};

const FORMAT: &str = "netpbm";

fn malformed(reason: impl Into<String>) -> Error {
    Error::Malformed {
        format: FORMAT,
        reason: reason.into(),
    }
}

/// Header fields and the offset of the first payload byte.
struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(malformed("missing magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    if magic != *b"P5" && magic != *b"P6" {
        return Err(malformed(format!(
            "unsupported magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and `#` comments may separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed("header ended early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| malformed("header field out of range"))?;
    }
    // Exactly one whitespace byte precedes the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed("missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(malformed(format!("maxval {maxval} unsupported (1..=255)")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        offset: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8]> {
    let needed = header.width * header.height * channels;
    let raster = &bytes[header.offset..];
    if raster.len() < needed {
        return Err(malformed(format!(
            "truncated payload: {} of {needed} bytes",
            raster.len()
        )));
    }
    Ok(&raster[..needed])
}

fn quantize<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 3-channel image as P6 or a 1-channel image as P5.
pub fn encode_image<T: Scalar>(img: &Image<T>) -> Result<Vec<u8>> {
    let (h, w) = (img.height(), img.width());
    let magic = match img.channels() {
        3 => "P6",
        1 => "P5",
        c => {
            return Err(Error::invalid(
                "channels",
                format!("{c}-channel images cannot be stored as PPM/PGM"),
            ))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for c in 0..img.channels() {
            out.push(quantize(img.data()[c * plane + p]));
        }
    }
    Ok(out)
}

pub fn decode_image<T: Scalar>(bytes: &[u8]) -> Result<Image<T>> {
    let header = parse_header(bytes)?;
    let channels = if header.magic == *b"P6" { 3 } else { 1 };
    let raster = payload(bytes, &header, channels)?;
    let plane = header.width * header.height;
    let scale = header.maxval as f64;
    let mut data = vec![T::zero(); plane * channels];
    for (i, b) in raster.iter().enumerate() {
        let (p, c) = (i / channels, i % channels);
        data[c * plane + p] = T::of(*b as f64 / scale);
    }
    Image::new(Shape::new(channels, header.height, header.width), data)
}

pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|b| if *b { 255u8 } else { 0 }));
    out
}

/// Decodes a P5 mask; samples at or above half of maxval are foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let header = parse_header(bytes)?;
    if header.magic != *b"P5" {
        return Err(malformed("masks must be P5 grayscale"));
    }
    let raster = payload(bytes, &header, 1)?;
    let cutoff = header.maxval.div_ceil(2);
    BinaryMask::new(
        header.height,
        header.width,
        raster.iter().map(|b| *b as usize >= cutoff).collect(),
    )
}

pub fn write_image<T: Scalar>(path: &Path, img: &Image<T>) -> Result<()> {
    std::fs::write(path, encode_image(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    decode_image(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    std::fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    decode_mask(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

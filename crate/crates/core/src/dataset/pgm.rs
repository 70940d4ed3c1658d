//! Binary PGM (`P5`) images. Written at 16 bits (maxval 65535, big-endian
//! samples); 8-bit files are accepted on read.

use std::path::Path;

use super::GrayImage;
use crate::error::{Error, Result};

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n65535\n", image.width(), image.height()).into_bytes();
    bytes.reserve(image.pixels().len() * 2);
    for (i, &v) in image.pixels().iter().enumerate() {
        if !(0.0..=65535.0).contains(&v) || v.fract() != 0.0 {
            return Err(Error::invalid(format!(
                "pixel {i} = {v} is not a 16-bit integer intensity"
            )));
        }
        bytes.extend_from_slice(&(v as u16).to_be_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|m| Error::format(path, m))
}

fn parse(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(format!("unsupported PGM magic '{}'", tokens[0]));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} '{s}'"));
    let width = num(&tokens[1], "width")?;
    let height = num(&tokens[2], "height")?;
    let maxval = num(&tokens[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let raster = bytes.get(pos..).unwrap_or_default();
    let expected = width * height * sample_bytes;
    if raster.len() != expected {
        return Err(format!(
            "raster has {} bytes, expected {expected} for {width}x{height}",
            raster.len()
        ));
    }
    let pixels = match sample_bytes {
        1 => raster.iter().map(|&b| f64::from(b)).collect(),
        _ => raster
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])))
            .collect(),
    };
    GrayImage::new(height, width, pixels).map_err(|e| e.to_string())
}

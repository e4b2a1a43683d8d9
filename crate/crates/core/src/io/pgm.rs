//! Binary PGM (`P5`) images. Samples are one byte when maxval < 256 and two
//! big-endian bytes otherwise.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::metrics::Mask;
use crate::tensor::{cast, Element, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major raw gray levels.
    pub samples: Vec<u16>,
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Skips whitespace and `#` comments, then reads one decimal token.
fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(&b) if is_space(b) => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        let msg = match bytes.get(start) {
            Some(&b) => format!("expected {what}, found byte 0x{b:02x}"),
            None => format!("expected {what}, found end of file"),
        };
        return Err(Error::Parse { offset: start, msg });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| Error::Parse { offset: start, msg: format!("{what} is out of range") })
}

pub fn parse(bytes: &[u8]) -> Result<Pgm> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Parse { offset: 0, msg: "not a binary PGM (magic must be P5)".into() });
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let mv_at = pos;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(Error::Parse { offset: mv_at, msg: format!("maxval {maxval} must be in 1..=65535") });
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse { offset: 2, msg: format!("image size {width}x{height} is empty") });
    }
    match bytes.get(pos) {
        Some(&b) if is_space(b) => pos += 1,
        _ => return Err(Error::Parse { offset: pos, msg: "expected one whitespace byte after maxval".into() }),
    }
    let wide = maxval > 255;
    let n = width * height;
    let need = if wide { 2 * n } else { n };
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::Parse {
            offset: pos + raster.len(),
            msg: format!("raster truncated: {need} bytes expected, {} present", raster.len()),
        });
    }
    let samples: Vec<u16> = if wide {
        raster[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        raster[..need].iter().map(|&b| b as u16).collect()
    };
    if let Some(i) = samples.iter().position(|&s| s as usize > maxval) {
        let offset = pos + if wide { 2 * i } else { i };
        return Err(Error::Parse { offset, msg: format!("sample {} exceeds maxval {maxval}", samples[i]) });
    }
    Ok(Pgm { width, height, maxval: maxval as u16, samples })
}

pub fn encode(img: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for &s in &img.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(img.samples.iter().map(|&s| s as u8));
    }
    out
}

pub fn read(path: &Path) -> Result<Pgm> {
    parse(&fs::read(path)?)
}

pub fn write(img: &Pgm, path: &Path) -> Result<()> {
    write_atomic(path, &encode(img))
}

/// Grayscale image as a `[1, H, W]` tensor scaled to `[0, 1]`.
pub fn read_image<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let p = read(path)?;
    let scale = p.maxval as f64;
    Tensor::new(vec![1, p.height, p.width], p.samples.iter().map(|&s| cast(s as f64 / scale)).collect())
}

/// Writes a `[1, H, W]` image after clamping to `[0, 1]`, at 16-bit depth.
pub fn write_image<T: Element>(img: &Tensor<T>, path: &Path) -> Result<()> {
    let &[1, h, w] = img.shape() else {
        return Err(Error::Invalid(format!("PGM images are single-channel, got shape {:?}", img.shape())));
    };
    let samples = img.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    write(&Pgm { width: w, height: h, maxval: 65535, samples }, path)
}

/// Label map with raw gray levels as labels.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let p = read(path)?;
    Mask::new(p.height, p.width, p.samples)
}

pub fn mask_to_pgm(mask: &Mask) -> Pgm {
    let max = mask.labels.iter().copied().max().unwrap_or(0);
    let maxval = if max > 255 { 65535 } else { 255 };
    Pgm { width: mask.width, height: mask.height, maxval, samples: mask.labels.clone() }
}

pub fn write_mask(mask: &Mask, path: &Path) -> Result<()> {
    write(&mask_to_pgm(mask), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_scale_to_unit_interval() {
        let p = parse(b"P5\n2 2\n255\n\x00\xff\xff\x00").unwrap();
        assert_eq!(p.samples, vec![0, 255, 255, 0]);
    }

    #[test]
    fn comments_are_skipped() {
        let p = parse(b"P5 # made by hand\n1 # w\n1\n255 \x07").unwrap();
        assert_eq!((p.width, p.height, p.samples[0]), (1, 1, 7));
    }

    #[test]
    fn bad_header_reports_offset() {
        let err = parse(b"P5\n2 x\n255\n").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 5, .. }), "{err}");
        let err = parse(b"P5\n2 2\n255\n\x00").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 12, .. }), "{err}");
    }
}

//! Binary PPM (P6) and PGM (P5) with 8-bit samples. Values in [0,1] map to
//! bytes by round(v*255) on write and byte/255 on read, so a round trip is
//! exact to within half a quantization step.

use crate::tensor::Tensor;
use std::io::{self, Write};
use std::path::Path;
use thiserror::Error;

const MAX_SIDE: usize = 1 << 15;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("expected magic {expected}, got {got:?}")]
    BadMagic { expected: &'static str, got: String },
    #[error("malformed header: {0}")]
    Malformed(String),
    #[error("only maxval 255 is supported, got {0}")]
    UnsupportedMaxval(u32),
    #[error("pixel data truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("image tensor must be {expected}, got shape {got:?}")]
    BadShape {
        expected: &'static str,
        got: Vec<usize>,
    },
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an [h,w,3] tensor with values in [0,1] as binary PPM.
pub fn write_ppm(image: &Tensor, path: &Path) -> Result<(), PnmError> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(PnmError::BadShape {
            expected: "[h,w,3]",
            got: image.shape().to_vec(),
        });
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut bytes = Vec::with_capacity(32 + h * w * 3);
    bytes.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    bytes.extend(image.data().iter().map(|&v| quantize(v)));
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Write an [h,w] tensor with values in [0,1] as binary PGM.
pub fn write_pgm(map: &Tensor, path: &Path) -> Result<(), PnmError> {
    if map.rank() != 2 {
        return Err(PnmError::BadShape {
            expected: "[h,w]",
            got: map.shape().to_vec(),
        });
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut bytes = Vec::with_capacity(32 + h * w);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    bytes.extend(map.data().iter().map(|&v| quantize(v)));
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor, PnmError> {
    let bytes = std::fs::read(path)?;
    let (w, h, body) = parse_header(&bytes, "P6")?;
    let expected = w * h * 3;
    if body.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            got: body.len(),
        });
    }
    let data: Vec<f64> = body[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::from_vec(vec![h, w, 3], data).unwrap())
}

pub fn read_pgm(path: &Path) -> Result<Tensor, PnmError> {
    let bytes = std::fs::read(path)?;
    let (w, h, body) = parse_header(&bytes, "P5")?;
    let expected = w * h;
    if body.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            got: body.len(),
        });
    }
    let data: Vec<f64> = body[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::from_vec(vec![h, w], data).unwrap())
}

/// Parse "<magic> <w> <h> <maxval>" with whitespace and '#' comments, then
/// return the pixel bytes after the single whitespace that ends the header.
fn parse_header<'a>(
    bytes: &'a [u8],
    magic: &'static str,
) -> Result<(usize, usize, &'a [u8]), PnmError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        let got = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PnmError::BadMagic {
            expected: magic,
            got,
        });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        *field = next_int(bytes, &mut pos)?;
    }
    // Exactly one whitespace byte separates the maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PnmError::Malformed("missing raster separator".into())),
    }
    let (w, h, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(PnmError::Malformed(format!("bad dimensions {w}x{h}")));
    }
    Ok((w, h, &bytes[pos..]))
}

fn next_int(bytes: &[u8], pos: &mut usize) -> Result<u32, PnmError> {
    // Skip whitespace and comment lines.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(PnmError::Malformed("expected an integer".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PnmError::Malformed("integer out of range".into()))
}

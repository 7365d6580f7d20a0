//! Binary PGM (P5) image reading and writing, 8-bit single channel.
//!
//! The header accepts arbitrary whitespace and `#` comments between tokens,
//! per the netpbm grammar; exactly one whitespace byte separates the maxval
//! from the pixel payload. Only maxval <= 255 is supported.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A decoded 8-bit grayscale image.
pub struct RawPgm {
    pub height: usize,
    pub width: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

fn bad(path: &Path, detail: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {}", path.display(), detail))
}

struct TokenReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> TokenReader<'a> {
    fn skip_filler(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_filler();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos > start {
            Some(&self.bytes[start..self.pos])
        } else {
            None
        }
    }

    fn number(&mut self, what: &str, path: &Path) -> Result<usize> {
        let tok = self.token().ok_or_else(|| bad(path, format!("missing {}", what)))?;
        let s = std::str::from_utf8(tok).map_err(|_| bad(path, format!("non-ASCII {}", what)))?;
        s.parse::<usize>().map_err(|_| bad(path, format!("invalid {}: {:?}", what, s)))
    }
}

/// Decode a P5 file into raw bytes plus extents.
pub fn read_pgm(path: &Path) -> Result<RawPgm> {
    let bytes = fs::read(path)?;
    let mut r = TokenReader { bytes: &bytes, pos: 0 };
    let magic = r.token().ok_or_else(|| bad(path, "empty file"))?;
    if magic != b"P5" {
        return Err(bad(path, "not a binary PGM (expected magic P5)"));
    }
    let width = r.number("width", path)?;
    let height = r.number("height", path)?;
    let maxval = r.number("maxval", path)?;
    if width == 0 || height == 0 {
        return Err(bad(path, "zero extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad(path, format!("unsupported maxval {} (need 1..=255)", maxval)));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if r.pos >= bytes.len() || !bytes[r.pos].is_ascii_whitespace() {
        return Err(bad(path, "missing whitespace after maxval"));
    }
    r.pos += 1;
    let need = width * height;
    let rest = &bytes[r.pos..];
    if rest.len() < need {
        return Err(bad(path, format!("payload truncated: {} of {} bytes", rest.len(), need)));
    }
    if rest.len() > need {
        return Err(bad(path, format!("trailing bytes after payload: {}", rest.len() - need)));
    }
    Ok(RawPgm { height, width, maxval: maxval as u16, pixels: rest.to_vec() })
}

/// Encode raw bytes as P5 with maxval 255.
pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != height * width {
        return Err(Error::shape(
            "write_pgm",
            format!("{} bytes for {}x{}", pixels.len(), height, width),
        ));
    }
    let mut out = format!("P5\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

/// Load a grayscale image as a 2-D tensor scaled to [0,1] by its maxval.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let p = read_pgm(path)?;
    let scale = 1.0f32 / p.maxval as f32;
    let data = p.pixels.iter().map(|&b| b as f32 * scale).collect();
    Tensor::from_vec(vec![p.height, p.width], data)
}

/// Load a mask as a binary 2-D tensor: raw byte >= 128 is foreground.
pub fn read_mask(path: &Path) -> Result<Tensor<f32>> {
    let p = read_pgm(path)?;
    let data = p.pixels.iter().map(|&b| if b >= 128 { 1.0f32 } else { 0.0 }).collect();
    Tensor::from_vec(vec![p.height, p.width], data)
}

fn to_bytes(x: &Tensor<f32>, scale: f32) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = match x.shape() {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        s => {
            return Err(Error::shape("write image", format!("expected 2-D or [1,H,W], got {:?}", s)))
        }
    };
    let bytes = x
        .data()
        .iter()
        .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok((h, w, bytes))
}

/// Save a [0,1] image (2-D or [1,H,W]) as 8-bit PGM, clamping out-of-range values.
pub fn write_image(path: &Path, x: &Tensor<f32>) -> Result<()> {
    let (h, w, bytes) = to_bytes(x, 255.0)?;
    write_pgm(path, h, w, &bytes)
}

/// Save a {0,1} mask as a PGM of 0/255 bytes.
pub fn write_mask(path: &Path, x: &Tensor<f32>) -> Result<()> {
    write_image(path, x)
}

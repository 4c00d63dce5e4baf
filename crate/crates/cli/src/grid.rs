//! Binary PGM/PPM image grids.

use std::path::Path;

use hali_tensor::Tensor;

use crate::error::{CliError, Result};

/// White separator between tiles, in pixels.
pub const GUTTER: usize = 2;

/// `[-1, 1]` to `[0, 255]`, clamped and rounded.
pub fn to_byte(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// A decoded binary PNM image. `pixels` is row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Pnm {
    pub fn at(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn encode(&self) -> Vec<u8> {
        let kind = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{kind}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(&self.pixels);
        out
    }
}

/// Lay out `images` (`[N, C, H, W]`, `C` 1 or 3) row by row on a `rows x cols`
/// grid. Unused cells stay white.
pub fn render_grid(images: &Tensor<f32>, rows: usize, cols: usize) -> Result<Pnm> {
    let s = images.shape();
    if s.len() != 4 || !(s[1] == 1 || s[1] == 3) {
        return Err(CliError::Format(format!("grid needs [N, 1|3, H, W] images, got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if rows * cols < n {
        return Err(CliError::Format(format!("{n} images do not fit a {rows}x{cols} grid")));
    }
    let width = cols * w + cols.saturating_sub(1) * GUTTER;
    let height = rows * h + rows.saturating_sub(1) * GUTTER;
    let mut pixels = vec![255u8; width * height * c];
    let data = images.data();
    for i in 0..n {
        let (x0, y0) = ((i % cols) * (w + GUTTER), (i / cols) * (h + GUTTER));
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = data[((i * c + ch) * h + y) * w + x];
                    pixels[((y0 + y) * width + x0 + x) * c + ch] = to_byte(v);
                }
            }
        }
    }
    Ok(Pnm { width, height, channels: c, pixels })
}

/// Write a grid as P5 (one channel) or P6 (three channels).
pub fn write_image_grid(images: &Tensor<f32>, rows: usize, cols: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let pnm = render_grid(images, rows, cols)?;
    std::fs::write(path, pnm.encode()).map_err(|e| CliError::io(path, e))
}

/// Parse a binary PNM with maxval 255. Comments are allowed in the header.
pub fn decode_pnm(bytes: &[u8]) -> Result<Pnm> {
    let bad = |m: &str| CliError::Format(format!("pnm: {m}"));
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("header ends early"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?.to_string());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(&format!("unsupported kind {other}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad number {s}")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval}")));
    }
    let len = width * height * channels;
    if bytes.len() < pos + len {
        return Err(bad("raster is truncated"));
    }
    Ok(Pnm { width, height, channels, pixels: bytes[pos..pos + len].to_vec() })
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Pnm> {
    let path = path.as_ref();
    decode_pnm(&std::fs::read(path).map_err(|e| CliError::io(path, e))?)
}

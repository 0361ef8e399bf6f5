//! Binary silhouette masks: PGM codec, boundary extraction, IoU, and the
//! software rasterizer (in [`raster`]).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector2;

mod raster;

pub use raster::rasterize_silhouette;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("PGM payload truncated: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

/// Row-major binary occupancy raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilhouetteMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl SilhouetteMask {
    pub fn new(width: u32, height: u32) -> Self {
        SilhouetteMask {
            width,
            height,
            bits: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y as usize) * (self.width as usize) + x as usize] = value;
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.bits.iter().all(|b| !*b)
    }
}

/// Per-pixel depth in meters; `f64::INFINITY` marks background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    depths: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        DepthMap {
            width,
            height,
            depths: vec![f64::INFINITY; (width as usize) * (height as usize)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.depths[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, depth: f64) {
        self.depths[(y as usize) * (self.width as usize) + x as usize] = depth;
    }
}

/// Decodes a binary (P5) 8-bit PGM; values at or above 128 are foreground.
pub fn load_mask(bytes: &[u8]) -> Result<SilhouetteMask, MaskError> {
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String, MaskError> {
        // Skip whitespace and '#' comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(MaskError::MalformedHeader("unexpected end of header".into()));
        }
        Ok(core::str::from_utf8(&bytes[start..pos])
            .map_err(|_| MaskError::MalformedHeader("non-ascii header".into()))?
            .into())
    };

    let magic = next_token(bytes)?;
    if magic != "P5" {
        return Err(MaskError::MalformedHeader(format!(
            "expected P5, got {magic}"
        )));
    }
    let parse = |tok: String, what: &str| -> Result<u64, MaskError> {
        tok.parse::<u64>()
            .map_err(|_| MaskError::MalformedHeader(format!("bad {what}: {tok}")))
    };
    let width = parse(next_token(bytes)?, "width")?;
    let height = parse(next_token(bytes)?, "height")?;
    let maxval = parse(next_token(bytes)?, "maxval")?;
    if width == 0 || height == 0 || width > 1 << 20 || height > 1 << 20 {
        return Err(MaskError::MalformedHeader("bad dimensions".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(MaskError::MalformedHeader(format!(
            "maxval {maxval} unsupported (need 8-bit)"
        )));
    }
    // Exactly one whitespace byte separates header and payload.
    if pos >= bytes.len() {
        return Err(MaskError::MalformedHeader("missing payload".into()));
    }
    pos += 1;
    let expected = (width * height) as usize;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(MaskError::TruncatedPayload {
            expected,
            got: payload.len(),
        });
    }
    let mut mask = SilhouetteMask::new(width as u32, height as u32);
    for (i, b) in payload[..expected].iter().enumerate() {
        mask.bits[i] = *b >= 128;
    }
    Ok(mask)
}

/// Encodes a mask as binary PGM, foreground 255, background 0.
pub fn save_mask(mask: &SilhouetteMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.bits.iter().map(|b| if *b { 255u8 } else { 0u8 }));
    out
}

/// Foreground pixels with at least one background 4-neighbor (the image
/// border counts as background), reported at pixel centers, row-major.
pub fn boundary_points(mask: &SilhouetteMask) -> Vec<Vector2<f64>> {
    let (w, h) = (mask.width, mask.height);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            if edge {
                out.push(Vector2::new(x as f64 + 0.5, y as f64 + 0.5));
            }
        }
    }
    out
}

/// Intersection over union of two equally-sized masks; 1 when both are
/// empty.
pub fn iou(a: &SilhouetteMask, b: &SilhouetteMask) -> Result<f64, MaskError> {
    if a.width != b.width || a.height != b.height {
        return Err(MaskError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (x, y) in a.bits.iter().zip(&b.bits) {
        inter += (*x && *y) as u64;
        union += (*x || *y) as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

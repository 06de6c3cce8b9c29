//! Minimal RGB image buffer with binary PPM (P6) load/save and the
//! solid-marker helpers used to verify box transforms against pixel evidence.

use crate::geometry::PixelBox;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("not a binary (P6) portable pixmap")]
    BadMagic,
    #[error("malformed pixmap header: {0}")]
    BadHeader(String),
    #[error("unsupported max value {0}, only 255 is accepted")]
    BadMaxVal(u32),
    #[error("truncated pixel payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image dimensions must be at least 1x1")]
    EmptyImage,
    #[error("marker ({x1},{y1})-({x2},{y2}) outside {width}x{height} image")]
    MarkerOutOfBounds { x1: u32, y1: u32, x2: u32, y2: u32, width: u32, height: u32 },
    #[error("marker and background colors must differ")]
    IndistinctColors,
    #[error("no pixel matches color {0:?} within tolerance {1}")]
    ColorNotFound([u8; 3], u8),
}

/// Row-major RGB image, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>, // 3 * width * height bytes
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage);
        }
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&fill);
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, color: [u8; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    pub fn raw(&self) -> &[u8] {
        &self.pixels
    }
}

/// Parse one whitespace-delimited ASCII integer from the header, skipping
/// `#` comments.
fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<u32, RasterError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(RasterError::BadHeader("expected an integer".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| RasterError::BadHeader("integer out of range".into()))
}

/// Decode a binary P6 portable pixmap with max value 255.
pub fn load_ppm(bytes: &[u8]) -> Result<ImageBuffer, RasterError> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(RasterError::BadMagic);
    }
    let mut pos = 2;
    let width = read_header_int(bytes, &mut pos)?;
    let height = read_header_int(bytes, &mut pos)?;
    let maxval = read_header_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(RasterError::BadMaxVal(maxval));
    }
    if width == 0 || height == 0 {
        return Err(RasterError::EmptyImage);
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(RasterError::BadHeader("missing separator before payload".into()));
    }
    pos += 1;
    let expected = width as usize * height as usize * 3;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(RasterError::Truncated { expected, found: payload.len() });
    }
    Ok(ImageBuffer {
        width,
        height,
        pixels: payload[..expected].to_vec(),
    })
}

/// Read only the dimensions from a P6 header.
pub fn ppm_dimensions(bytes: &[u8]) -> Result<(u32, u32), RasterError> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(RasterError::BadMagic);
    }
    let mut pos = 2;
    let width = read_header_int(bytes, &mut pos)?;
    let height = read_header_int(bytes, &mut pos)?;
    Ok((width, height))
}

/// Encode as the canonical P6 form: `P6\n<w> <h>\n255\n` + raw RGB triples.
/// Deterministic, and an exact inverse of [`load_ppm`] on canonical files.
pub fn save_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Background-filled image with one solid axis-aligned rectangle. The marker
/// corners are rounded to the integer pixel grid; cell (i, j) is painted when
/// x1 <= i < x2 and y1 <= j < y2.
pub fn make_marker_image(
    img_w: u32,
    img_h: u32,
    marker: &PixelBox,
    marker_color: [u8; 3],
    background: [u8; 3],
) -> Result<ImageBuffer, RasterError> {
    if marker_color == background {
        return Err(RasterError::IndistinctColors);
    }
    let x1 = marker.x1.round();
    let y1 = marker.y1.round();
    let x2 = marker.x2.round();
    let y2 = marker.y2.round();
    if x1 < 0.0 || y1 < 0.0 || x2 > img_w as f64 || y2 > img_h as f64 || x1 >= x2 || y1 >= y2 {
        return Err(RasterError::MarkerOutOfBounds {
            x1: marker.x1.max(0.0) as u32,
            y1: marker.y1.max(0.0) as u32,
            x2: marker.x2.max(0.0) as u32,
            y2: marker.y2.max(0.0) as u32,
            width: img_w,
            height: img_h,
        });
    }
    let mut img = ImageBuffer::new(img_w, img_h, background)?;
    for y in y1 as u32..y2 as u32 {
        for x in x1 as u32..x2 as u32 {
            img.set(x, y, marker_color);
        }
    }
    Ok(img)
}

/// Smallest pixel box containing every pixel within `tolerance` of `color`
/// on all three channels. Exact inverse of [`make_marker_image`] at
/// tolerance 0; a tolerance around 30 recovers interpolation-blurred markers.
pub fn tight_bbox_of_color(
    img: &ImageBuffer,
    color: [u8; 3],
    tolerance: u8,
) -> Result<PixelBox, RasterError> {
    let mut min_x = u32::MAX;
    let mut min_y = u32::MAX;
    let mut max_x = 0u32;
    let mut max_y = 0u32;
    let mut found = false;
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.get(x, y);
            let close = p
                .iter()
                .zip(color.iter())
                .all(|(&a, &b)| a.abs_diff(b) <= tolerance);
            if close {
                found = true;
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
            }
        }
    }
    if !found {
        return Err(RasterError::ColorNotFound(color, tolerance));
    }
    PixelBox::new(
        min_x as f64,
        min_y as f64,
        (max_x + 1) as f64,
        (max_y + 1) as f64,
    )
    .map_err(|_| RasterError::ColorNotFound(color, tolerance))
}

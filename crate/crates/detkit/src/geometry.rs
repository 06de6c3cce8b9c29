//! Box representations, coordinate conversions, and overlap measures (IoU, GIoU).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("normalized box out of range: cx={cx} cy={cy} w={w} h={h}")]
    InvalidNormBox { cx: f64, cy: f64, w: f64, h: f64 },
    #[error("pixel box has no area: ({x1},{y1})-({x2},{y2})")]
    EmptyPixelBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("image dimensions must be positive, got {width}x{height}")]
    BadImageSize { width: u32, height: u32 },
}

/// Axis-aligned box in normalized center-size form: center (cx, cy) and
/// size (w, h) as fractions of the image dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    /// Requires cx, cy in [0, 1] and w, h in (0, 1]. Zero-size boxes are
    /// rejected here so all downstream area divisions stay well-defined.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(cx) && in_unit(cy) && w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0) {
            return Err(GeometryError::InvalidNormBox { cx, cy, w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Corner coordinates (x1, y1, x2, y2) in normalized units. May exceed
    /// [0, 1] for an unclipped box whose center sits near the frame edge.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }
}

/// Axis-aligned box in absolute pixel corner form, x1 < x2 and y1 < y2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl PixelBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if !(x1 < x2 && y1 < y2) || !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(GeometryError::EmptyPixelBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

fn check_image_size(img_w: u32, img_h: u32) -> Result<(), GeometryError> {
    if img_w == 0 || img_h == 0 {
        return Err(GeometryError::BadImageSize {
            width: img_w,
            height: img_h,
        });
    }
    Ok(())
}

/// Convert a normalized center-size box to absolute pixel corners.
pub fn norm_to_pixel(b: NormBox, img_w: u32, img_h: u32) -> Result<PixelBox, GeometryError> {
    check_image_size(img_w, img_h)?;
    let (nx1, ny1, nx2, ny2) = b.corners();
    PixelBox::new(
        nx1 * img_w as f64,
        ny1 * img_h as f64,
        nx2 * img_w as f64,
        ny2 * img_h as f64,
    )
}

/// Convert absolute pixel corners back to normalized center-size form.
/// Inverse of [`norm_to_pixel`] up to floating round-off.
pub fn pixel_to_norm(b: PixelBox, img_w: u32, img_h: u32) -> Result<NormBox, GeometryError> {
    check_image_size(img_w, img_h)?;
    let w = img_w as f64;
    let h = img_h as f64;
    NormBox::new(
        (b.x1 + b.x2) / (2.0 * w),
        (b.y1 + b.y2) / (2.0 * h),
        (b.x2 - b.x1) / w,
        (b.y2 - b.y1) / h,
    )
}

fn intersection_area(a: &PixelBox, b: &PixelBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    iw * ih
}

/// Intersection over union: overlap area divided by union area.
/// 0 when the interiors are disjoint, 1 when the boxes coincide.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Generalized IoU: IoU minus the fraction of the smallest enclosing box
/// not covered by the union. Ranges over (-1, 1]; always <= IoU, and
/// negative for well-separated boxes.
pub fn giou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let enclosing = (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1));
    inter / union - (enclosing - union) / enclosing
}

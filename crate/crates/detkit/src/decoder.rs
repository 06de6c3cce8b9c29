//! Multi-scale head decoding: raw per-cell, per-anchor tensors to pixel-space
//! detections, plus confidence filtering and greedy NMS.
//!
//! The decode convention is the v5 family's: center offsets `2*sigmoid(t) - 0.5`
//! relative to the cell, sizes `(2*sigmoid(t))^2` times the anchor, confidence
//! through a plain sigmoid. Single-class volumes carry no class logits, so
//! every detection gets class id 0.

use crate::geometry::PixelBox;
use crate::metrics::Detection;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("volume data holds {found} entries, grid {grid} with {anchors} anchors needs {expected}")]
    ShapeMismatch { grid: u32, anchors: usize, expected: usize, found: usize },
    #[error("grid {grid} does not equal input {input} / stride {stride}")]
    GridStrideMismatch { grid: u32, input: u32, stride: u32 },
    #[error("input size {input} is not divisible by stride {stride}")]
    BadStride { input: u32, stride: u32 },
    #[error("anchor dimensions must be positive")]
    BadAnchor,
    #[error("no volume supplied for stride {0}")]
    MissingScale(u32),
    #[error("more than one volume supplied for stride {0}")]
    DuplicateScale(u32),
    #[error("volume stride {0} is not part of the configured scales")]
    UnknownScale(u32),
    #[error("head file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Anchor box priors for one scale, in input pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub stride: u32,
    pub anchors: Vec<[f64; 2]>,
}

/// Decoder settings: input size, the per-scale strides and anchors, and the
/// post-processing thresholds.
///
/// Training pipelines also carry an anchor-assignment IoU threshold
/// (commonly 0.20); that value governs which anchors are matched to targets
/// while learning and has no effect at decode time, so it is not part of
/// this config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub input_size: u32,
    pub scales: Vec<ScaleSpec>,
    pub confidence_threshold: f64,
    pub nms_iou_threshold: f64,
}

impl Default for DecoderConfig {
    /// 640 input, strides 8/16/32 with the stock v5 anchor priors, and the
    /// conventional 0.25 confidence / 0.45 NMS thresholds.
    fn default() -> Self {
        Self {
            input_size: 640,
            scales: vec![
                ScaleSpec { stride: 8, anchors: vec![[10.0, 13.0], [16.0, 30.0], [33.0, 23.0]] },
                ScaleSpec { stride: 16, anchors: vec![[30.0, 61.0], [62.0, 45.0], [59.0, 119.0]] },
                ScaleSpec { stride: 32, anchors: vec![[116.0, 90.0], [156.0, 198.0], [373.0, 326.0]] },
            ],
            confidence_threshold: 0.25,
            nms_iou_threshold: 0.45,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        for scale in &self.scales {
            if !self.input_size.is_multiple_of(scale.stride) {
                return Err(DecodeError::BadStride { input: self.input_size, stride: scale.stride });
            }
            if scale.anchors.is_empty() || scale.anchors.iter().any(|a| a[0] <= 0.0 || a[1] <= 0.0) {
                return Err(DecodeError::BadAnchor);
            }
        }
        Ok(())
    }
}

/// Raw predictions for one scale: `grid * grid * anchors` five-tuples
/// `[tx, ty, tw, th, t_conf]`, row-major over cells with the anchor index
/// minor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadVolume {
    pub stride: u32,
    pub grid: u32,
    pub anchors: Vec<[f64; 2]>,
    pub data: Vec<[f64; 5]>,
}

impl HeadVolume {
    /// All-zero volume: every decoded box sits at its cell center with the
    /// anchor's size and confidence 0.5.
    pub fn zeros(stride: u32, grid: u32, anchors: Vec<[f64; 2]>) -> Self {
        let len = grid as usize * grid as usize * anchors.len();
        Self { stride, grid, anchors, data: vec![[0.0; 5]; len] }
    }
}

/// The head-volume interchange file: input size plus one volume per scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadFile {
    pub input_size: u32,
    pub scales: Vec<HeadVolume>,
}

impl HeadFile {
    /// Zero-filled volumes matching a decoder config.
    pub fn zeros(cfg: &DecoderConfig) -> Self {
        let scales = cfg
            .scales
            .iter()
            .map(|s| HeadVolume::zeros(s.stride, cfg.input_size / s.stride, s.anchors.clone()))
            .collect();
        Self { input_size: cfg.input_size, scales }
    }

    pub fn from_json(text: &str) -> Result<Self, DecodeError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("head file serializes")
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Clamp a decoded center-size box to the frame. A box clipped to nothing
/// keeps a minimal sliver at the nearest edge so the decode count invariant
/// holds; such boxes carry negligible area and fall to downstream filtering.
fn clip_to_frame(cx: f64, cy: f64, w: f64, h: f64, size: f64) -> PixelBox {
    const MIN_EXTENT: f64 = 1e-6;
    let clamp_span = |c: f64, half: f64| -> (f64, f64) {
        let lo = (c - half).clamp(0.0, size);
        let hi = (c + half).clamp(0.0, size);
        if hi - lo < MIN_EXTENT {
            // fully outside or vanishing: a sliver at the nearest valid spot
            let lo = c.clamp(0.0, size - MIN_EXTENT);
            (lo, lo + MIN_EXTENT)
        } else {
            (lo, hi)
        }
    };
    let (x1, x2) = clamp_span(cx, w / 2.0);
    let (y1, y2) = clamp_span(cy, h / 2.0);
    PixelBox::new(x1, y1, x2, y2).expect("clipped box keeps positive area")
}

/// Decode one scale into `grid * grid * anchors` detections, before any
/// confidence filtering.
pub fn decode_scale(
    volume: &HeadVolume,
    input_size: u32,
    image_id: &str,
) -> Result<Vec<Detection>, DecodeError> {
    if !input_size.is_multiple_of(volume.stride) {
        return Err(DecodeError::BadStride { input: input_size, stride: volume.stride });
    }
    if volume.grid != input_size / volume.stride {
        return Err(DecodeError::GridStrideMismatch {
            grid: volume.grid,
            input: input_size,
            stride: volume.stride,
        });
    }
    let anchors = volume.anchors.len();
    let expected = volume.grid as usize * volume.grid as usize * anchors;
    if volume.data.len() != expected {
        return Err(DecodeError::ShapeMismatch {
            grid: volume.grid,
            anchors,
            expected,
            found: volume.data.len(),
        });
    }
    let stride = volume.stride as f64;
    let size = input_size as f64;
    let mut dets = Vec::with_capacity(expected);
    for cell_y in 0..volume.grid {
        for cell_x in 0..volume.grid {
            for (a, anchor) in volume.anchors.iter().enumerate() {
                let idx = (cell_y as usize * volume.grid as usize + cell_x as usize) * anchors + a;
                let [tx, ty, tw, th, t_conf] = volume.data[idx];
                let cx = (2.0 * sigmoid(tx) - 0.5 + cell_x as f64) * stride;
                let cy = (2.0 * sigmoid(ty) - 0.5 + cell_y as f64) * stride;
                let w = (2.0 * sigmoid(tw)).powi(2) * anchor[0];
                let h = (2.0 * sigmoid(th)).powi(2) * anchor[1];
                dets.push(Detection {
                    image_id: image_id.to_string(),
                    class_id: 0,
                    bbox: clip_to_frame(cx, cy, w, h, size),
                    confidence: sigmoid(t_conf),
                });
            }
        }
    }
    Ok(dets)
}

/// Decode every configured scale, in config order, and concatenate. Exactly
/// one volume must be supplied per scale.
pub fn decode_all(
    head: &HeadFile,
    cfg: &DecoderConfig,
    image_id: &str,
) -> Result<Vec<Detection>, DecodeError> {
    cfg.validate()?;
    let mut by_stride: BTreeMap<u32, &HeadVolume> = BTreeMap::new();
    for volume in &head.scales {
        if cfg.scales.iter().all(|s| s.stride != volume.stride) {
            return Err(DecodeError::UnknownScale(volume.stride));
        }
        if by_stride.insert(volume.stride, volume).is_some() {
            return Err(DecodeError::DuplicateScale(volume.stride));
        }
    }
    let mut out = Vec::new();
    for scale in &cfg.scales {
        let volume = by_stride
            .get(&scale.stride)
            .ok_or(DecodeError::MissingScale(scale.stride))?;
        out.extend(decode_scale(volume, head.input_size, image_id)?);
    }
    Ok(out)
}

/// Keep detections with confidence at or above the threshold, preserving order.
pub fn confidence_filter(dets: Vec<Detection>, threshold: f64) -> Vec<Detection> {
    dets.into_iter().filter(|d| d.confidence >= threshold).collect()
}

/// Greedy non-maximum suppression, independently per (image, class): walk by
/// descending confidence (ties keep input order), keep the current box, and
/// discard remaining boxes overlapping it with IoU strictly above the
/// threshold. Survivors come back in that greedy order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(dets[i].clone());
        for &j in &order[rank + 1..] {
            if suppressed[j]
                || dets[j].image_id != dets[i].image_id
                || dets[j].class_id != dets[i].class_id
            {
                continue;
            }
            if crate::geometry::iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(conf: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> Detection {
        Detection {
            image_id: "img".into(),
            class_id: 0,
            bbox: PixelBox::new(x1, y1, x2, y2).unwrap(),
            confidence: conf,
        }
    }

    #[test]
    fn per_scale_counts() {
        let cfg = DecoderConfig::default();
        let head = HeadFile::zeros(&cfg);
        let counts: Vec<usize> = head
            .scales
            .iter()
            .map(|v| decode_scale(v, 640, "img").unwrap().len())
            .collect();
        assert_eq!(counts, vec![19_200, 4_800, 1_200]);
    }

    #[test]
    fn total_counts_640_and_320() {
        let cfg = DecoderConfig::default();
        let dets = decode_all(&HeadFile::zeros(&cfg), &cfg, "img").unwrap();
        assert_eq!(dets.len(), 25_200);

        let cfg320 = DecoderConfig { input_size: 320, ..DecoderConfig::default() };
        let dets = decode_all(&HeadFile::zeros(&cfg320), &cfg320, "img").unwrap();
        assert_eq!(dets.len(), 6_300);
    }

    #[test]
    fn zero_volume_decodes_to_cell_centers() {
        // sigmoid(0) = 0.5, so offsets vanish and sizes equal the anchors.
        let volume = HeadVolume::zeros(32, 20, vec![[116.0, 90.0]]);
        let dets = decode_scale(&volume, 640, "img").unwrap();
        assert_eq!(dets.len(), 400);
        // cell (1, 1): center ((1 + 0.5) * 32, (1 + 0.5) * 32) = (48, 48),
        // so the 116-wide anchor clips at the left frame edge
        let d = &dets[21];
        assert!((d.confidence - 0.5).abs() < 1e-15);
        assert!((d.bbox.x1 - 0.0).abs() < 1e-9); // 48 - 58 clips to 0
        assert!((d.bbox.x2 - 106.0).abs() < 1e-9);
        // an interior cell keeps the full anchor size around its center
        let interior = &dets[10 * 20 + 10];
        assert!((interior.bbox.x2 - interior.bbox.x1 - 116.0).abs() < 1e-9);
        assert!((interior.bbox.y2 - interior.bbox.y1 - 90.0).abs() < 1e-9);
        assert!(((interior.bbox.x1 + interior.bbox.x2) / 2.0 - 336.0).abs() < 1e-9);
    }

    #[test]
    fn crafted_entry_decodes_by_scalar_substitution() {
        let mut volume = HeadVolume::zeros(32, 20, vec![[116.0, 90.0], [156.0, 198.0]]);
        // cell (x=3, y=2), anchor 1
        let idx = (2 * 20 + 3) * 2 + 1;
        volume.data[idx] = [0.5, -0.5, 0.25, -0.25, 2.0];
        let dets = decode_scale(&volume, 640, "img").unwrap();
        let d = &dets[idx];
        let s = |t: f64| 1.0 / (1.0 + (-t).exp());
        let cx = (2.0 * s(0.5) - 0.5 + 3.0) * 32.0;
        let cy = (2.0 * s(-0.5) - 0.5 + 2.0) * 32.0;
        let w = (2.0 * s(0.25)).powi(2) * 156.0;
        let h = (2.0 * s(-0.25)).powi(2) * 198.0;
        assert!((d.bbox.x1 - (cx - w / 2.0).max(0.0)).abs() < 1e-12);
        assert!((d.bbox.x2 - (cx + w / 2.0).min(640.0)).abs() < 1e-12);
        assert!((d.bbox.y1 - (cy - h / 2.0).max(0.0)).abs() < 1e-12);
        assert!((d.bbox.y2 - (cy + h / 2.0).min(640.0)).abs() < 1e-12);
        assert!((d.confidence - s(2.0)).abs() < 1e-15);
    }

    #[test]
    fn scale_order_and_anchor_minor_layout() {
        let cfg = DecoderConfig { input_size: 64, ..DecoderConfig::default() };
        let head = HeadFile::zeros(&cfg);
        let dets = decode_all(&head, &cfg, "img").unwrap();
        // stride 8 boxes come first: an interior cell of the 8x8 grid sits on
        // the 8-pixel pitch. Cell (4, 4) anchor 0 is index (4*8+4)*3.
        let interior = &dets[(4 * 8 + 4) * 3];
        assert!(((interior.bbox.x1 + interior.bbox.x2) / 2.0 - 36.0).abs() < 1e-9);
        // within a scale the anchor index cycles fastest: same anchor, next
        // cell has the same width; the next anchor in the same cell does not
        let same_anchor_next_cell = &dets[(4 * 8 + 5) * 3];
        let next_anchor = &dets[(4 * 8 + 4) * 3 + 1];
        let width = |d: &Detection| d.bbox.x2 - d.bbox.x1;
        assert!((width(interior) - width(same_anchor_next_cell)).abs() < 1e-9);
        assert!(width(interior) < width(next_anchor));
    }

    #[test]
    fn scale_bookkeeping_errors() {
        let cfg = DecoderConfig::default();
        let mut head = HeadFile::zeros(&cfg);
        head.scales.pop();
        assert!(matches!(decode_all(&head, &cfg, "img"), Err(DecodeError::MissingScale(32))));

        let mut head = HeadFile::zeros(&cfg);
        let dup = head.scales[0].clone();
        head.scales.push(dup);
        assert!(matches!(decode_all(&head, &cfg, "img"), Err(DecodeError::DuplicateScale(8))));

        let mut head = HeadFile::zeros(&cfg);
        head.scales[0].data.pop();
        assert!(matches!(decode_all(&head, &cfg, "img"), Err(DecodeError::ShapeMismatch { .. })));
    }

    #[test]
    fn confidence_filter_thresholds() {
        let dets = vec![det(0.2, 0.0, 0.0, 1.0, 1.0), det(0.5, 0.0, 0.0, 1.0, 1.0), det(1.0, 0.0, 0.0, 1.0, 1.0)];
        assert_eq!(confidence_filter(dets.clone(), 0.0).len(), 3);
        assert_eq!(confidence_filter(dets.clone(), 0.25).len(), 2);
        // the boundary is inclusive
        assert_eq!(confidence_filter(dets.clone(), 1.0).len(), 1);
        assert_eq!(confidence_filter(dets, 0.5).len(), 2);
    }

    #[test]
    fn raising_the_threshold_never_adds_detections() {
        let dets: Vec<Detection> = (0..20)
            .map(|i| det(i as f64 / 20.0, 0.0, 0.0, 5.0, 5.0))
            .collect();
        let mut last = confidence_filter(dets.clone(), 0.0);
        for step in 1..=10 {
            let filtered = confidence_filter(dets.clone(), step as f64 / 10.0);
            assert!(filtered.len() <= last.len());
            assert!(filtered.iter().all(|d| last.contains(d)));
            last = filtered;
        }
    }

    #[test]
    fn decoded_centers_stay_within_their_cell_neighborhood() {
        // offsets 2*sigmoid(t) - 0.5 live in (-0.5, 1.5) cells. Raw values
        // beyond ~36 saturate the sigmoid to exactly 0 or 1 in f64, landing
        // on the boundary, so sweep the representable range below that. A
        // tiny anchor keeps interior boxes unclipped, making the box
        // midpoint the decoded center.
        let mut volume = HeadVolume::zeros(32, 20, vec![[4.0, 4.0]]);
        for (i, entry) in volume.data.iter_mut().enumerate() {
            let t = (i as f64 * 0.37).sin() * 10.0;
            entry[0] = t;
            entry[1] = -t;
        }
        let dets = decode_scale(&volume, 640, "img").unwrap();
        for (idx, d) in dets.iter().enumerate() {
            let cell_x = (idx % 20) as f64;
            let cell_y = (idx / 20) as f64;
            if !(1.0..19.0).contains(&cell_x) || !(1.0..19.0).contains(&cell_y) {
                continue;
            }
            let cx = (d.bbox.x1 + d.bbox.x2) / 2.0;
            let cy = (d.bbox.y1 + d.bbox.y2) / 2.0;
            assert!(cx > (cell_x - 0.5) * 32.0 && cx < (cell_x + 1.5) * 32.0);
            assert!(cy > (cell_y - 0.5) * 32.0 && cy < (cell_y + 1.5) * 32.0);
        }
    }

    #[test]
    fn nms_two_box_hand_case() {
        let a = det(0.9, 0.0, 0.0, 10.0, 10.0);
        let b = det(0.8, 0.0, 0.0, 10.0, 9.0); // IoU 0.9 with a
        let kept = nms(&[a.clone(), b], 0.45);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0], a);
        let single = nms(std::slice::from_ref(&a), 0.45);
        assert_eq!(single, vec![a]);
    }

    #[test]
    fn nms_keeps_distinct_images_and_classes() {
        let mut other_image = det(0.8, 0.0, 0.0, 10.0, 10.0);
        other_image.image_id = "other".into();
        let mut other_class = det(0.7, 0.0, 0.0, 10.0, 10.0);
        other_class.class_id = 1;
        let kept = nms(&[det(0.9, 0.0, 0.0, 10.0, 10.0), other_image, other_class], 0.45);
        assert_eq!(kept.len(), 3);
    }

    #[test]
    fn nms_is_idempotent() {
        let dets = vec![
            det(0.9, 0.0, 0.0, 10.0, 10.0),
            det(0.8, 1.0, 1.0, 11.0, 11.0),
            det(0.7, 30.0, 30.0, 40.0, 40.0),
            det(0.6, 31.0, 31.0, 41.0, 41.0),
        ];
        let once = nms(&dets, 0.45);
        let twice = nms(&once, 0.45);
        assert_eq!(once, twice);
    }

    #[test]
    fn head_file_json_roundtrip() {
        let cfg = DecoderConfig { input_size: 32, ..DecoderConfig::default() };
        let head = HeadFile::zeros(&cfg);
        let parsed = HeadFile::from_json(&head.to_json()).unwrap();
        assert_eq!(parsed, head);
        assert!(HeadFile::from_json("{not json").is_err());
    }
}

//! Browser demo bindings: an IoU/GIoU explorer, a live augmentation preview
//! on a synthetic marker image, and a decode + NMS playground. The heavy
//! lifting stays in `detkit`; this crate only shuttles JSON and RGBA buffers
//! across the wasm boundary. See `www/` for the static page.

use detkit::augment::{transform_bbox, warp_image, AugmentOp, DropRule, Interpolation};
use detkit::decoder::{confidence_filter, decode_scale, nms, HeadVolume};
use detkit::geometry::{giou, iou, pixel_to_norm, PixelBox};
use detkit::raster::make_marker_image;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct OverlapReport {
    iou: f64,
    giou: f64,
    intersection: f64,
    union: f64,
    enclosing: f64,
}

fn overlap_metrics_impl(a: [f64; 4], b: [f64; 4]) -> Result<String, String> {
    let a = PixelBox::new(a[0], a[1], a[2], a[3]).map_err(|e| e.to_string())?;
    let b = PixelBox::new(b[0], b[1], b[2], b[3]).map_err(|e| e.to_string())?;
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let intersection = iw * ih;
    let union = a.area() + b.area() - intersection;
    let enclosing = (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1));
    let report = OverlapReport {
        iou: iou(&a, &b),
        giou: giou(&a, &b),
        intersection,
        union,
        enclosing,
    };
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

/// Overlap measures for two corner-form boxes, as a JSON object with
/// `iou`, `giou`, `intersection`, `union`, and `enclosing` fields.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn overlap_metrics(
    ax1: f64,
    ay1: f64,
    ax2: f64,
    ay2: f64,
    bx1: f64,
    by1: f64,
    bx2: f64,
    by2: f64,
) -> Result<String, JsValue> {
    overlap_metrics_impl([ax1, ay1, ax2, ay2], [bx1, by1, bx2, by2]).map_err(into_js)
}

#[derive(Deserialize)]
struct PreviewRequest {
    img_w: u32,
    img_h: u32,
    /// marker rectangle in pixel corners
    marker: [f64; 4],
    op: AugmentOp,
    #[serde(default)]
    nearest: bool,
}

#[derive(Serialize)]
struct PreviewBoxes {
    original: [f64; 4],
    transformed: Option<[f64; 4]>,
}

/// Result of an augmentation preview: the warped frame as RGBA bytes plus the
/// original and transformed boxes in pixel corners (JSON).
#[wasm_bindgen]
pub struct AugmentPreview {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
    boxes_json: String,
}

#[wasm_bindgen]
impl AugmentPreview {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn boxes_json(&self) -> String {
        self.boxes_json.clone()
    }
}

const MARKER_COLOR: [u8; 3] = [235, 90, 60];
const BACKGROUND: [u8; 3] = [24, 26, 32];

fn augment_preview_impl(request_json: &str) -> Result<AugmentPreview, String> {
    let req: PreviewRequest = serde_json::from_str(request_json).map_err(|e| e.to_string())?;
    let marker =
        PixelBox::new(req.marker[0], req.marker[1], req.marker[2], req.marker[3]).map_err(|e| e.to_string())?;
    let img = make_marker_image(req.img_w, req.img_h, &marker, MARKER_COLOR, BACKGROUND)
        .map_err(|e| e.to_string())?;
    let bbox = pixel_to_norm(marker, req.img_w, req.img_h).map_err(|e| e.to_string())?;
    let t = req.op.to_affine(req.img_w, req.img_h);
    let interpolation = if req.nearest { Interpolation::Nearest } else { Interpolation::Bilinear };
    let warped = warp_image(&img, &t, interpolation, BACKGROUND).map_err(|e| e.to_string())?;

    let transformed = transform_bbox(&bbox, &t, req.img_w, req.img_h, &DropRule::default())
        .map(|nb| {
            let p = detkit::geometry::norm_to_pixel(nb, req.img_w, req.img_h)
                .expect("clipped box stays inside the frame");
            [p.x1, p.y1, p.x2, p.y2]
        });
    let boxes = PreviewBoxes {
        original: req.marker,
        transformed,
    };

    let mut rgba = Vec::with_capacity(warped.raw().len() / 3 * 4);
    for px in warped.raw().chunks_exact(3) {
        rgba.extend_from_slice(&[px[0], px[1], px[2], 255]);
    }
    Ok(AugmentPreview {
        width: req.img_w,
        height: req.img_h,
        rgba,
        boxes_json: serde_json::to_string(&boxes).expect("boxes serialize"),
    })
}

/// Warp a synthetic marker image through one augmentation op and carry its
/// bounding box along. The request is JSON:
/// `{"img_w":160,"img_h":160,"marker":[40,50,110,100],"op":{"op":"rotate","degrees":30},"nearest":false}`.
#[wasm_bindgen]
pub fn augment_preview(request_json: &str) -> Result<AugmentPreview, JsValue> {
    augment_preview_impl(request_json).map_err(into_js)
}

#[derive(Serialize)]
struct PlaygroundBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    confidence: f64,
    kept: bool,
}

fn decode_playground_impl(
    seed: u32,
    grid: u32,
    confidence_threshold: f64,
    nms_threshold: f64,
    run_nms: bool,
) -> Result<String, String> {
    if grid == 0 || grid > 32 {
        return Err("grid must be between 1 and 32".into());
    }
    // one coarse scale over a 640 frame; raw logits drawn from a seeded RNG
    let stride = 640 / grid;
    let input = stride * grid;
    let mut rng = ChaCha12Rng::seed_from_u64(seed as u64);
    let mut volume = HeadVolume::zeros(stride, grid, vec![[96.0, 72.0], [56.0, 112.0]]);
    for entry in &mut volume.data {
        *entry = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-4.0..2.0),
        ];
    }
    let decoded = decode_scale(&volume, input, "demo").map_err(|e| e.to_string())?;
    let filtered = confidence_filter(decoded, confidence_threshold);
    let survivors = if run_nms { nms(&filtered, nms_threshold) } else { filtered.clone() };
    let kept: std::collections::HashSet<String> = survivors
        .iter()
        .map(|d| format!("{:.4}/{:.4}/{:.6}", d.bbox.x1, d.bbox.y1, d.confidence))
        .collect();
    let boxes: Vec<PlaygroundBox> = filtered
        .iter()
        .map(|d| PlaygroundBox {
            x1: d.bbox.x1,
            y1: d.bbox.y1,
            x2: d.bbox.x2,
            y2: d.bbox.y2,
            confidence: d.confidence,
            kept: kept.contains(&format!("{:.4}/{:.4}/{:.6}", d.bbox.x1, d.bbox.y1, d.confidence)),
        })
        .collect();
    Ok(serde_json::to_string(&boxes).expect("boxes serialize"))
}

/// Decode a seeded random head volume over a 640 frame, filter by
/// confidence, and mark which boxes survive NMS. Returns a JSON array of
/// `{x1, y1, x2, y2, confidence, kept}`.
#[wasm_bindgen]
pub fn decode_playground(
    seed: u32,
    grid: u32,
    confidence_threshold: f64,
    nms_threshold: f64,
    run_nms: bool,
) -> Result<String, JsValue> {
    decode_playground_impl(seed, grid, confidence_threshold, nms_threshold, run_nms).map_err(into_js)
}

fn into_js(message: String) -> JsValue {
    JsValue::from_str(&message)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_report_matches_hand_case() {
        let json = overlap_metrics_impl([0.0, 0.0, 10.0, 10.0], [5.0, 5.0, 15.0, 15.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!((v["iou"].as_f64().unwrap() - 25.0 / 175.0).abs() < 1e-12);
        assert_eq!(v["intersection"], 25.0);
        assert_eq!(v["union"], 175.0);
        assert_eq!(v["enclosing"], 225.0);
        assert!(overlap_metrics_impl([0.0, 0.0, 0.0, 10.0], [0.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn preview_flips_marker_to_the_far_side() {
        let request = r#"{"img_w":64,"img_h":64,"marker":[4,8,20,24],"op":{"op":"flip_horizontal"},"nearest":true}"#;
        let preview = augment_preview_impl(request).unwrap();
        assert_eq!(preview.width, 64);
        assert_eq!(preview.rgba.len(), 64 * 64 * 4);
        let boxes: serde_json::Value = serde_json::from_str(&preview.boxes_json).unwrap();
        let t = boxes["transformed"].as_array().unwrap();
        assert_eq!(t[0].as_f64().unwrap(), 44.0);
        assert_eq!(t[2].as_f64().unwrap(), 60.0);
    }

    #[test]
    fn playground_is_seeded_and_nms_prunes() {
        let with_nms = decode_playground_impl(9, 8, 0.3, 0.45, true).unwrap();
        let again = decode_playground_impl(9, 8, 0.3, 0.45, true).unwrap();
        assert_eq!(with_nms, again);
        let boxes: Vec<serde_json::Value> = serde_json::from_str(&with_nms).unwrap();
        let kept = boxes.iter().filter(|b| b["kept"].as_bool().unwrap()).count();
        assert!(kept > 0 && kept < boxes.len(), "kept {kept} of {}", boxes.len());
    }
}

//! Seeded, box-consistent geometric augmentation.
//!
//! Every operation is lowered to a 2x3 affine map over pixel-index
//! coordinates. Images are resampled destination-driven through the inverse
//! map; annotation boxes ride along by transforming their corners, taking
//! the axis-aligned hull, and clipping to the frame.

use crate::annotations::{parse_label_file, write_label_file, AnnotationError, DatasetIndex};
use crate::geometry::{NormBox, PixelBox};
use crate::raster::{load_ppm, save_ppm, ImageBuffer, RasterError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("affine transform is not invertible")]
    NonInvertible,
    #[error("invalid plan: {0}")]
    BadPlan(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Raster { path: PathBuf, source: RasterError },
    #[error("{path}: {source}")]
    Labels { path: PathBuf, source: AnnotationError },
}

/// One geometric augmentation step. Angles are degrees (sign picks the
/// direction), all other parameters are fractions of the image dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    Rotate { degrees: f64 },
    ShiftWidth { fraction: f64 },
    ShiftHeight { fraction: f64 },
    /// Shrink the content about the image center by `fraction` (0.1 keeps 90%).
    Scale { fraction: f64 },
    Translate { dx: f64, dy: f64 },
    FlipHorizontal,
    FlipVertical,
}

/// Row-major 2x3 affine matrix mapping source pixel indices to destination
/// pixel indices: `x' = a x + b y + c`, `y' = d x + e y + f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [f64; 6],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] };

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.m;
        (a * x + b * y + c, d * x + e * y + f)
    }

    /// Compose so that `self` runs after `first`.
    pub fn after(&self, first: &AffineTransform) -> AffineTransform {
        let [a1, b1, c1, d1, e1, f1] = first.m;
        let [a2, b2, c2, d2, e2, f2] = self.m;
        AffineTransform {
            m: [
                a2 * a1 + b2 * d1,
                a2 * b1 + b2 * e1,
                a2 * c1 + b2 * f1 + c2,
                d2 * a1 + e2 * d1,
                d2 * b1 + e2 * e1,
                d2 * c1 + e2 * f1 + f2,
            ],
        }
    }

    pub fn invert(&self) -> Result<AffineTransform, AugmentError> {
        let [a, b, c, d, e, f] = self.m;
        let det = a * e - b * d;
        if det == 0.0 || !det.is_finite() {
            return Err(AugmentError::NonInvertible);
        }
        let ia = e / det;
        let ib = -b / det;
        let id = -d / det;
        let ie = a / det;
        Ok(AffineTransform {
            m: [ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)],
        })
    }
}

impl AugmentOp {
    /// Lower the op to pixel-index space for a `img_w` x `img_h` image.
    /// Rotation and scaling are about the image center; flips mirror about
    /// the central axis, so a width-`w` flip maps `x` to `w - 1 - x`.
    pub fn to_affine(&self, img_w: u32, img_h: u32) -> AffineTransform {
        let w = img_w as f64;
        let h = img_h as f64;
        let cx = (w - 1.0) / 2.0;
        let cy = (h - 1.0) / 2.0;
        match *self {
            AugmentOp::Rotate { degrees } => {
                let r = degrees.to_radians();
                let (sin, cos) = (r.sin(), r.cos());
                AffineTransform {
                    m: [
                        cos,
                        sin,
                        cx - cx * cos - cy * sin,
                        -sin,
                        cos,
                        cy + cx * sin - cy * cos,
                    ],
                }
            }
            AugmentOp::ShiftWidth { fraction } => {
                AffineTransform { m: [1.0, 0.0, fraction * w, 0.0, 1.0, 0.0] }
            }
            AugmentOp::ShiftHeight { fraction } => {
                AffineTransform { m: [1.0, 0.0, 0.0, 0.0, 1.0, fraction * h] }
            }
            AugmentOp::Scale { fraction } => {
                let k = 1.0 - fraction;
                AffineTransform { m: [k, 0.0, cx * (1.0 - k), 0.0, k, cy * (1.0 - k)] }
            }
            AugmentOp::Translate { dx, dy } => {
                AffineTransform { m: [1.0, 0.0, dx * w, 0.0, 1.0, dy * h] }
            }
            AugmentOp::FlipHorizontal => {
                AffineTransform { m: [-1.0, 0.0, w - 1.0, 0.0, 1.0, 0.0] }
            }
            AugmentOp::FlipVertical => {
                AffineTransform { m: [1.0, 0.0, 0.0, 0.0, -1.0, h - 1.0] }
            }
        }
    }
}

/// Combined affine for a sequence of ops applied in order.
pub fn ops_to_affine(ops: &[AugmentOp], img_w: u32, img_h: u32) -> AffineTransform {
    ops.iter().fold(AffineTransform::IDENTITY, |acc, op| {
        op.to_affine(img_w, img_h).after(&acc)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

/// Resample an image through an affine map. Destination pixels whose inverse
/// image falls outside the source take `fill`. Output dimensions equal the
/// input dimensions.
pub fn warp_image(
    img: &ImageBuffer,
    t: &AffineTransform,
    interpolation: Interpolation,
    fill: [u8; 3],
) -> Result<ImageBuffer, AugmentError> {
    let inv = t.invert()?;
    let w = img.width();
    let h = img.height();
    let mut out = ImageBuffer::new(w, h, fill).expect("same dimensions as input");
    let sample = |x: i64, y: i64| -> [u8; 3] {
        if x >= 0 && (x as u32) < w && y >= 0 && (y as u32) < h {
            img.get(x as u32, y as u32)
        } else {
            fill
        }
    };
    for dy in 0..h {
        for dx in 0..w {
            let (sx, sy) = inv.apply(dx as f64, dy as f64);
            let color = match interpolation {
                Interpolation::Nearest => sample(sx.round() as i64, sy.round() as i64),
                Interpolation::Bilinear => {
                    let x0 = sx.floor();
                    let y0 = sy.floor();
                    let fx = sx - x0;
                    let fy = sy - y0;
                    let (x0, y0) = (x0 as i64, y0 as i64);
                    let p00 = sample(x0, y0);
                    let p10 = sample(x0 + 1, y0);
                    let p01 = sample(x0, y0 + 1);
                    let p11 = sample(x0 + 1, y0 + 1);
                    let mut c = [0u8; 3];
                    for ch in 0..3 {
                        let top = p00[ch] as f64 * (1.0 - fx) + p10[ch] as f64 * fx;
                        let bottom = p01[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
                        c[ch] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
                    }
                    c
                }
            };
            out.set(dx, dy, color);
        }
    }
    Ok(out)
}

/// When a transformed box is discarded: the clipped box must keep at least
/// `min_frame_fraction` of the frame area and `min_keep_fraction` of its own
/// pre-clip area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropRule {
    pub min_frame_fraction: f64,
    pub min_keep_fraction: f64,
}

impl Default for DropRule {
    fn default() -> Self {
        Self { min_frame_fraction: 0.01, min_keep_fraction: 0.25 }
    }
}

/// Transform a normalized box through an affine map: transform the four
/// corners, take the axis-aligned hull, clip to the frame, and convert back.
/// Returns `None` when the drop rule discards the remnant.
pub fn transform_bbox(
    b: &NormBox,
    t: &AffineTransform,
    img_w: u32,
    img_h: u32,
    rule: &DropRule,
) -> Option<NormBox> {
    let w = img_w as f64;
    let h = img_h as f64;
    let (nx1, ny1, nx2, ny2) = b.corners();
    let corners = [
        (nx1 * w, ny1 * h),
        (nx2 * w, ny1 * h),
        (nx1 * w, ny2 * h),
        (nx2 * w, ny2 * h),
    ];
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (px, py) in corners {
        // The affine acts on pixel indices; continuous box coordinates sit
        // half a pixel above them.
        let (tx, ty) = t.apply(px - 0.5, py - 0.5);
        let (tx, ty) = (tx + 0.5, ty + 0.5);
        x_min = x_min.min(tx);
        x_max = x_max.max(tx);
        y_min = y_min.min(ty);
        y_max = y_max.max(ty);
    }
    let pre_clip_area = (x_max - x_min) * (y_max - y_min);
    let cx1 = x_min.clamp(0.0, w);
    let cx2 = x_max.clamp(0.0, w);
    let cy1 = y_min.clamp(0.0, h);
    let cy2 = y_max.clamp(0.0, h);
    let clipped_area = (cx2 - cx1) * (cy2 - cy1);
    if clipped_area <= 0.0
        || clipped_area < rule.min_frame_fraction * w * h
        || clipped_area < rule.min_keep_fraction * pre_clip_area
    {
        return None;
    }
    let pixel = PixelBox::new(cx1, cy1, cx2, cy2).ok()?;
    crate::geometry::pixel_to_norm(pixel, img_w, img_h).ok()
}

/// Plan for expanding a dataset: seed, output size, flip gating, and the
/// parameter ranges each op family draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub seed: u64,
    pub target_count: usize,
    pub flip_probability: f64,
    pub rotation_degrees: (f64, f64),
    pub shift_fraction: (f64, f64),
    pub scale_fraction: (f64, f64),
    pub translate_fraction: (f64, f64),
    pub max_ops_per_job: usize,
    pub interpolation: Interpolation,
    pub fill: [u8; 3],
    pub drop_rule: DropRule,
}

impl AugmentPlan {
    pub fn new(seed: u64, target_count: usize) -> Self {
        Self {
            seed,
            target_count,
            flip_probability: 0.5,
            rotation_degrees: (2.0, 45.0),
            shift_fraction: (0.06, 0.16),
            scale_fraction: (0.03, 0.16),
            translate_fraction: (0.02, 0.09),
            max_ops_per_job: 1,
            interpolation: Interpolation::Bilinear,
            fill: [0, 0, 0],
            drop_rule: DropRule::default(),
        }
    }
}

/// One unit of augmentation work: which source entry, which ops, and the
/// stem the output is written under. An empty op list is a verbatim copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentJob {
    pub source_stem: String,
    pub output_stem: String,
    pub ops: Vec<AugmentOp>,
}

/// Deterministically expand the plan into jobs. Every source entry appears
/// once unmodified; the remaining `target_count - n` jobs each draw a source
/// entry, one or more parameterized ops, and flips gated by
/// `flip_probability`.
pub fn sample_plan(plan: &AugmentPlan, source: &DatasetIndex) -> Result<Vec<AugmentJob>, AugmentError> {
    let n = source.len();
    if n == 0 {
        return Err(AugmentError::BadPlan("source dataset is empty".into()));
    }
    if plan.target_count < n {
        return Err(AugmentError::BadPlan(format!(
            "target count {} is below the source count {}",
            plan.target_count, n
        )));
    }
    if plan.max_ops_per_job == 0 {
        return Err(AugmentError::BadPlan("max_ops_per_job must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&plan.flip_probability) {
        return Err(AugmentError::BadPlan("flip_probability outside [0, 1]".into()));
    }

    let mut jobs: Vec<AugmentJob> = source
        .entries
        .iter()
        .map(|e| AugmentJob {
            source_stem: e.stem.clone(),
            output_stem: e.stem.clone(),
            ops: Vec::new(),
        })
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(plan.seed);
    for k in 0..plan.target_count - n {
        let entry = &source.entries[rng.random_range(0..n)];
        let mut ops = Vec::new();
        let base_ops = rng.random_range(1..=plan.max_ops_per_job);
        for _ in 0..base_ops {
            ops.push(sample_base_op(plan, &mut rng));
        }
        if rng.random_bool(plan.flip_probability) {
            ops.push(AugmentOp::FlipHorizontal);
        }
        if rng.random_bool(plan.flip_probability) {
            ops.push(AugmentOp::FlipVertical);
        }
        jobs.push(AugmentJob {
            source_stem: entry.stem.clone(),
            output_stem: format!("{}_aug{k:05}", entry.stem),
            ops,
        });
    }
    Ok(jobs)
}

fn sample_base_op(plan: &AugmentPlan, rng: &mut ChaCha12Rng) -> AugmentOp {
    let uniform = |rng: &mut ChaCha12Rng, (lo, hi): (f64, f64)| rng.random_range(lo..=hi);
    match rng.random_range(0..5u8) {
        0 => {
            let magnitude = uniform(rng, plan.rotation_degrees);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            AugmentOp::Rotate { degrees: sign * magnitude }
        }
        1 => AugmentOp::ShiftWidth { fraction: uniform(rng, plan.shift_fraction) },
        2 => AugmentOp::ShiftHeight { fraction: uniform(rng, plan.shift_fraction) },
        3 => AugmentOp::Scale { fraction: uniform(rng, plan.scale_fraction) },
        _ => AugmentOp::Translate {
            dx: uniform(rng, plan.translate_fraction),
            dy: uniform(rng, plan.translate_fraction),
        },
    }
}

/// What [`execute_jobs`] produced: stems written, and jobs skipped because
/// every transformed box fell off-frame.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AugmentOutcome {
    pub written: Vec<AugmentJob>,
    pub all_boxes_dropped: Vec<AugmentJob>,
}

fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Run a job list against a source dataset, writing `images/` and `labels/`
/// under `out_dir`. Copy jobs are byte-identical; transform jobs resample
/// the image and carry every annotation through the same affine. A job is
/// skipped (and reported) when the source had boxes and all of them dropped.
pub fn execute_jobs(
    source: &DatasetIndex,
    jobs: &[AugmentJob],
    plan: &AugmentPlan,
    out_dir: &Path,
) -> Result<AugmentOutcome, AugmentError> {
    let images_dir = out_dir.join("images");
    let labels_dir = out_dir.join("labels");
    for dir in [&images_dir, &labels_dir] {
        std::fs::create_dir_all(dir).map_err(|source| AugmentError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let by_stem: std::collections::BTreeMap<&str, &crate::annotations::DatasetEntry> =
        source.entries.iter().map(|e| (e.stem.as_str(), e)).collect();

    let mut outcome = AugmentOutcome::default();
    for job in jobs {
        let entry = by_stem.get(job.source_stem.as_str()).ok_or_else(|| {
            AugmentError::BadPlan(format!("job references unknown stem {:?}", job.source_stem))
        })?;
        let io_err = |path: &Path, source: std::io::Error| AugmentError::Io {
            path: path.to_path_buf(),
            source,
        };
        let image_bytes = std::fs::read(&entry.image).map_err(|e| io_err(&entry.image, e))?;
        let label_text =
            std::fs::read_to_string(&entry.label).map_err(|e| io_err(&entry.label, e))?;

        let out_image = images_dir.join(format!("{}.ppm", job.output_stem));
        let out_label = labels_dir.join(format!("{}.txt", job.output_stem));

        if job.ops.is_empty() {
            atomic_write(&out_image, &image_bytes).map_err(|e| io_err(&out_image, e))?;
            atomic_write(&out_label, label_text.as_bytes()).map_err(|e| io_err(&out_label, e))?;
            outcome.written.push(job.clone());
            continue;
        }

        let img = load_ppm(&image_bytes).map_err(|source| AugmentError::Raster {
            path: entry.image.clone(),
            source,
        })?;
        let records = parse_label_file(&label_text).map_err(|source| AugmentError::Labels {
            path: entry.label.clone(),
            source,
        })?;
        let t = ops_to_affine(&job.ops, img.width(), img.height());
        let warped = warp_image(&img, &t, plan.interpolation, plan.fill)?;
        let mut kept = Vec::new();
        for r in &records {
            if let Some(bbox) = transform_bbox(&r.bbox, &t, img.width(), img.height(), &plan.drop_rule) {
                kept.push(crate::annotations::AnnotationRecord { class_id: r.class_id, bbox });
            }
        }
        if kept.is_empty() && !records.is_empty() {
            outcome.all_boxes_dropped.push(job.clone());
            continue;
        }
        atomic_write(&out_image, &save_ppm(&warped)).map_err(|e| io_err(&out_image, e))?;
        atomic_write(&out_label, write_label_file(&kept).as_bytes())
            .map_err(|e| io_err(&out_label, e))?;
        outcome.written.push(job.clone());
    }
    Ok(outcome)
}

/// Sample a plan against the source and execute it in one call.
pub fn augment_dataset(
    source: &DatasetIndex,
    plan: &AugmentPlan,
    out_dir: &Path,
) -> Result<AugmentOutcome, AugmentError> {
    let jobs = sample_plan(plan, source)?;
    execute_jobs(source, &jobs, plan, out_dir)
}

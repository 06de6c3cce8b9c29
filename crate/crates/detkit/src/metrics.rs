//! Detection-vs-ground-truth matching and the evaluation stack: precision,
//! recall, 11-point interpolated AP, mAP (single threshold and sweep), and
//! the average-IoU summary.

use crate::geometry::{iou, PixelBox};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("line {line}: expected 7 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: field {field} ({token:?}) is not a number")]
    NotANumber { line: usize, field: usize, token: String },
    #[error("line {line}: confidence {0} outside [0, 1]", .conf)]
    BadConfidence { line: usize, conf: f64 },
    #[error("line {line}: box has no area")]
    BadBox { line: usize },
    #[error("mean average precision needs at least one class with ground truth")]
    NoClasses,
}

/// One predicted box with its confidence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: u32,
    pub bbox: PixelBox,
    pub confidence: f64,
}

/// One annotated box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub class_id: u32,
    pub bbox: PixelBox,
}

/// Matching threshold plus the sweep used for the averaged mAP report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub sweep: Vec<f64>,
}

impl EvalConfig {
    /// Thresholds 0.50, 0.55, ..., 0.95.
    pub fn full_sweep() -> Vec<f64> {
        (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
    }

    /// Just the two endpoints, 0.50 and 0.95.
    pub fn endpoint_sweep() -> Vec<f64> {
        vec![0.5, 0.95]
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5, sweep: Self::full_sweep() }
    }
}

/// Verdict for one detection, in confidence-ranked order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// Index into the original detection slice.
    pub detection: usize,
    pub true_positive: bool,
    /// Index into the ground-truth slice, for true positives.
    pub matched_gt: Option<usize>,
    /// IoU achieved against the matched ground truth (0 when unmatched).
    pub iou: f64,
}

/// Result of greedy one-to-one matching: per-detection outcomes ranked by
/// descending confidence, per-ground-truth matched flags, and the counts.
/// Always satisfies `tp + fn = |ground truths|` and `tp + fp = |detections|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchResult {
    pub outcomes: Vec<DetectionOutcome>,
    pub gt_matched: Vec<bool>,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
}

/// Greedy matcher: walk detections by descending confidence (ties keep input
/// order) and take the best-IoU unmatched ground truth in the same image and
/// class; the detection is a true positive iff that IoU reaches the
/// threshold. IoU ties break toward the lower ground-truth index. Each
/// ground truth is consumed at most once.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], cfg: &EvalConfig) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut gt_matched = vec![false; gts.len()];
    let mut outcomes = Vec::with_capacity(dets.len());
    let mut tp = 0;
    for det_idx in order {
        let det = &dets[det_idx];
        let mut best: Option<(usize, f64)> = None;
        for (gt_idx, gt) in gts.iter().enumerate() {
            if gt_matched[gt_idx] || gt.image_id != det.image_id || gt.class_id != det.class_id {
                continue;
            }
            let overlap = iou(&det.bbox, &gt.bbox);
            let better = match best {
                None => true,
                Some((_, best_iou)) => overlap > best_iou,
            };
            if better {
                best = Some((gt_idx, overlap));
            }
        }
        match best {
            Some((gt_idx, overlap)) if overlap >= cfg.iou_threshold => {
                gt_matched[gt_idx] = true;
                tp += 1;
                outcomes.push(DetectionOutcome {
                    detection: det_idx,
                    true_positive: true,
                    matched_gt: Some(gt_idx),
                    iou: overlap,
                });
            }
            _ => outcomes.push(DetectionOutcome {
                detection: det_idx,
                true_positive: false,
                matched_gt: None,
                iou: best.map(|(_, v)| v).unwrap_or(0.0),
            }),
        }
    }
    let fp = dets.len() - tp;
    let fn_count = gts.len() - tp;
    MatchResult { outcomes, gt_matched, tp, fp, fn_count }
}

/// A ratio that may be undefined; degenerate values carry 0 plus a flag so
/// batch evaluation never aborts on empty inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub degenerate: bool,
}

impl MetricValue {
    fn defined(value: f64) -> Self {
        Self { value, degenerate: false }
    }

    fn degenerate() -> Self {
        Self { value: 0.0, degenerate: true }
    }
}

/// TP / (TP + FP); degenerate when there are no detections.
pub fn precision(m: &MatchResult) -> MetricValue {
    if m.tp + m.fp == 0 {
        MetricValue::degenerate()
    } else {
        MetricValue::defined(m.tp as f64 / (m.tp + m.fp) as f64)
    }
}

/// TP / (TP + FN); degenerate when there is no ground truth.
pub fn recall(m: &MatchResult) -> MetricValue {
    if m.tp + m.fn_count == 0 {
        MetricValue::degenerate()
    } else {
        MetricValue::defined(m.tp as f64 / (m.tp + m.fn_count) as f64)
    }
}

/// One point of a precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative precision/recall as the ranked detection list is consumed.
/// Recall is non-decreasing along the returned curve.
pub fn pr_curve(m: &MatchResult, num_gt: usize) -> Vec<PrPoint> {
    let mut points = Vec::with_capacity(m.outcomes.len());
    let mut tp = 0usize;
    let mut seen = 0usize;
    for outcome in &m.outcomes {
        seen += 1;
        if outcome.true_positive {
            tp += 1;
        }
        points.push(PrPoint {
            recall: tp as f64 / num_gt as f64,
            precision: tp as f64 / seen as f64,
        });
    }
    points
}

/// 11-point interpolated average precision for a single class: interpolated
/// precision (the max precision at recall >= r) averaged over
/// r in {0.0, 0.1, ..., 1.0}. Degenerate when there is no ground truth.
pub fn ap_11point(dets: &[Detection], gts: &[GroundTruth], cfg: &EvalConfig) -> MetricValue {
    if gts.is_empty() {
        return MetricValue::degenerate();
    }
    let m = match_detections(dets, gts, cfg);
    let curve = pr_curve(&m, gts.len());
    let mut sum = 0.0;
    for i in 0..=10 {
        let r = i as f64 / 10.0;
        let p_interp = curve
            .iter()
            .filter(|pt| pt.recall >= r - 1e-12)
            .map(|pt| pt.precision)
            .fold(0.0, f64::max);
        sum += p_interp;
    }
    MetricValue::defined(sum / 11.0)
}

/// Mean of per-class AP over every class present in the ground truth.
/// Errors when no class has ground truth.
pub fn mean_average_precision(
    dets: &[Detection],
    gts: &[GroundTruth],
    cfg: &EvalConfig,
) -> Result<MetricValue, MetricsError> {
    let classes: BTreeSet<u32> = gts.iter().map(|g| g.class_id).collect();
    if classes.is_empty() {
        return Err(MetricsError::NoClasses);
    }
    let per_class: Vec<f64> = classes
        .iter()
        .map(|&class| {
            let class_dets: Vec<Detection> =
                dets.iter().filter(|d| d.class_id == class).cloned().collect();
            let class_gts: Vec<GroundTruth> =
                gts.iter().filter(|g| g.class_id == class).cloned().collect();
            ap_11point(&class_dets, &class_gts, cfg).value
        })
        .collect();
    // Mean shifted by the first value: exact when every class scores the
    // same, which keeps M identical classes at exactly the single-class AP.
    let anchor = per_class[0];
    let mean = anchor
        + per_class.iter().map(|v| v - anchor).sum::<f64>() / per_class.len() as f64;
    Ok(MetricValue::defined(mean))
}

/// mAP at every sweep threshold plus their mean.
pub fn map_sweep(
    dets: &[Detection],
    gts: &[GroundTruth],
    cfg: &EvalConfig,
) -> Result<(Vec<(f64, f64)>, f64), MetricsError> {
    let mut per_threshold = Vec::with_capacity(cfg.sweep.len());
    let mut sum = 0.0;
    for &threshold in &cfg.sweep {
        let one = EvalConfig { iou_threshold: threshold, sweep: Vec::new() };
        let v = mean_average_precision(dets, gts, &one)?.value;
        per_threshold.push((threshold, v));
        sum += v;
    }
    Ok((per_threshold, sum / cfg.sweep.len().max(1) as f64))
}

/// Arithmetic mean of achieved IoU over true-positive matches; `None` when
/// nothing matched (reported as absent, never as 0).
pub fn average_iou(m: &MatchResult) -> Option<f64> {
    let ious: Vec<f64> = m
        .outcomes
        .iter()
        .filter(|o| o.true_positive)
        .map(|o| o.iou)
        .collect();
    if ious.is_empty() {
        None
    } else {
        Some(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

/// Parse the detections text format: one per line,
/// `image_id class confidence x1 y1 x2 y2`.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>, MetricsError> {
    let mut dets = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(MetricsError::FieldCount { line, found: fields.len() });
        }
        let num = |field: usize| -> Result<f64, MetricsError> {
            fields[field].parse().map_err(|_| MetricsError::NotANumber {
                line,
                field: field + 1,
                token: fields[field].to_string(),
            })
        };
        let class_id = num(1)?;
        let confidence = num(2)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::BadConfidence { line, conf: confidence });
        }
        let bbox = PixelBox::new(num(3)?, num(4)?, num(5)?, num(6)?)
            .map_err(|_| MetricsError::BadBox { line })?;
        dets.push(Detection {
            image_id: fields[0].to_string(),
            class_id: class_id as u32,
            bbox,
            confidence,
        });
    }
    Ok(dets)
}

/// Serialize detections in the same text format, with fixed precision so
/// output is deterministic.
pub fn write_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        out.push_str(&format!(
            "{} {} {:.6} {:.4} {:.4} {:.4} {:.4}\n",
            d.image_id, d.class_id, d.confidence, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2
        ));
    }
    out
}

/// Full evaluation summary for one run. Operating-point metrics (precision,
/// recall, average IoU) are computed on detections at or above
/// `confidence_threshold`; ranking metrics (AP, mAP) use every detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
    pub num_detections: usize,
    pub num_ground_truths: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub ap: MetricValue,
    pub map: MetricValue,
    pub map_sweep_thresholds: Vec<(f64, f64)>,
    pub map_sweep_mean: f64,
    pub average_iou: Option<f64>,
}

/// Evaluate one detections set against one ground-truth set.
pub fn build_report(
    dets: &[Detection],
    gts: &[GroundTruth],
    cfg: &EvalConfig,
    confidence_threshold: f64,
) -> EvalReport {
    let operating: Vec<Detection> = dets
        .iter()
        .filter(|d| d.confidence >= confidence_threshold)
        .cloned()
        .collect();
    let m = match_detections(&operating, gts, cfg);
    let map = mean_average_precision(dets, gts, cfg).unwrap_or_else(|_| MetricValue::degenerate());
    let (per_threshold, sweep_mean) = map_sweep(dets, gts, cfg)
        .unwrap_or_else(|_| (cfg.sweep.iter().map(|&t| (t, 0.0)).collect(), 0.0));
    EvalReport {
        iou_threshold: cfg.iou_threshold,
        confidence_threshold,
        num_detections: dets.len(),
        num_ground_truths: gts.len(),
        true_positives: m.tp,
        false_positives: m.fp,
        false_negatives: m.fn_count,
        precision: precision(&m),
        recall: recall(&m),
        ap: ap_11point(dets, gts, cfg),
        map,
        map_sweep_thresholds: per_threshold,
        map_sweep_mean: sweep_mean,
        average_iou: average_iou(&m),
    }
}

impl EvalReport {
    /// Aligned-column human-readable rendering. Average IoU keeps the
    /// two-decimal convention of the summary tables it feeds.
    pub fn render_text(&self) -> String {
        let fmt_metric = |m: &MetricValue| {
            if m.degenerate {
                "0.0000 (degenerate)".to_string()
            } else {
                format!("{:.4}", m.value)
            }
        };
        let mut rows: Vec<(String, String)> = vec![
            ("iou_threshold".into(), format!("{:.2}", self.iou_threshold)),
            ("confidence_threshold".into(), format!("{:.2}", self.confidence_threshold)),
            ("detections".into(), self.num_detections.to_string()),
            ("ground_truths".into(), self.num_ground_truths.to_string()),
            ("true_positives".into(), self.true_positives.to_string()),
            ("false_positives".into(), self.false_positives.to_string()),
            ("false_negatives".into(), self.false_negatives.to_string()),
            ("precision".into(), fmt_metric(&self.precision)),
            ("recall".into(), fmt_metric(&self.recall)),
            (format!("ap@{:.2}", self.iou_threshold), fmt_metric(&self.ap)),
            (format!("map@{:.2}", self.iou_threshold), fmt_metric(&self.map)),
            ("map_sweep_mean".into(), format!("{:.4}", self.map_sweep_mean)),
            (
                "average_iou".into(),
                match self.average_iou {
                    Some(v) => format!("{v:.2}"),
                    None => "absent".into(),
                },
            ),
        ];
        for (t, v) in &self.map_sweep_thresholds {
            rows.push((format!("map_sweep@{t:.2}"), format!("{v:.4}")));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

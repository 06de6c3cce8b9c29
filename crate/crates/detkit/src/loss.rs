//! Box-regression and objectness losses over anchor grids, their hand-derived
//! gradients, and a small gradient-descent fitting demo.
//!
//! Both losses run on raw coordinate values; any activation belongs to the
//! decoder, not here. The box term weights each occupied anchor's squared
//! errors by `(2 - w * h)` using the *predicted* size, so the gradient picks
//! up a product-rule term on the w/h channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("grid shapes differ: prediction {pred_s}x{pred_s}x{pred_b}, target {tgt_s}x{tgt_s}x{tgt_b}")]
    ShapeMismatch { pred_s: usize, pred_b: usize, tgt_s: usize, tgt_b: usize },
    #[error("cell count {found} does not match grid {s}x{s} with {b} anchors")]
    BadCellCount { s: usize, b: usize, found: usize },
    #[error("gradient descent needs at least one step")]
    NoSteps,
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("loss became non-finite at step {step}")]
    NonFinite { step: usize },
}

/// Predicted values for one (cell, anchor) slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredCell {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub conf: f64,
}

/// Target values for one (cell, anchor) slot. Box fields are meaningful only
/// where `obj` is set; the confidence target equals the indicator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetCell {
    pub obj: bool,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl TargetCell {
    pub fn conf(&self) -> f64 {
        if self.obj {
            1.0
        } else {
            0.0
        }
    }
}

/// S x S grid with B anchors per cell, flattened row-major with the anchor
/// index minor: slot (cell, anchor) lives at `cell * B + anchor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPrediction {
    pub s: usize,
    pub b: usize,
    pub cells: Vec<PredCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTarget {
    pub s: usize,
    pub b: usize,
    pub cells: Vec<TargetCell>,
}

impl GridPrediction {
    pub fn new(s: usize, b: usize, cells: Vec<PredCell>) -> Result<Self, LossError> {
        if cells.len() != s * s * b {
            return Err(LossError::BadCellCount { s, b, found: cells.len() });
        }
        Ok(Self { s, b, cells })
    }
}

impl GridTarget {
    pub fn new(s: usize, b: usize, cells: Vec<TargetCell>) -> Result<Self, LossError> {
        if cells.len() != s * s * b {
            return Err(LossError::BadCellCount { s, b, found: cells.len() });
        }
        Ok(Self { s, b, cells })
    }
}

/// Loss coefficients. The box gain defaults to 0.05; background confidence
/// is down-weighted to 0.5 against 1.0 for occupied anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub coord: f64,
    pub obj: f64,
    pub noobj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { coord: 0.05, obj: 1.0, noobj: 0.5 }
    }
}

fn check_shapes(pred: &GridPrediction, tgt: &GridTarget) -> Result<(), LossError> {
    if pred.s != tgt.s || pred.b != tgt.b {
        return Err(LossError::ShapeMismatch {
            pred_s: pred.s,
            pred_b: pred.b,
            tgt_s: tgt.s,
            tgt_b: tgt.b,
        });
    }
    Ok(())
}

/// Coordinate regression loss: over occupied slots only,
/// `coord * (2 - w*h) * [(x-x̂)² + (y-ŷ)² + (w-ŵ)² + (h-ĥ)²]`.
pub fn box_loss(pred: &GridPrediction, tgt: &GridTarget, weights: &LossWeights) -> Result<f64, LossError> {
    check_shapes(pred, tgt)?;
    let mut total = 0.0;
    for (p, t) in pred.cells.iter().zip(&tgt.cells) {
        if !t.obj {
            continue;
        }
        let scale = 2.0 - p.w * p.h;
        let err = (p.x - t.x).powi(2) + (p.y - t.y).powi(2) + (p.w - t.w).powi(2) + (p.h - t.h).powi(2);
        total += scale * err;
    }
    Ok(weights.coord * total)
}

/// Confidence loss: squared confidence error, weighted `noobj` on background
/// slots and `obj` on occupied slots.
pub fn objectness_loss(pred: &GridPrediction, tgt: &GridTarget, weights: &LossWeights) -> Result<f64, LossError> {
    check_shapes(pred, tgt)?;
    let mut obj_term = 0.0;
    let mut noobj_term = 0.0;
    for (p, t) in pred.cells.iter().zip(&tgt.cells) {
        let err = (p.conf - t.conf()).powi(2);
        if t.obj {
            obj_term += err;
        } else {
            noobj_term += err;
        }
    }
    Ok(weights.noobj * noobj_term + weights.obj * obj_term)
}

pub fn total_loss(pred: &GridPrediction, tgt: &GridTarget, weights: &LossWeights) -> Result<f64, LossError> {
    Ok(box_loss(pred, tgt, weights)? + objectness_loss(pred, tgt, weights)?)
}

/// Closed-form partials of [`total_loss`] with respect to every prediction
/// entry, shaped like the prediction. Gradient entries are ordered
/// (x, y, w, h, conf) to match [`PredCell`].
pub fn analytic_gradient(
    pred: &GridPrediction,
    tgt: &GridTarget,
    weights: &LossWeights,
) -> Result<Vec<[f64; 5]>, LossError> {
    check_shapes(pred, tgt)?;
    let mut grad = vec![[0.0; 5]; pred.cells.len()];
    for ((p, t), g) in pred.cells.iter().zip(&tgt.cells).zip(grad.iter_mut()) {
        if t.obj {
            let scale = 2.0 - p.w * p.h;
            let err = (p.x - t.x).powi(2)
                + (p.y - t.y).powi(2)
                + (p.w - t.w).powi(2)
                + (p.h - t.h).powi(2);
            g[0] = weights.coord * scale * 2.0 * (p.x - t.x);
            g[1] = weights.coord * scale * 2.0 * (p.y - t.y);
            // d(2 - wh)/dw = -h and d/dh = -w feed the product rule.
            g[2] = weights.coord * (-p.h * err + scale * 2.0 * (p.w - t.w));
            g[3] = weights.coord * (-p.w * err + scale * 2.0 * (p.h - t.h));
            g[4] = weights.obj * 2.0 * (p.conf - 1.0);
        } else {
            g[4] = weights.noobj * 2.0 * p.conf;
        }
    }
    Ok(grad)
}

/// Loss trajectory and final state from [`fit_boxes`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    /// Loss before any update, then after each step: `steps + 1` values.
    pub losses: Vec<f64>,
    pub final_pred: GridPrediction,
}

/// Plain gradient descent on the total loss.
pub fn fit_boxes(
    initial: &GridPrediction,
    tgt: &GridTarget,
    weights: &LossWeights,
    learning_rate: f64,
    steps: usize,
) -> Result<FitResult, LossError> {
    if steps == 0 {
        return Err(LossError::NoSteps);
    }
    if !learning_rate.is_finite() || learning_rate < 0.0 {
        return Err(LossError::BadLearningRate(learning_rate));
    }
    let mut pred = initial.clone();
    let mut losses = Vec::with_capacity(steps + 1);
    let first = total_loss(&pred, tgt, weights)?;
    if !first.is_finite() {
        return Err(LossError::NonFinite { step: 0 });
    }
    losses.push(first);
    for step in 1..=steps {
        let grad = analytic_gradient(&pred, tgt, weights)?;
        for (cell, g) in pred.cells.iter_mut().zip(&grad) {
            cell.x -= learning_rate * g[0];
            cell.y -= learning_rate * g[1];
            cell.w -= learning_rate * g[2];
            cell.h -= learning_rate * g[3];
            cell.conf -= learning_rate * g[4];
        }
        let loss = total_loss(&pred, tgt, weights)?;
        if !loss.is_finite() {
            return Err(LossError::NonFinite { step });
        }
        losses.push(loss);
    }
    Ok(FitResult { losses, final_pred: pred })
}

/// On-disk fixture for the demo: grid shape, weights, and flat row-major
/// 5-tuples, `[x, y, w, h, conf]` for predictions and `[x, y, w, h, obj]`
/// with a 0/1 indicator for targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossFixture {
    pub grid: usize,
    pub anchors_per_cell: usize,
    pub weights: LossWeights,
    pub prediction: Vec<[f64; 5]>,
    pub target: Vec<[f64; 5]>,
}

impl LossFixture {
    pub fn parse(text: &str) -> Result<(GridPrediction, GridTarget, LossWeights), LossFixtureError> {
        let fixture: LossFixture = serde_json::from_str(text)?;
        let pred_cells = fixture
            .prediction
            .iter()
            .map(|&[x, y, w, h, conf]| PredCell { x, y, w, h, conf })
            .collect();
        let tgt_cells = fixture
            .target
            .iter()
            .map(|&[x, y, w, h, obj]| TargetCell { obj: obj != 0.0, x, y, w, h })
            .collect();
        let pred = GridPrediction::new(fixture.grid, fixture.anchors_per_cell, pred_cells)?;
        let tgt = GridTarget::new(fixture.grid, fixture.anchors_per_cell, tgt_cells)?;
        Ok((pred, tgt, fixture.weights))
    }
}

#[derive(Debug, Error)]
pub enum LossFixtureError {
    #[error("fixture is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Shape(#[from] LossError),
}

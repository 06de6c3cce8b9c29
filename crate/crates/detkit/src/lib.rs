//! Toolkit for the non-trained half of a single-stage detection pipeline:
//! YOLO-style label I/O, dataset splitting, bbox-consistent geometric
//! augmentation, multi-scale anchor decoding with NMS, detection losses with
//! hand-derived gradients, and the precision/recall/AP/mAP/IoU evaluation
//! stack.
//!
//! Everything is deterministic given explicit seeds, file formats are
//! byte-reproducible, and each numeric path is validated against an
//! independent oracle in the test suites.

pub mod annotations;
pub mod augment;
pub mod decoder;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod raster;

pub use geometry::{giou, iou, norm_to_pixel, pixel_to_norm, NormBox, PixelBox};
pub use metrics::{Detection, GroundTruth};

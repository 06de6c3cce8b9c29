//! `detkit` command line: split, augment, decode, evaluate, loss-demo, and
//! report subcommands over file-based inputs and outputs.
//!
//! Exit codes: 0 on success, 2 for input/format problems, 3 for numeric
//! failures (non-finite or non-decreasing loss in the demo).

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "detkit", version, about = "Detection-pipeline toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a dataset into train/val/test trees with a manifest.
    Split {
        /// Dataset root holding images/ and labels/
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Shuffle seed; mandatory so reruns are reproducible
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.20)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0.20)]
        val_fraction: f64,
        /// Class names recorded in the emitted data.yaml
        #[arg(long, value_delimiter = ',', default_value = "polyp")]
        class_names: Vec<String>,
    },
    /// Expand a dataset with seeded, box-consistent augmentation.
    Augment {
        /// Source dataset root holding images/ and labels/
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Total outputs including the unmodified originals
        #[arg(long)]
        target_count: usize,
        /// Optional plan JSON; flags override its seed and target count
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        flip_prob: Option<f64>,
        #[arg(long)]
        max_ops: Option<usize>,
        /// nearest | bilinear
        #[arg(long)]
        interpolation: Option<String>,
    },
    /// Decode a head-volume JSON file into a detections text file.
    Decode {
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional decoder config JSON (input size, strides, anchors)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        conf_thresh: Option<f64>,
        #[arg(long)]
        nms_thresh: Option<f64>,
        /// Skip non-maximum suppression entirely
        #[arg(long, default_value_t = false)]
        no_nms: bool,
        /// Image id stamped on every detection; defaults to the volume stem
        #[arg(long)]
        image_id: Option<String>,
    },
    /// Evaluate a detections file against dataset ground truth.
    Evaluate {
        /// Ground-truth dataset root holding images/ and labels/
        gt: PathBuf,
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_thresh: f64,
        /// Operating-point confidence threshold for precision/recall/IoU
        #[arg(long, default_value_t = 0.25)]
        conf_thresh: f64,
        /// mAP sweep: "full" = 0.50..0.95 step 0.05, "pair" = {0.50, 0.95}
        #[arg(long, default_value = "full")]
        sweep: String,
    },
    /// Gradient-descent fitting demo on a loss fixture.
    LossDemo {
        fixture: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
    },
    /// Tabulate evaluation reports from one or more run directories.
    Report {
        /// Run directories produced by `evaluate`
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Split { dataset, out, seed, test_fraction, val_fraction, class_names } => {
            commands::split(&dataset, &out, seed, test_fraction, val_fraction, &class_names)
        }
        Command::Augment { source, out, seed, target_count, config, flip_prob, max_ops, interpolation } => {
            commands::augment(
                &source,
                &out,
                seed,
                target_count,
                config.as_deref(),
                flip_prob,
                max_ops,
                interpolation.as_deref(),
            )
        }
        Command::Decode { volume, out, config, conf_thresh, nms_thresh, no_nms, image_id } => {
            commands::decode(
                &volume,
                &out,
                config.as_deref(),
                conf_thresh,
                nms_thresh,
                no_nms,
                image_id.as_deref(),
            )
        }
        Command::Evaluate { gt, detections, out, iou_thresh, conf_thresh, sweep } => {
            commands::evaluate(&gt, &detections, &out, iou_thresh, conf_thresh, &sweep)
        }
        Command::LossDemo { fixture, out, lr, steps } => commands::loss_demo(&fixture, &out, lr, steps),
        Command::Report { runs, out } => commands::report(&runs, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err.message);
            ExitCode::from(err.code)
        }
    }
}

use anyhow::{anyhow, Context};
use detkit::annotations::{
    split_dataset, write_class_config, ClassConfig, DatasetIndex, SplitSpec,
};
use detkit::augment::{execute_jobs, sample_plan, AugmentPlan, Interpolation};
use detkit::decoder::{confidence_filter, decode_all, nms, DecoderConfig, HeadFile};
use detkit::geometry::norm_to_pixel;
use detkit::loss::{fit_boxes, LossFixture};
use detkit::metrics::{
    build_report, parse_detections, write_detections, EvalConfig, EvalReport, GroundTruth,
};
use detkit::raster::ppm_dimensions;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Error plus the process exit code it maps to: 2 for input/format problems,
/// 3 for numeric failures.
pub struct CliError {
    pub code: u8,
    pub message: anyhow::Error,
}

impl CliError {
    fn input(message: anyhow::Error) -> Self {
        Self { code: 2, message }
    }

    fn numeric(message: anyhow::Error) -> Self {
        Self { code: 3, message }
    }
}

trait InputExt<T> {
    fn or_input(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> InputExt<T> for Result<T, E> {
    fn or_input(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::input(e.into()))
    }
}

/// Every run drops its fully resolved parameters next to its outputs so a
/// replay needs nothing but this file and the inputs.
fn record_run_config<C: Serialize>(out_dir: &Path, config: &C) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .or_input()?;
    let path = out_dir.join("run_config.json");
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    std::fs::write(&path, text)
        .with_context(|| format!("writing {}", path.display()))
        .or_input()
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .or_input()?;
    }
    std::fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .or_input()
}

#[derive(Serialize)]
struct SplitRunConfig<'a> {
    command: &'static str,
    dataset: &'a Path,
    out: &'a Path,
    seed: u64,
    test_fraction: f64,
    val_fraction: f64,
    class_names: &'a [String],
}

#[derive(Serialize)]
struct SplitManifest {
    seed: u64,
    test_fraction: f64,
    val_fraction: f64,
    counts: std::collections::BTreeMap<String, usize>,
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

pub fn split(
    dataset: &Path,
    out: &Path,
    seed: u64,
    test_fraction: f64,
    val_fraction: f64,
    class_names: &[String],
) -> Result<(), CliError> {
    record_run_config(
        out,
        &SplitRunConfig {
            command: "split",
            dataset,
            out,
            seed,
            test_fraction,
            val_fraction,
            class_names,
        },
    )?;
    let index = DatasetIndex::scan(dataset).or_input()?;
    let spec = SplitSpec { test_fraction, val_fraction_of_train: val_fraction, seed };
    let result = split_dataset(&index, &spec).or_input()?;

    let mut counts = std::collections::BTreeMap::new();
    for (name, part) in [("train", &result.train), ("val", &result.val), ("test", &result.test)] {
        counts.insert(name.to_string(), part.len());
        let images = out.join(name).join("images");
        let labels = out.join(name).join("labels");
        for dir in [&images, &labels] {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))
                .or_input()?;
        }
        for entry in &part.entries {
            std::fs::copy(&entry.image, images.join(format!("{}.ppm", entry.stem)))
                .with_context(|| format!("copying {}", entry.image.display()))
                .or_input()?;
            std::fs::copy(&entry.label, labels.join(format!("{}.txt", entry.stem)))
                .with_context(|| format!("copying {}", entry.label.display()))
                .or_input()?;
        }
    }

    let stems = |index: &DatasetIndex| index.entries.iter().map(|e| e.stem.clone()).collect();
    let manifest = SplitManifest {
        seed,
        test_fraction,
        val_fraction,
        counts,
        train: stems(&result.train),
        val: stems(&result.val),
        test: stems(&result.test),
    };
    write_out(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes(),
    )?;

    let config = ClassConfig {
        class_names: class_names.to_vec(),
        train_path: "train/images".into(),
        val_path: "val/images".into(),
        test_path: "test/images".into(),
    };
    write_out(&out.join("data.yaml"), write_class_config(&config).as_bytes())?;
    println!("split {} entries: {}", index.len(), result);
    Ok(())
}

#[derive(Serialize)]
struct AugmentRunConfig<'a> {
    command: &'static str,
    source: &'a Path,
    out: &'a Path,
    plan: &'a AugmentPlan,
}

#[derive(Serialize)]
struct AugmentManifest<'a> {
    plan: &'a AugmentPlan,
    jobs: &'a [detkit::augment::AugmentJob],
    written: usize,
    all_boxes_dropped: &'a [detkit::augment::AugmentJob],
}

#[allow(clippy::too_many_arguments)]
pub fn augment(
    source: &Path,
    out: &Path,
    seed: u64,
    target_count: usize,
    config: Option<&Path>,
    flip_prob: Option<f64>,
    max_ops: Option<usize>,
    interpolation: Option<&str>,
) -> Result<(), CliError> {
    let mut plan = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .or_input()?;
            serde_json::from_str::<AugmentPlan>(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .or_input()?
        }
        None => AugmentPlan::new(seed, target_count),
    };
    // flags override config-file values
    plan.seed = seed;
    plan.target_count = target_count;
    if let Some(p) = flip_prob {
        plan.flip_probability = p;
    }
    if let Some(m) = max_ops {
        plan.max_ops_per_job = m;
    }
    if let Some(name) = interpolation {
        plan.interpolation = match name {
            "nearest" => Interpolation::Nearest,
            "bilinear" => Interpolation::Bilinear,
            other => return Err(CliError::input(anyhow!("unknown interpolation {other:?}"))),
        };
    }

    record_run_config(out, &AugmentRunConfig { command: "augment", source, out, plan: &plan })?;
    let index = DatasetIndex::scan(source).or_input()?;
    let jobs = sample_plan(&plan, &index).or_input()?;
    let outcome = execute_jobs(&index, &jobs, &plan, out).or_input()?;
    let manifest = AugmentManifest {
        plan: &plan,
        jobs: &jobs,
        written: outcome.written.len(),
        all_boxes_dropped: &outcome.all_boxes_dropped,
    };
    write_out(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes(),
    )?;
    println!(
        "augmented {} -> {} outputs ({} dropped for losing every box)",
        index.len(),
        outcome.written.len(),
        outcome.all_boxes_dropped.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct DecodeRunConfig<'a> {
    command: &'static str,
    volume: &'a Path,
    out: &'a Path,
    image_id: &'a str,
    nms_enabled: bool,
    decoder: &'a DecoderConfig,
}

pub fn decode(
    volume_path: &Path,
    out: &Path,
    config: Option<&Path>,
    conf_thresh: Option<f64>,
    nms_thresh: Option<f64>,
    no_nms: bool,
    image_id: Option<&str>,
) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .or_input()?;
            serde_json::from_str::<DecoderConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .or_input()?
        }
        None => DecoderConfig::default(),
    };
    if let Some(t) = conf_thresh {
        cfg.confidence_threshold = t;
    }
    if let Some(t) = nms_thresh {
        cfg.nms_iou_threshold = t;
    }
    let stem = volume_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".into());
    let image_id = image_id.unwrap_or(&stem);

    let text = std::fs::read_to_string(volume_path)
        .with_context(|| format!("reading {}", volume_path.display()))
        .or_input()?;
    let head = HeadFile::from_json(&text)
        .with_context(|| format!("parsing {}", volume_path.display()))
        .or_input()?;
    let mut cfg_for_input = cfg.clone();
    cfg_for_input.input_size = head.input_size;

    record_run_config(
        out,
        &DecodeRunConfig {
            command: "decode",
            volume: volume_path,
            out,
            image_id,
            nms_enabled: !no_nms,
            decoder: &cfg_for_input,
        },
    )?;

    let mut dets = decode_all(&head, &cfg_for_input, image_id).or_input()?;
    dets = confidence_filter(dets, cfg_for_input.confidence_threshold);
    if !no_nms {
        dets = nms(&dets, cfg_for_input.nms_iou_threshold);
    }
    write_out(&out.join("detections.txt"), write_detections(&dets).as_bytes())?;
    println!("decoded {} detections", dets.len());
    Ok(())
}

#[derive(Serialize)]
struct EvaluateRunConfig<'a> {
    command: &'static str,
    gt: &'a Path,
    detections: &'a Path,
    out: &'a Path,
    iou_threshold: f64,
    confidence_threshold: f64,
    sweep: &'a [f64],
}

/// Ground truth from the dataset layout: every label is projected to pixel
/// space using its own image's dimensions; the stem is the image id.
fn load_ground_truth(gt_dir: &Path) -> Result<Vec<GroundTruth>, CliError> {
    let index = DatasetIndex::scan(gt_dir).or_input()?;
    let mut gts = Vec::new();
    for entry in &index.entries {
        let bytes = std::fs::read(&entry.image)
            .with_context(|| format!("reading {}", entry.image.display()))
            .or_input()?;
        let (w, h) = ppm_dimensions(&bytes)
            .with_context(|| format!("parsing {}", entry.image.display()))
            .or_input()?;
        let text = std::fs::read_to_string(&entry.label)
            .with_context(|| format!("reading {}", entry.label.display()))
            .or_input()?;
        let records = detkit::annotations::parse_label_file(&text)
            .with_context(|| format!("parsing {}", entry.label.display()))
            .or_input()?;
        for record in records {
            let bbox = norm_to_pixel(record.bbox, w, h)
                .with_context(|| format!("label box in {}", entry.label.display()))
                .or_input()?;
            gts.push(GroundTruth { image_id: entry.stem.clone(), class_id: record.class_id, bbox });
        }
    }
    Ok(gts)
}

pub fn evaluate(
    gt_dir: &Path,
    detections_path: &Path,
    out: &Path,
    iou_thresh: f64,
    conf_thresh: f64,
    sweep: &str,
) -> Result<(), CliError> {
    let sweep_values = match sweep {
        "full" => EvalConfig::full_sweep(),
        "pair" => EvalConfig::endpoint_sweep(),
        other => return Err(CliError::input(anyhow!("unknown sweep {other:?}, expected full|pair"))),
    };
    record_run_config(
        out,
        &EvaluateRunConfig {
            command: "evaluate",
            gt: gt_dir,
            detections: detections_path,
            out,
            iou_threshold: iou_thresh,
            confidence_threshold: conf_thresh,
            sweep: &sweep_values,
        },
    )?;
    let gts = load_ground_truth(gt_dir)?;
    let text = std::fs::read_to_string(detections_path)
        .with_context(|| format!("reading {}", detections_path.display()))
        .or_input()?;
    let dets = parse_detections(&text)
        .with_context(|| format!("parsing {}", detections_path.display()))
        .or_input()?;

    let cfg = EvalConfig { iou_threshold: iou_thresh, sweep: sweep_values };
    let report = build_report(&dets, &gts, &cfg, conf_thresh);
    write_out(
        &out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes").as_bytes(),
    )?;
    let rendered = report.render_text();
    write_out(&out.join("report.txt"), rendered.as_bytes())?;
    print!("{rendered}");
    Ok(())
}

#[derive(Serialize)]
struct LossDemoRunConfig<'a> {
    command: &'static str,
    fixture: &'a Path,
    out: &'a Path,
    learning_rate: f64,
    steps: usize,
}

pub fn loss_demo(fixture_path: &Path, out: &Path, lr: f64, steps: usize) -> Result<(), CliError> {
    record_run_config(
        out,
        &LossDemoRunConfig { command: "loss-demo", fixture: fixture_path, out, learning_rate: lr, steps },
    )?;
    let text = std::fs::read_to_string(fixture_path)
        .with_context(|| format!("reading {}", fixture_path.display()))
        .or_input()?;
    let (pred, tgt, weights) = LossFixture::parse(&text)
        .with_context(|| format!("parsing {}", fixture_path.display()))
        .or_input()?;
    if steps == 0 {
        return Err(CliError::input(anyhow!("steps must be at least 1")));
    }
    let fit = fit_boxes(&pred, &tgt, &weights, lr, steps).map_err(|e| match e {
        detkit::loss::LossError::NonFinite { .. } => CliError::numeric(e.into()),
        other => CliError::input(other.into()),
    })?;

    let mut csv = String::from("step,loss\n");
    for (step, loss) in fit.losses.iter().enumerate() {
        csv.push_str(&format!("{step},{loss:.12e}\n"));
    }
    write_out(&out.join("trajectory.csv"), csv.as_bytes())?;

    let initial = fit.losses[0];
    let final_loss = *fit.losses.last().expect("at least one loss value");
    let summary = format!(
        "initial {initial:.6e}\nfinal {final_loss:.6e}\nreduction {:.4}%\n",
        if initial > 0.0 { 100.0 * (1.0 - final_loss / initial) } else { 0.0 }
    );
    write_out(&out.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");

    // demo contract: the loss must strictly decrease until it reaches zero
    for (step, pair) in fit.losses.windows(2).enumerate() {
        if pair[0] > 0.0 && pair[1] >= pair[0] {
            return Err(CliError::numeric(anyhow!(
                "loss failed to decrease at step {}: {} -> {}",
                step + 1,
                pair[0],
                pair[1]
            )));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportRunConfig<'a> {
    command: &'static str,
    runs: &'a [PathBuf],
    out: &'a Path,
}

pub fn report(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if runs.is_empty() {
        return Err(CliError::input(anyhow!("need at least one run directory")));
    }
    record_run_config(out, &ReportRunConfig { command: "report", runs, out })?;

    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    for run in runs {
        let path = run.join("report.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))
            .or_input()?;
        let report: EvalReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .or_input()?;
        let name = run
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| run.display().to_string());
        rows.push((name, report));
    }

    const COLUMNS: [&str; 7] =
        ["run", "precision", "recall", "ap", "map", "map_sweep", "avg_iou"];
    let cells = |name: &str, r: &EvalReport| -> Vec<String> {
        vec![
            name.to_string(),
            format!("{:.4}", r.precision.value),
            format!("{:.4}", r.recall.value),
            format!("{:.4}", r.ap.value),
            format!("{:.4}", r.map.value),
            format!("{:.4}", r.map_sweep_mean),
            match r.average_iou {
                Some(v) => format!("{v:.2}"),
                None => "absent".into(),
            },
        ]
    };

    let mut table_rows: Vec<Vec<String>> =
        vec![COLUMNS.iter().map(|s| s.to_string()).collect()];
    table_rows.extend(rows.iter().map(|(name, r)| cells(name, r)));
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| table_rows.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &table_rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, width)| format!("{cell:<width$}"))
            .collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
    }
    let mut csv = String::from("run,precision,recall,ap,map,map_sweep,avg_iou\n");
    for (name, r) in &rows {
        csv.push_str(&cells(name, r).join(","));
        csv.push('\n');
    }
    write_out(&out.join("comparison.txt"), text.as_bytes())?;
    write_out(&out.join("comparison.csv"), csv.as_bytes())?;
    print!("{text}");
    Ok(())
}

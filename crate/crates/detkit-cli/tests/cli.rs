//! End-to-end tests of the subcommand surface: flags, outputs, exit codes.

mod common;

use common::*;
use detkit::decoder::{DecoderConfig, HeadFile};

#[test]
fn split_writes_trees_manifest_and_config_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("data");
    write_dataset(&dataset, 20).unwrap();
    let out = tmp.path().join("out");
    let output = run(&[
        "split",
        dataset.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert!(output.status.success(), "{}", stderr_str(&output));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["test"], 4);
    assert_eq!(manifest["counts"]["val"], 3);
    assert_eq!(manifest["counts"]["train"], 13);
    assert!(out.join("run_config.json").is_file());
    assert!(out.join("data.yaml").is_file());
    // copied pairs stay byte-identical
    let train_images = std::fs::read_dir(out.join("train/images")).unwrap().count();
    assert_eq!(train_images, 13);
}

#[test]
fn split_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("data");
    write_dataset(&dataset, 12).unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let output = run(&[
            "split",
            dataset.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        assert!(output.status.success());
    }
    assert_eq!(
        std::fs::read(out_a.join("manifest.json")).unwrap(),
        std::fs::read(out_b.join("manifest.json")).unwrap()
    );
    assert_eq!(read_tree(&out_a), read_tree(&out_b));
}

#[test]
fn split_missing_label_exits_2_naming_the_stem() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("data");
    write_dataset(&dataset, 6).unwrap();
    std::fs::remove_file(dataset.join("labels/img0003.txt")).unwrap();
    let output = run(&[
        "split",
        dataset.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--seed",
        "1",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_str(&output).contains("img0003"), "{}", stderr_str(&output));
}

#[test]
fn augment_target_equals_source_is_pure_copy() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("data");
    write_dataset(&dataset, 5).unwrap();
    let out = tmp.path().join("out");
    let output = run(&[
        "augment",
        dataset.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
        "--target-count",
        "5",
    ]);
    assert!(output.status.success(), "{}", stderr_str(&output));
    for i in 0..5 {
        let stem = format!("img{i:04}");
        assert_eq!(
            std::fs::read(dataset.join("images").join(format!("{stem}.ppm"))).unwrap(),
            std::fs::read(out.join("images").join(format!("{stem}.ppm"))).unwrap()
        );
        assert_eq!(
            std::fs::read(dataset.join("labels").join(format!("{stem}.txt"))).unwrap(),
            std::fs::read(out.join("labels").join(format!("{stem}.txt"))).unwrap()
        );
    }
}

#[test]
fn augment_reruns_byte_identical_and_expands() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("data");
    write_dataset(&dataset, 10).unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let output = run(&[
            "augment",
            dataset.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "21",
            "--target-count",
            "18",
        ]);
        assert!(output.status.success(), "{}", stderr_str(&output));
    }
    assert_eq!(read_tree(&out_a), read_tree(&out_b));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("manifest.json")).unwrap()).unwrap();
    let written = manifest["written"].as_u64().unwrap();
    let dropped = manifest["all_boxes_dropped"].as_array().unwrap().len() as u64;
    assert_eq!(written + dropped, 18);
}

#[test]
fn augment_manifest_replays_to_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("data");
    write_dataset(&dataset, 6).unwrap();
    let out = tmp.path().join("out");
    let output = run(&[
        "augment",
        dataset.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "42",
        "--target-count",
        "12",
    ]);
    assert!(output.status.success(), "{}", stderr_str(&output));

    // replay the recorded job list through the library against the same source
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let plan: detkit::augment::AugmentPlan = serde_json::from_value(manifest["plan"].clone()).unwrap();
    let jobs: Vec<detkit::augment::AugmentJob> = serde_json::from_value(manifest["jobs"].clone()).unwrap();
    let index = detkit::annotations::DatasetIndex::scan(&dataset).unwrap();
    let replay = tmp.path().join("replay");
    detkit::augment::execute_jobs(&index, &jobs, &plan, &replay).unwrap();
    for sub in ["images", "labels"] {
        assert_eq!(read_tree(&out.join(sub)), read_tree(&replay.join(sub)));
    }
}

#[test]
fn decode_640_zero_volume_emits_25200_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let head = HeadFile::zeros(&DecoderConfig::default());
    let volume = tmp.path().join("zero640.json");
    std::fs::write(&volume, head.to_json()).unwrap();
    let out = tmp.path().join("out");
    let output = run(&[
        "decode",
        volume.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--conf-thresh",
        "0",
        "--no-nms",
    ]);
    assert!(output.status.success(), "{}", stderr_str(&output));
    let text = std::fs::read_to_string(out.join("detections.txt")).unwrap();
    assert_eq!(text.lines().count(), 25_200);
}

#[test]
fn decode_zero_volume_line_counts() {
    let tmp = tempfile::tempdir().unwrap();
    // 64-input keeps this test light: 3 * (8^2 + 4^2 + 2^2) = 252 boxes
    let cfg = DecoderConfig { input_size: 64, ..DecoderConfig::default() };
    let head = HeadFile::zeros(&cfg);
    let volume = tmp.path().join("volume.json");
    std::fs::write(&volume, head.to_json()).unwrap();

    let out = tmp.path().join("raw");
    let output = run(&[
        "decode",
        volume.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--conf-thresh",
        "0",
        "--no-nms",
    ]);
    assert!(output.status.success(), "{}", stderr_str(&output));
    let text = std::fs::read_to_string(out.join("detections.txt")).unwrap();
    assert_eq!(text.lines().count(), 252);
    // every confidence is sigmoid(0) = 0.5, so a 0.6 threshold drops all
    let out2 = tmp.path().join("cut");
    run(&[
        "decode",
        volume.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
        "--conf-thresh",
        "0.6",
        "--no-nms",
    ]);
    assert_eq!(std::fs::read_to_string(out2.join("detections.txt")).unwrap(), "");
}

#[test]
fn decode_rejects_malformed_volume_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let volume = tmp.path().join("volume.json");
    std::fs::write(&volume, "{\"input_size\": 64}").unwrap();
    let output = run(&[
        "decode",
        volume.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn evaluate_perfect_detections_score_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("data");
    write_dataset(&dataset, 3).unwrap();
    // detections exactly equal to the ground truth at confidence 1.0
    let mut lines = String::new();
    for i in 0..3 {
        let offset = (i % 8) as f64 * 2.0;
        lines.push_str(&format!(
            "img{i:04} 0 1.000000 {:.4} 8.0000 {:.4} 36.0000\n",
            8.0 + offset,
            40.0 + offset
        ));
    }
    let dets = tmp.path().join("dets.txt");
    std::fs::write(&dets, lines).unwrap();
    let out = tmp.path().join("out");
    let output = run(&[
        "evaluate",
        dataset.to_str().unwrap(),
        dets.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr_str(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["precision"]["value"], 1.0);
    assert_eq!(report["recall"]["value"], 1.0);
    assert_eq!(report["ap"]["value"], 1.0);
    assert_eq!(report["average_iou"], 1.0);
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("average_iou"));
}

#[test]
fn evaluate_empty_detections_degenerate_precision() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("data");
    write_dataset(&dataset, 2).unwrap();
    let dets = tmp.path().join("dets.txt");
    std::fs::write(&dets, "").unwrap();
    let out = tmp.path().join("out");
    let output = run(&[
        "evaluate",
        dataset.to_str().unwrap(),
        dets.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr_str(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["recall"]["value"], 0.0);
    assert_eq!(report["recall"]["degenerate"], false);
    assert_eq!(report["precision"]["degenerate"], true);
    assert_eq!(report["average_iou"], serde_json::Value::Null);
}

#[test]
fn evaluate_bad_detection_line_exits_2_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("data");
    write_dataset(&dataset, 2).unwrap();
    let dets = tmp.path().join("dets.txt");
    std::fs::write(&dets, "img0000 0 0.9 1 1 10 10\nimg0001 0 not-a-number 1 1 10 10\n").unwrap();
    let output = run(&[
        "evaluate",
        dataset.to_str().unwrap(),
        dets.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_str(&output).contains("line 2"), "{}", stderr_str(&output));
}

#[test]
fn evaluate_sweep_pair_uses_two_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("data");
    write_dataset(&dataset, 2).unwrap();
    let dets = tmp.path().join("dets.txt");
    std::fs::write(&dets, "").unwrap();
    let out = tmp.path().join("out");
    let output = run(&[
        "evaluate",
        dataset.to_str().unwrap(),
        dets.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--sweep",
        "pair",
    ]);
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["map_sweep_thresholds"].as_array().unwrap().len(), 2);
}

#[test]
fn loss_demo_contract_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = fixture("loss_demo.json");

    let out = tmp.path().join("ok");
    let output = run(&[
        "loss-demo",
        fixture.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--lr",
        "0.01",
        "--steps",
        "100",
    ]);
    assert!(output.status.success(), "{}", stderr_str(&output));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let losses: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 101);
    assert!(losses.windows(2).all(|p| p[1] < p[0]));

    // steps must be at least 1
    let output = run(&[
        "loss-demo",
        fixture.to_str().unwrap(),
        "--out",
        tmp.path().join("zero").to_str().unwrap(),
        "--steps",
        "0",
    ]);
    assert_eq!(output.status.code(), Some(2));

    // lr 0 freezes the loss: trajectory exists but the demo contract fails
    let out_frozen = tmp.path().join("frozen");
    let output = run(&[
        "loss-demo",
        fixture.to_str().unwrap(),
        "--out",
        out_frozen.to_str().unwrap(),
        "--lr",
        "0",
        "--steps",
        "5",
    ]);
    assert_eq!(output.status.code(), Some(3));
    assert!(out_frozen.join("trajectory.csv").is_file());
}

#[test]
fn report_tabulates_fixture_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut run_dirs = Vec::new();
    for model in ["yolov5s", "yolov5m", "yolov5l"] {
        let out = tmp.path().join(model);
        let output = run(&[
            "evaluate",
            fixture(&format!("table2/{model}/gt")).to_str().unwrap(),
            fixture(&format!("table2/{model}/detections.txt")).to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{}", stderr_str(&output));
        run_dirs.push(out);
    }
    let out = tmp.path().join("cmp");
    let mut args = vec!["report"];
    let strs: Vec<String> = run_dirs.iter().map(|p| p.to_string_lossy().into_owned()).collect();
    args.extend(strs.iter().map(|s| s.as_str()));
    args.extend(["--out", out.to_str().unwrap()]);
    let output = run(&args);
    assert!(output.status.success(), "{}", stderr_str(&output));

    let table = std::fs::read_to_string(out.join("comparison.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("run"));
    assert!(lines[1].contains("0.71"));
    assert!(lines[2].contains("0.82"));
    assert!(lines[3].contains("0.86"));
    // stable column order across invocations
    let again = tmp.path().join("cmp2");
    let mut args2 = vec!["report"];
    args2.extend(strs.iter().map(|s| s.as_str()));
    args2.extend(["--out", again.to_str().unwrap()]);
    run(&args2);
    assert_eq!(
        std::fs::read_to_string(out.join("comparison.csv")).unwrap(),
        std::fs::read_to_string(again.join("comparison.csv")).unwrap()
    );

    // single run still renders
    let single = tmp.path().join("single");
    let output = run(&["report", strs[0].as_str(), "--out", single.to_str().unwrap()]);
    assert!(output.status.success());
    assert_eq!(std::fs::read_to_string(single.join("comparison.txt")).unwrap().lines().count(), 2);

    // a missing report is an input error
    let output = run(&["report", tmp.path().join("nope").to_str().unwrap(), "--out", single.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

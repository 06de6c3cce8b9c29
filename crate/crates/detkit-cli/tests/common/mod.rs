//! Helpers shared by the CLI and acceptance suites.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_detkit"))
}

pub fn run(args: &[&str]) -> Output {
    cli().args(args).output().expect("binary runs")
}

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

/// Canonical P6 bytes for a uniform image with one solid rectangle.
pub fn marker_ppm(w: u32, h: u32, rect: (u32, u32, u32, u32), color: [u8; 3], bg: [u8; 3]) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let inside = x >= rect.0 && x < rect.2 && y >= rect.1 && y < rect.3;
            out.extend_from_slice(if inside { &color } else { &bg });
        }
    }
    out
}

/// Lay out a dataset of n images, each with a centered-ish marker and a
/// matching one-box label.
pub fn write_dataset(root: &Path, n: usize) -> std::io::Result<()> {
    let images = root.join("images");
    let labels = root.join("labels");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&labels)?;
    for i in 0..n {
        let stem = format!("img{i:04}");
        let offset = (i % 8) as u32 * 2;
        let rect = (8 + offset, 8, 40 + offset, 36);
        std::fs::write(
            images.join(format!("{stem}.ppm")),
            marker_ppm(64, 64, rect, [210, 40, 40], [0, 0, 0]),
        )?;
        let cx = (rect.0 + rect.2) as f64 / 2.0 / 64.0;
        let cy = (rect.1 + rect.3) as f64 / 2.0 / 64.0;
        let w = (rect.2 - rect.0) as f64 / 64.0;
        let h = (rect.3 - rect.1) as f64 / 64.0;
        std::fs::write(
            labels.join(format!("{stem}.txt")),
            format!("0 {cx:.6} {cy:.6} {w:.6} {h:.6}\n"),
        )?;
    }
    Ok(())
}

/// Every file under a directory except the run-config echo (it embeds the
/// resolved output path, so it differs across output locations by design).
pub fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    read_tree_all(dir)
        .into_iter()
        .filter(|(rel, _)| rel != "run_config.json")
        .collect()
}

/// Every file under a directory, relative path -> bytes, sorted.
pub fn read_tree_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

pub fn stdout_str(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr_str(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

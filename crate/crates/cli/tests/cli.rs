//! End-to-end runs of the `color-mapper` binary against the simulator.

use color_mapper::io::{encode_png_mask, write_png_image};
use color_mapper::{ImageBuffer, MaskBuffer, Rgb};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const PROMPT1: &str = "make the car light blue";
const PROMPT2: &str = "make the car dark blue";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_color-mapper"));
    cmd.env_remove("COLOR_MAPPER_BACKEND_URL")
        .env_remove("COLOR_MAPPER_BACKEND_TIMEOUT");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 32x32 gray image with the center 16x16 block masked.
fn write_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let image = ImageBuffer::filled(32, 32, Rgb::new(0.5, 0.5, 0.5).unwrap()).unwrap();
    let on: Vec<bool> = (0..32 * 32)
        .map(|i| (8..24).contains(&(i % 32)) && (8..24).contains(&(i / 32)))
        .collect();
    let mask = MaskBuffer::from_bools(32, 32, &on).unwrap();
    let (image_path, mask_path) = (dir.join("image.png"), dir.join("mask.png"));
    write_png_image(&image_path, &image).unwrap();
    std::fs::write(&mask_path, encode_png_mask(&mask).unwrap()).unwrap();
    (image_path, mask_path)
}

struct Calibrated {
    _dir: tempfile::TempDir,
    image: PathBuf,
    mask: PathBuf,
    model: PathBuf,
    report: serde_json::Value,
}

fn calibrated() -> &'static Calibrated {
    static CELL: OnceLock<Calibrated> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let (image, mask) = write_inputs(dir.path());
        let model = dir.path().join("model.cmap");
        let out = run(&[
            "calibrate",
            "--image",
            s(&image),
            "--mask",
            s(&mask),
            "--prompt1",
            PROMPT1,
            "--prompt2",
            PROMPT2,
            "--model",
            s(&model),
        ]);
        assert!(out.status.success(), "calibrate failed: {}", stderr(&out));
        let report_path = dir.path().join("model.cmap.report.json");
        let report = serde_json::from_slice(&std::fs::read(report_path).unwrap()).unwrap();
        Calibrated {
            _dir: dir,
            image,
            mask,
            model,
            report,
        }
    })
}

#[test]
fn calibrate_writes_model_and_report() {
    let c = calibrated();
    assert!(c.model.exists());
    assert_eq!(c.report["n_samples"], 30);
    assert_eq!(c.report["samples"].as_array().unwrap().len(), 30);
    assert_eq!(c.report["loss_history"].as_array().unwrap().len(), 500);
    assert!(c.report["gamut"]["min"].is_array());
}

#[test]
fn missing_mask_flag_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let (image, _) = write_inputs(dir.path());
    let model = dir.path().join("m.cmap");
    let out = run(&[
        "calibrate",
        "--image",
        s(&image),
        "--prompt1",
        PROMPT1,
        "--prompt2",
        PROMPT2,
        "--model",
        s(&model),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--mask"), "{}", stderr(&out));
    assert!(!model.exists());
}

#[test]
fn unreachable_backend_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let (image, mask) = write_inputs(dir.path());
    let model = dir.path().join("m.cmap");
    let out = run(&[
        "calibrate",
        "--image",
        s(&image),
        "--mask",
        s(&mask),
        "--prompt1",
        PROMPT1,
        "--prompt2",
        PROMPT2,
        "--model",
        s(&model),
        "--backend",
        "remote",
        "--backend-url",
        "http://127.0.0.1:9",
        "--timeout",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert_eq!(stderr(&out).lines().count(), 1, "{}", stderr(&out));
}

#[test]
fn backend_url_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (image, mask) = write_inputs(dir.path());
    let out = bin()
        .args(["calibrate", "--image", s(&image), "--mask", s(&mask)])
        .args(["--prompt1", PROMPT1, "--prompt2", PROMPT2, "--backend", "remote"])
        .args(["--model", s(&dir.path().join("m.cmap"))])
        .env("COLOR_MAPPER_BACKEND_URL", "http://127.0.0.1:9")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("127.0.0.1:9"));
}

#[test]
fn training_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let (image, mask) = write_inputs(dir.path());
    let out = run(&[
        "calibrate",
        "--image",
        s(&image),
        "--mask",
        s(&mask),
        "--prompt1",
        PROMPT1,
        "--prompt2",
        PROMPT2,
        "--model",
        s(&dir.path().join("m.cmap")),
        "--lr",
        "1e306",
        "--epochs",
        "50",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn sweep_writes_images_and_a_linear_report() {
    let c = calibrated();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let csv = dir.path().join("pairs.csv");
    let start = c.report["samples"][0]["rgb255"].as_array().unwrap();
    let end = c.report["samples"][29]["rgb255"].as_array().unwrap();
    let join = |v: &[serde_json::Value]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let out = run(&[
        "sweep",
        "--model",
        s(&c.model),
        "--image",
        s(&c.image),
        "--mask",
        s(&c.mask),
        "--rgb-start",
        &join(start),
        "--rgb-end",
        &join(end),
        "--count",
        "5",
        "--out-dir",
        s(&out_dir),
        "--csv",
        s(&csv),
        "--parallel",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for i in 0..5 {
        assert!(out_dir.join(format!("sweep_{i:03}.png")).exists());
        assert!(out_dir.join(format!("sweep_{i:03}.png.json")).exists());
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("linearity.json")).unwrap()).unwrap();
    for r2 in report["linearity"]["per_channel_r2"].as_array().unwrap() {
        assert!(r2.as_f64().unwrap() >= 0.95, "{report}");
    }
    let rows = csv::Reader::from_path(&csv).unwrap().records().count();
    assert_eq!(rows, 5);
}

#[test]
fn edit_is_deterministic_and_writes_a_sidecar() {
    let c = calibrated();
    let dir = tempfile::tempdir().unwrap();
    let edit = |name: &str| {
        let output = dir.path().join(name);
        let out = run(&[
            "edit",
            "--model",
            s(&c.model),
            "--image",
            s(&c.image),
            "--mask",
            s(&c.mask),
            "--rgb",
            "60,90,180",
            "--seed",
            "7",
            "--output",
            s(&output),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        output
    };
    let (a, b) = (edit("a.png"), edit("b.png"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.png.json")).unwrap()).unwrap();
    assert_eq!(sidecar["requested_rgb"], serde_json::json!([60, 90, 180]));
    assert_eq!(sidecar["seed"], 7);
    assert!(sidecar["out_of_gamut"].is_boolean());
    assert_eq!(sidecar["measured_rgb"].as_array().unwrap().len(), 3);
}

#[test]
fn out_of_gamut_edit_warns_but_succeeds() {
    let c = calibrated();
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "edit",
        "--model",
        s(&c.model),
        "--image",
        s(&c.image),
        "--mask",
        s(&c.mask),
        "--rgb",
        "255,0,0",
        "--output",
        s(&dir.path().join("red.png")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning:"), "{}", stderr(&out));
}

#[test]
fn rgb_out_of_range_exits_with_1() {
    let out = run(&["edit", "--rgb", "300,0,0", "--output", "x.png"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("300"), "{}", stderr(&out));
}

#[test]
fn inspect_prints_header_and_rejects_damaged_files() {
    let c = calibrated();
    let out = run(&["inspect", "--model", s(&c.model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let header: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(header["tokens"], 77);
    assert_eq!(header["channels"], 768);
    assert_eq!(header["prompts"][0], PROMPT1);

    let dir = tempfile::tempdir().unwrap();
    let bytes = std::fs::read(&c.model).unwrap();
    let truncated = dir.path().join("truncated.cmap");
    std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let out = run(&["inspect", "--model", s(&truncated)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("truncation"), "{}", stderr(&out));

    let mut wrong = bytes.clone();
    wrong[..4].copy_from_slice(b"NOPE");
    let bad_magic = dir.path().join("magic.cmap");
    std::fs::write(&bad_magic, wrong).unwrap();
    let out = run(&["inspect", "--model", s(&bad_magic)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("magic"), "{}", stderr(&out));
}

#[test]
fn help_and_version_exit_cleanly() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

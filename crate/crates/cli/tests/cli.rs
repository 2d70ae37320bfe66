use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
resolution = [32, 64]
seeds = [1, 2]

[network]
levels = 3
feature_channels = [4, 6, 8]
decoder_channels = [8, 1]
refinement_channels = [6, 1]
refinement_dilations = [1, 2]
correlation_radius = 2
leaky_slope = 0.2
lowest_decoder_level = 2

[sequence]
kind = "generator"
domain = "b"
length = 4

[pretrain]
iterations = 3
eval_frames = 2
log_every = 1
"#;

fn madnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_madnet")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    fs::write(&cfg, TINY).unwrap();

    let o = madnet(&["pretrain", "--config", s(&cfg), "--out", s(&d.join("pre"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = d.join("pre/model.ckpt");
    assert!(ckpt.exists());

    let o = madnet(&[
        "adapt", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--mode", "MAD_FULL", "--out", s(&d.join("adapt")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["frames"], 4);
    assert_eq!(summary["mode"], "MAD_FULL");
    let csv = fs::read_to_string(d.join("adapt/adapt_frames.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let o = madnet(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&d.join("eval"))]);
    assert_eq!(code(&o), 0);
    assert!(d.join("eval/eval_summary.json").exists());

    let o = madnet(&["compare", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&d.join("cmp"))]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("MAD_FULL") && table.contains("NONE"));
    assert_eq!(fs::read_to_string(d.join("cmp/compare.csv")).unwrap().lines().count(), 9);
}

#[test]
fn infer_writes_disparity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    fs::write(&cfg, TINY).unwrap();
    assert_eq!(code(&madnet(&["pretrain", "--config", s(&cfg), "--out", s(d)])), 0);

    let img = image::RgbImage::from_fn(64, 32, |x, y| image::Rgb([(x * 4) as u8, (y * 8) as u8, 128]));
    img.save(d.join("l.png")).unwrap();
    img.save(d.join("r.png")).unwrap();
    let o = madnet(&[
        "infer",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&d.join("model.ckpt")),
        "--left",
        s(&d.join("l.png")),
        "--right",
        s(&d.join("r.png")),
        "--out",
        s(&d.join("inf")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("inf/disparity.pfm").exists());
    assert!(d.join("inf/disparity.png").exists());
}

#[test]
fn gradcheck_exit_codes() {
    let o = madnet(&["gradcheck"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")));

    let o = madnet(&["gradcheck", "--negate", "warp"]);
    assert_eq!(code(&o), 3);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("FAIL")).count(), 1);
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    fs::write(&cfg, TINY).unwrap();

    // no checkpoint
    assert_eq!(code(&madnet(&["adapt", "--config", s(&cfg), "--out", s(d)])), 2);
    // unknown mode
    assert_eq!(code(&madnet(&["adapt", "--mode", "SOMETIMES"])), 2);
    // resolution not divisible by the pyramid
    fs::write(&cfg, TINY.replace("[32, 64]", "[36, 64]")).unwrap();
    assert_eq!(code(&madnet(&["pretrain", "--config", s(&cfg), "--out", s(d)])), 2);
    // unreadable config
    assert_eq!(code(&madnet(&["eval", "--config", s(&d.join("missing.toml"))])), 2);
}

//! One function per CLI subcommand. Each writes its artifacts under `out`
//! and returns what it wrote a summary of.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adapt::{csv_error, mean, run_adaptation, AdaptOptions, AdaptSummary, StepCsvWriter};
use super::compare::{comparison_table, run_comparison, write_comparison_csv, ComparePlan, ComparisonRow};
use super::config::RunConfig;
use super::pretrain::{pretrain, PretrainSummary};
use crate::data::io::{load_image_png, save_colour_png, save_pfm};
use crate::data::StereoFrame;
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, SuiteEntry};
use crate::network::Network;
use crate::tensor::Tensor4;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CURVE_FILE: &str = "pretrain_curve.csv";
pub const PRETRAIN_SUMMARY_FILE: &str = "pretrain_summary.json";
pub const ADAPT_FRAMES_FILE: &str = "adapt_frames.csv";
pub const ADAPT_SUMMARY_FILE: &str = "adapt_summary.json";
pub const EVAL_FRAMES_FILE: &str = "eval_frames.csv";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.json";
pub const COMPARE_FILE: &str = "compare.csv";
pub const DISPARITY_PFM: &str = "disparity.pfm";
pub const DISPARITY_PNG: &str = "disparity.png";
pub const CONFIG_FILE: &str = "config.toml";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

fn prepare(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml()?)?;
    Ok(())
}

/// Loads the configured checkpoint and checks it against the config.
pub fn load_checkpoint(cfg: &RunConfig) -> Result<Network<f32>> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("no checkpoint configured; run `pretrain` first".into()))?;
    let net = Network::<f32>::load(path)?;
    if net.config() != &cfg.network {
        return Err(Error::Config(format!(
            "checkpoint {} was built with a different network config",
            path.display()
        )));
    }
    let (h, w) = cfg.input_size();
    net.config().check_input(h, w)?;
    Ok(net)
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, PretrainSummary)> {
    prepare(cfg, out)?;
    let spec = cfg.pretrain.domain.spec(cfg.resolution.0, cfg.resolution.1);
    let mut curve = csv::Writer::from_path(out.join(CURVE_FILE)).map_err(csv_error)?;
    let (net, summary) = pretrain(&cfg.network, &cfg.pretrain, &spec, cfg.seed, |p| {
        curve.serialize(p).map_err(csv_error)?;
        curve.flush()?;
        Ok(())
    })?;
    let ckpt = out.join(CHECKPOINT_FILE);
    net.save(&ckpt)?;
    write_json(&out.join(PRETRAIN_SUMMARY_FILE), &summary)?;
    Ok((ckpt, summary))
}

pub fn cmd_adapt(cfg: &RunConfig, out: &Path) -> Result<AdaptSummary> {
    prepare(cfg, out)?;
    let mut net = load_checkpoint(cfg)?;
    let mut writer = StepCsvWriter::new(BufWriter::new(File::create(out.join(ADAPT_FRAMES_FILE))?));
    let opts = AdaptOptions {
        learning_rate: cfg.learning_rate,
        ..AdaptOptions::new(cfg.mode, cfg.seed)
    };
    let reports = run_adaptation(&mut net, cfg.frames(cfg.seed)?, opts, |r| writer.write(r))?;
    let summary = AdaptSummary::from_reports(cfg.mode, &reports, 20);
    write_json(&out.join(ADAPT_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub frame_idx: usize,
    pub epe: Option<f64>,
    pub d1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub mean_epe: Option<f64>,
    pub mean_d1: Option<f64>,
}

/// Metrics of the checkpoint over the configured sequence, without adaptation.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<(Vec<EvalRow>, EvalSummary)> {
    prepare(cfg, out)?;
    let net = load_checkpoint(cfg)?;
    let mut writer = csv::Writer::from_path(out.join(EVAL_FRAMES_FILE)).map_err(csv_error)?;
    let mut rows = Vec::new();
    for (i, frame) in cfg.frames(cfg.seed)?.enumerate() {
        let frame = frame?;
        let pred = net.forward(&frame.left, &frame.right)?.full;
        let m = frame.metrics(&pred)?;
        let row = EvalRow {
            frame_idx: i,
            epe: m.map(|m| m.epe),
            d1: m.map(|m| m.d1),
        };
        writer.serialize(&row).map_err(csv_error)?;
        rows.push(row);
    }
    writer.flush()?;
    let summary = EvalSummary {
        frames: rows.len(),
        mean_epe: mean(rows.iter().filter_map(|r| r.epe)),
        mean_d1: mean(rows.iter().filter_map(|r| r.d1)),
    };
    write_json(&out.join(EVAL_SUMMARY_FILE), &summary)?;
    Ok((rows, summary))
}

/// Full-resolution disparity for one pair of PNG images, written as PFM and
/// as a colour-mapped PNG.
pub fn cmd_infer(cfg: &RunConfig, left: &Path, right: &Path, out: &Path) -> Result<Tensor4<f32>> {
    prepare(cfg, out)?;
    let net = load_checkpoint(cfg)?;
    let frame = StereoFrame::new(load_image_png(left)?, load_image_png(right)?)?;
    let disp = net.forward(&frame.left, &frame.right)?.full;
    save_pfm(&out.join(DISPARITY_PFM), &disp)?;
    let max = disp.data().iter().copied().fold(1.0f32, f32::max);
    save_colour_png(&out.join(DISPARITY_PNG), &disp, max)?;
    Ok(disp)
}

/// All modes on one shared sequence; stochastic modes once per entry of
/// `cfg.seeds`.
pub fn cmd_compare(cfg: &RunConfig, out: &Path) -> Result<Vec<ComparisonRow>> {
    prepare(cfg, out)?;
    let net = load_checkpoint(cfg)?;
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let plan = ComparePlan::standard(cfg.seed, &cfg.seeds);
    let records = run_comparison(&net, &plan, cfg.learning_rate, || cfg.frames(cfg.seed), |rec| {
        let path = runs_dir.join(format!("{}_seed{}.csv", rec.mode.name().to_lowercase(), rec.seed));
        let mut w = StepCsvWriter::new(BufWriter::new(File::create(path)?));
        rec.reports.iter().try_for_each(|r| w.write(r))
    })?;
    let rows = comparison_table(&records);
    write_comparison_csv(File::create(out.join(COMPARE_FILE))?, &rows)?;
    Ok(rows)
}

/// Runs the gradient-check suite; `negate` names an entry whose backward is
/// deliberately broken.
pub fn cmd_gradcheck(negate: Option<&str>) -> Result<Vec<SuiteEntry>> {
    run_suite(negate)
}

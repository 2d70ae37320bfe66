use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::controller::{AdaptationMode, Controller, StepReport};
use crate::data::StereoFrame;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::optim::{Adam, AdamConfig};
use crate::param::ModuleId;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptOptions {
    pub mode: AdaptationMode,
    /// Seeds the controller's random stream.
    pub seed: u64,
    pub learning_rate: f64,
    pub checksums: bool,
}

impl AdaptOptions {
    pub fn new(mode: AdaptationMode, seed: u64) -> Self {
        AdaptOptions {
            mode,
            seed,
            learning_rate: 1e-4,
            checksums: false,
        }
    }
}

/// Runs the adaptation loop over `frames`, handing each report to `sink`
/// as soon as it is produced.
pub fn run_adaptation(
    net: &mut Network<f32>,
    frames: impl IntoIterator<Item = Result<StereoFrame<f32>>>,
    opts: AdaptOptions,
    mut sink: impl FnMut(&StepReport) -> Result<()>,
) -> Result<Vec<StepReport>> {
    let mut opt = Adam::new(net, AdamConfig::with_learning_rate(opts.learning_rate))?;
    let mut ctl = Controller::new(net, opts.mode, opts.seed)?.with_checksums(opts.checksums);
    let mut reports = Vec::new();
    for frame in frames {
        let frame = frame?;
        let r = ctl.adapt_step(net, &mut opt, &frame)?;
        sink(&r)?;
        reports.push(r);
    }
    Ok(reports)
}

/// One CSV row per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub frame_idx: usize,
    pub mode: AdaptationMode,
    pub epe_before: Option<f64>,
    pub d1_before: Option<f64>,
    pub loss_full_res: f64,
    pub selected_module: Option<usize>,
    pub forward_ms: f64,
    pub adapt_ms: f64,
}

impl From<&StepReport> for StepRow {
    fn from(r: &StepReport) -> Self {
        StepRow {
            frame_idx: r.frame_idx,
            mode: r.mode,
            epe_before: r.epe_before,
            d1_before: r.d1_before,
            loss_full_res: r.loss_full_res,
            selected_module: r.selected_module.map(ModuleId::level),
            forward_ms: r.forward_ms,
            adapt_ms: r.adapt_ms,
        }
    }
}

impl From<StepRow> for StepReport {
    fn from(r: StepRow) -> Self {
        StepReport {
            frame_idx: r.frame_idx,
            mode: r.mode,
            epe_before: r.epe_before,
            d1_before: r.d1_before,
            loss_full_res: r.loss_full_res,
            selected_module: r.selected_module.map(ModuleId),
            forward_ms: r.forward_ms,
            adapt_ms: r.adapt_ms,
            checksum_at_metrics: None,
            checksum_after: None,
        }
    }
}

/// Appends report rows to a CSV stream, flushing after each row.
pub struct StepCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> StepCsvWriter<W> {
    pub fn new(w: W) -> Self {
        StepCsvWriter {
            inner: csv::Writer::from_writer(w),
        }
    }

    pub fn write(&mut self, r: &StepReport) -> Result<()> {
        self.inner.serialize(StepRow::from(r)).map_err(csv_error)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_step_csv<R: Read>(r: R) -> Result<Vec<StepReport>> {
    csv::Reader::from_reader(r)
        .deserialize::<StepRow>()
        .map(|row| row.map(StepReport::from).map_err(csv_error))
        .collect()
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    } else {
        Error::Format(e.to_string())
    }
}

/// Aggregate statistics of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptSummary {
    pub mode: AdaptationMode,
    pub frames: usize,
    pub mean_epe: Option<f64>,
    pub mean_d1: Option<f64>,
    pub mean_loss: f64,
    /// Median of per-frame `forward_ms + adapt_ms`.
    pub median_step_ms: f64,
    pub median_fps: f64,
    /// `(frame, running mean D1-all up to that frame)` samples.
    pub running_d1: Vec<(usize, f64)>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Mean of a metric over the frames in `range`, skipping frames without it.
pub fn window_mean(reports: &[StepReport], range: std::ops::Range<usize>, pick: impl Fn(&StepReport) -> Option<f64>) -> Option<f64> {
    let end = range.end.min(reports.len());
    let start = range.start.min(end);
    mean(reports[start..end].iter().filter_map(pick))
}

impl AdaptSummary {
    /// `samples` running-mean points spread evenly over the run.
    pub fn from_reports(mode: AdaptationMode, reports: &[StepReport], samples: usize) -> Self {
        let mut totals: Vec<f64> = reports.iter().map(StepReport::total_ms).collect();
        let median_step_ms = median(&mut totals).unwrap_or(0.0);
        let mut running_d1 = Vec::new();
        let (mut acc, mut n) = (0.0, 0usize);
        let stride = (reports.len() / samples.max(1)).max(1);
        for (i, r) in reports.iter().enumerate() {
            if let Some(d) = r.d1_before {
                acc += d;
                n += 1;
            }
            if n > 0 && ((i + 1) % stride == 0 || i + 1 == reports.len()) {
                running_d1.push((i, acc / n as f64));
            }
        }
        AdaptSummary {
            mode,
            frames: reports.len(),
            mean_epe: mean(reports.iter().filter_map(|r| r.epe_before)),
            mean_d1: mean(reports.iter().filter_map(|r| r.d1_before)),
            mean_loss: mean(reports.iter().map(|r| r.loss_full_res)).unwrap_or(0.0),
            median_step_ms,
            median_fps: if median_step_ms > 0.0 { 1e3 / median_step_ms } else { 0.0 },
            running_d1,
        }
    }
}

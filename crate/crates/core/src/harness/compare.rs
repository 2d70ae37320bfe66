use std::io::Write;

use serde::{Deserialize, Serialize};

use super::adapt::{csv_error, mean, median, run_adaptation, AdaptOptions, AdaptSummary};
use crate::controller::{AdaptationMode, StepReport};
use crate::data::StereoFrame;
use crate::error::Result;
use crate::network::Network;

/// Which (mode, controller seed) pairs a comparison runs.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparePlan {
    pub runs: Vec<(AdaptationMode, u64)>,
}

impl ComparePlan {
    /// Every mode once with `seed`, and each stochastic mode once more per
    /// extra entry of `seeds`.
    pub fn standard(seed: u64, seeds: &[u64]) -> Self {
        let mut runs = Vec::new();
        for mode in AdaptationMode::ALL {
            if mode.is_stochastic() && !seeds.is_empty() {
                runs.extend(seeds.iter().map(|&s| (mode, s)));
            } else {
                runs.push((mode, seed));
            }
        }
        ComparePlan { runs }
    }

    /// Every mode with the same seed.
    pub fn all_modes(seed: u64) -> Self {
        ComparePlan {
            runs: AdaptationMode::ALL.iter().map(|&m| (m, seed)).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub mode: AdaptationMode,
    pub seed: u64,
    pub reports: Vec<StepReport>,
}

impl RunRecord {
    pub fn summary(&self) -> AdaptSummary {
        AdaptSummary::from_reports(self.mode, &self.reports, 20)
    }
}

/// Runs every entry of `plan` from the same starting weights. `frames` is
/// called once per run and must yield the same sequence each time.
pub fn run_comparison<I>(
    net: &Network<f32>,
    plan: &ComparePlan,
    learning_rate: f64,
    mut frames: impl FnMut() -> Result<I>,
    mut on_run: impl FnMut(&RunRecord) -> Result<()>,
) -> Result<Vec<RunRecord>>
where
    I: IntoIterator<Item = Result<StereoFrame<f32>>>,
{
    let mut records = Vec::with_capacity(plan.runs.len());
    for &(mode, seed) in &plan.runs {
        let mut n = net.clone();
        let opts = AdaptOptions {
            learning_rate,
            ..AdaptOptions::new(mode, seed)
        };
        let reports = run_adaptation(&mut n, frames()?, opts, |_| Ok(()))?;
        let rec = RunRecord { mode, seed, reports };
        on_run(&rec)?;
        records.push(rec);
    }
    Ok(records)
}

/// One row of the ranked table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub rank: usize,
    pub mode: AdaptationMode,
    pub runs: usize,
    pub d1_mean: Option<f64>,
    pub d1_std: Option<f64>,
    pub epe_mean: Option<f64>,
    pub epe_std: Option<f64>,
    /// Median over runs of each run's median FPS.
    pub fps: f64,
    pub step_ms: f64,
}

/// Sample standard deviation; zero for a single value.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    let m = mean(values.iter().copied())?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// Groups runs by mode and ranks modes by mean D1-all, best first. Modes
/// without ground truth sort last.
pub fn comparison_table(records: &[RunRecord]) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for mode in AdaptationMode::ALL {
        let summaries: Vec<AdaptSummary> = records.iter().filter(|r| r.mode == mode).map(RunRecord::summary).collect();
        if summaries.is_empty() {
            continue;
        }
        let d1: Vec<f64> = summaries.iter().filter_map(|s| s.mean_d1).collect();
        let epe: Vec<f64> = summaries.iter().filter_map(|s| s.mean_epe).collect();
        let mut fps: Vec<f64> = summaries.iter().map(|s| s.median_fps).collect();
        let mut step: Vec<f64> = summaries.iter().map(|s| s.median_step_ms).collect();
        rows.push(ComparisonRow {
            rank: 0,
            mode,
            runs: summaries.len(),
            d1_mean: mean(d1.iter().copied()),
            d1_std: sample_std(&d1),
            epe_mean: mean(epe.iter().copied()),
            epe_std: sample_std(&epe),
            fps: median(&mut fps).unwrap_or(0.0),
            step_ms: median(&mut step).unwrap_or(0.0),
        });
    }
    rows.sort_by(|a, b| match (a.d1_mean, b.d1_mean) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

pub fn write_comparison_csv<W: Write>(w: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ModuleId;

    fn record(mode: AdaptationMode, seed: u64, d1: f64) -> RunRecord {
        let reports = (0..4)
            .map(|i| StepReport {
                frame_idx: i,
                mode,
                epe_before: Some(d1 / 10.0),
                d1_before: Some(d1),
                loss_full_res: 0.1,
                selected_module: mode.is_mad().then_some(ModuleId(2)),
                forward_ms: 1.0,
                adapt_ms: if mode == AdaptationMode::None { 0.0 } else { 1.0 },
                checksum_at_metrics: None,
                checksum_after: None,
            })
            .collect();
        RunRecord { mode, seed, reports }
    }

    #[test]
    fn standard_plan_repeats_only_stochastic_modes() {
        let plan = ComparePlan::standard(0, &[1, 2, 3]);
        assert_eq!(plan.runs.len(), 6 + 2 * 3);
        assert_eq!(plan.runs.iter().filter(|r| r.0 == AdaptationMode::MadSeq).count(), 1);
        assert_eq!(plan.runs.iter().filter(|r| r.0 == AdaptationMode::MadFull).count(), 3);
    }

    #[test]
    fn table_ranks_by_d1_with_sample_std() {
        let records = vec![
            record(AdaptationMode::None, 0, 40.0),
            record(AdaptationMode::Full, 0, 5.0),
            record(AdaptationMode::MadFull, 1, 8.0),
            record(AdaptationMode::MadFull, 2, 12.0),
        ];
        let rows = comparison_table(&records);
        let modes: Vec<_> = rows.iter().map(|r| r.mode).collect();
        assert_eq!(modes, vec![AdaptationMode::Full, AdaptationMode::MadFull, AdaptationMode::None]);
        let mad = &rows[1];
        assert_eq!((mad.rank, mad.runs), (2, 2));
        assert_eq!(mad.d1_mean, Some(10.0));
        assert!((mad.d1_std.unwrap() - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(rows[2].fps, 1000.0);
        assert_eq!(rows[0].fps, 500.0);
    }

    #[test]
    fn csv_has_one_row_per_mode() {
        let rows = comparison_table(&[record(AdaptationMode::None, 0, 1.0), record(AdaptationMode::Full, 0, 2.0)]);
        let mut buf = Vec::new();
        write_comparison_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "rank,mode,runs,d1_mean,d1_std,epe_mean,epe_std,fps,step_ms");
        assert_eq!(lines.count(), 2);
    }
}

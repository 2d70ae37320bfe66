//! Online adaptation: the per-frame measure → select → update cycle and the
//! reward/punishment histogram that picks which module to train.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::StereoFrame;
use crate::error::{Error, Result};
use crate::loss;
use crate::network::{Network, PyramidGrad, Scope};
use crate::optim::Adam;
use crate::param::ModuleId;
use crate::scalar::Scalar;

/// Multiplicative decay applied to every bin per update.
pub const HISTOGRAM_DECAY: f64 = 0.99;
/// Weight of the reward added to the previously trained module's bin.
pub const HISTOGRAM_GAIN: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdaptationMode {
    None,
    Full,
    MadFull,
    MadRand,
    MadSeq,
    LastLayer,
    Refinement,
    D2Refinement,
}

impl AdaptationMode {
    pub const ALL: [AdaptationMode; 8] = [
        AdaptationMode::None,
        AdaptationMode::LastLayer,
        AdaptationMode::Refinement,
        AdaptationMode::D2Refinement,
        AdaptationMode::MadSeq,
        AdaptationMode::MadRand,
        AdaptationMode::MadFull,
        AdaptationMode::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdaptationMode::None => "NONE",
            AdaptationMode::Full => "FULL",
            AdaptationMode::MadFull => "MAD_FULL",
            AdaptationMode::MadRand => "MAD_RAND",
            AdaptationMode::MadSeq => "MAD_SEQ",
            AdaptationMode::LastLayer => "LAST_LAYER",
            AdaptationMode::Refinement => "REFINEMENT",
            AdaptationMode::D2Refinement => "D2_REFINEMENT",
        }
    }

    pub fn is_mad(self) -> bool {
        matches!(
            self,
            AdaptationMode::MadFull | AdaptationMode::MadRand | AdaptationMode::MadSeq
        )
    }

    /// Whether the outcome depends on the controller's random stream.
    pub fn is_stochastic(self) -> bool {
        matches!(self, AdaptationMode::MadFull | AdaptationMode::MadRand)
    }
}

impl fmt::Display for AdaptationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdaptationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('-', "_");
        AdaptationMode::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown adaptation mode {s:?}")))
    }
}

/// One score per module; the sampling distribution is its softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationHistogram {
    modules: Vec<ModuleId>,
    bins: Vec<f64>,
}

impl AdaptationHistogram {
    pub fn new(modules: Vec<ModuleId>) -> Result<Self> {
        if modules.is_empty() {
            return Err(Error::Config("histogram needs at least one module".into()));
        }
        let bins = vec![0.0; modules.len()];
        Ok(AdaptationHistogram { modules, bins })
    }

    pub fn with_bins(modules: Vec<ModuleId>, bins: Vec<f64>) -> Result<Self> {
        if bins.len() != modules.len() || bins.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("bins must be finite, one per module".into()));
        }
        let mut h = Self::new(modules)?;
        h.bins = bins;
        Ok(h)
    }

    pub fn modules(&self) -> &[ModuleId] {
        &self.modules
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    fn slot(&self, module: ModuleId) -> Result<usize> {
        self.modules
            .iter()
            .position(|&m| m == module)
            .ok_or_else(|| Error::Config(format!("module {module} has no histogram bin")))
    }

    /// Softmax of the bins, shifted by their maximum for stability.
    pub fn probabilities(&self) -> Vec<f64> {
        let max = self.bins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = self.bins.iter().map(|b| (b - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / total).collect()
    }

    pub fn probability(&self, module: ModuleId) -> Result<f64> {
        Ok(self.probabilities()[self.slot(module)?])
    }
}

/// Draws a module with probability `softmax(bins)`.
pub fn sample_module<R: Rng + ?Sized>(hist: &AdaptationHistogram, rng: &mut R) -> ModuleId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let probs = hist.probabilities();
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return hist.modules[i];
        }
    }
    *hist.modules.last().expect("non-empty")
}

/// Loss memory carried between frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// `L_{t-1}`
    pub loss_prev: f64,
    /// `L_{t-2}`
    pub loss_prev2: f64,
    /// Module trained on the previous frame.
    pub last_module: Option<ModuleId>,
    /// Frames processed so far.
    pub frame_index: usize,
}

impl Default for ControllerState {
    fn default() -> Self {
        ControllerState {
            loss_prev: 0.0,
            loss_prev2: 0.0,
            last_module: None,
            frame_index: 0,
        }
    }
}

impl ControllerState {
    pub fn is_populated(&self) -> bool {
        self.frame_index >= 1
    }

    /// Shifts the loss memory after frame `frame_index` has been processed.
    /// The first frame seeds both slots with its own loss.
    pub fn advance(&mut self, loss_t: f64, module: Option<ModuleId>) {
        if self.frame_index == 0 {
            self.loss_prev = loss_t;
        }
        self.loss_prev2 = self.loss_prev;
        self.loss_prev = loss_t;
        self.last_module = module;
        self.frame_index += 1;
    }
}

/// Reward for the module trained on the previous frame: how much better the
/// current loss is than a linear extrapolation of the last two.
pub fn histogram_reward(state: &ControllerState, loss_t: f64) -> f64 {
    let expected = 2.0 * state.loss_prev - state.loss_prev2;
    expected - loss_t
}

/// Decays every bin and credits `state.last_module` with the reward.
pub fn update_histogram(hist: &mut AdaptationHistogram, state: &ControllerState, loss_t: f64) -> Result<()> {
    if !state.is_populated() {
        return Err(Error::Config("histogram update needs a previous frame".into()));
    }
    if !loss_t.is_finite() {
        return Err(Error::Numerical(format!("loss is {loss_t}")));
    }
    let gamma = histogram_reward(state, loss_t);
    for b in hist.bins.iter_mut() {
        *b *= HISTOGRAM_DECAY;
    }
    if let Some(m) = state.last_module {
        let i = hist.slot(m)?;
        hist.bins[i] += HISTOGRAM_GAIN * gamma;
    }
    Ok(())
}

/// Everything measured on one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub frame_idx: usize,
    pub mode: AdaptationMode,
    /// Error of the prediction made before this frame's update.
    pub epe_before: Option<f64>,
    pub d1_before: Option<f64>,
    /// Photometric loss of the full-resolution prediction.
    pub loss_full_res: f64,
    pub selected_module: Option<ModuleId>,
    pub forward_ms: f64,
    pub adapt_ms: f64,
    /// Parameter checksums when the metrics were taken and after the update,
    /// if instrumentation is enabled.
    #[serde(skip)]
    pub checksum_at_metrics: Option<u64>,
    #[serde(skip)]
    pub checksum_after: Option<u64>,
}

impl StepReport {
    pub fn total_ms(&self) -> f64 {
        self.forward_ms + self.adapt_ms
    }
}

/// Splits a report's wall-clock time into forward and adaptation parts.
pub fn step_timing(report: &StepReport) -> (f64, f64) {
    (report.forward_ms, report.adapt_ms)
}

/// Per-run adaptation driver. Owns the selection state; the network and
/// optimizer are borrowed per step.
#[derive(Clone, Debug)]
pub struct Controller {
    mode: AdaptationMode,
    state: ControllerState,
    hist: AdaptationHistogram,
    rng: ChaCha8Rng,
    checksums: bool,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl Controller {
    pub fn new<T: Scalar>(net: &Network<T>, mode: AdaptationMode, seed: u64) -> Result<Self> {
        Ok(Controller {
            mode,
            state: ControllerState::default(),
            hist: AdaptationHistogram::new(net.modules())?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            checksums: false,
        })
    }

    /// Records parameter checksums around the metric computation.
    pub fn with_checksums(mut self, on: bool) -> Self {
        self.checksums = on;
        self
    }

    pub fn mode(&self) -> AdaptationMode {
        self.mode
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn histogram(&self) -> &AdaptationHistogram {
        &self.hist
    }

    fn select(&mut self) -> ModuleId {
        let modules = self.hist.modules();
        match self.mode {
            AdaptationMode::MadSeq => modules[self.state.frame_index % modules.len()],
            AdaptationMode::MadRand => modules[self.rng.gen_range(0..modules.len())],
            _ => sample_module(&self.hist, &mut self.rng),
        }
    }

    /// Processes one frame: forward, metrics, full-resolution loss, then the
    /// mode's update, then the state shift.
    pub fn adapt_step<T: Scalar>(
        &mut self,
        net: &mut Network<T>,
        opt: &mut Adam<T>,
        frame: &StereoFrame<T>,
    ) -> Result<StepReport> {
        let mode = self.mode;
        let t0 = Instant::now();
        let (pyramid, trace) = if mode == AdaptationMode::None {
            (net.forward(&frame.left, &frame.right)?, None)
        } else {
            let (p, t) = net.forward_traced(&frame.left, &frame.right)?;
            (p, Some(t))
        };
        let forward_ms = ms(t0);
        if !pyramid.full.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite disparity on frame {}",
                self.state.frame_index
            )));
        }

        let checksum_at_metrics = self.checksums.then(|| net.checksum());
        let metrics = frame.metrics(&pyramid.full)?;

        let t1 = Instant::now();
        let mut selected = None;
        let loss_t = match mode {
            AdaptationMode::None => {
                let l = loss::reprojection_loss(&frame.left, &frame.right, &pyramid.full)?.scalar;
                l.as_f64()
            }
            AdaptationMode::Full
            | AdaptationMode::LastLayer
            | AdaptationMode::Refinement
            | AdaptationMode::D2Refinement => {
                let (l, g) = loss::reprojection_loss_with_grad(&frame.left, &frame.right, &pyramid.full)?;
                let scope: Scope = match mode {
                    AdaptationMode::Full => net.scope_all(),
                    AdaptationMode::LastLayer => net.scope_last_layer(),
                    AdaptationMode::Refinement => net.scope_refinement(),
                    _ => net.scope_lowest_decoder_and_refinement(),
                };
                net.backward(trace.as_ref().expect("traced"), PyramidGrad::full(g), &scope)?;
                opt.step(net, &scope)?;
                l.scalar.as_f64()
            }
            AdaptationMode::MadFull | AdaptationMode::MadRand | AdaptationMode::MadSeq => {
                let l = loss::reprojection_loss(&frame.left, &frame.right, &pyramid.full)?
                    .scalar
                    .as_f64();
                if self.state.is_populated() {
                    update_histogram(&mut self.hist, &self.state, l)?;
                }
                let theta = self.select();
                let (y, level) = pyramid.module_prediction(theta)?;
                let (_, g) = loss::module_loss_with_grad(&frame.left, &frame.right, y, level)?;
                let grads = PyramidGrad::for_module(theta, pyramid.lowest_level, g);
                net.backward_module(trace.as_ref().expect("traced"), grads, theta)?;
                let scope = net.scope_module(theta)?;
                opt.step(net, &scope)?;
                selected = Some(theta);
                l
            }
        };
        let adapt_ms = if mode == AdaptationMode::None { 0.0 } else { ms(t1) };
        drop(trace);
        if !loss_t.is_finite() {
            return Err(Error::Numerical(format!(
                "loss is {loss_t} on frame {}",
                self.state.frame_index
            )));
        }

        let report = StepReport {
            frame_idx: self.state.frame_index,
            mode,
            epe_before: metrics.map(|m| m.epe),
            d1_before: metrics.map(|m| m.d1),
            loss_full_res: loss_t,
            selected_module: selected,
            forward_ms,
            adapt_ms,
            checksum_at_metrics,
            checksum_after: self.checksums.then(|| net.checksum()),
        };
        self.state.advance(loss_t, selected);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn five() -> Vec<ModuleId> {
        (2..=6).map(ModuleId).collect()
    }

    #[test]
    fn uniform_bins_give_uniform_probabilities() {
        let h = AdaptationHistogram::new(five()).unwrap();
        assert!(h.probabilities().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn one_raised_bin() {
        let h = AdaptationHistogram::with_bins(five(), vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((h.probabilities()[0] - e / (e + 4.0)).abs() < 1e-15);
        assert!((h.probabilities()[0] - 0.4046).abs() < 1e-4);
    }

    #[test]
    fn reward_arithmetic() {
        let mut h = AdaptationHistogram::new(five()).unwrap();
        let state = ControllerState {
            loss_prev2: 1.2,
            loss_prev: 1.0,
            last_module: Some(ModuleId(4)),
            frame_index: 2,
        };
        assert!((histogram_reward(&state, 0.7) - 0.1).abs() < 1e-12);
        update_histogram(&mut h, &state, 0.7).unwrap();
        let want = [0.0, 0.0, 0.001, 0.0, 0.0];
        for (b, w) in h.bins().iter().zip(want) {
            assert!((b - w).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_loss_decays_bins() {
        let mut h = AdaptationHistogram::with_bins(five(), vec![1.0, -2.0, 0.5, 0.0, 3.0]).unwrap();
        let state = ControllerState {
            loss_prev2: 0.4,
            loss_prev: 0.4,
            last_module: Some(ModuleId(2)),
            frame_index: 5,
        };
        for _ in 0..100 {
            update_histogram(&mut h, &state, 0.4).unwrap();
        }
        let f = 0.99f64.powi(100);
        for (b, orig) in h.bins().iter().zip([1.0, -2.0, 0.5, 0.0, 3.0]) {
            assert!((b - orig * f).abs() < 1e-12);
        }
    }

    #[test]
    fn update_needs_a_previous_frame() {
        let mut h = AdaptationHistogram::new(five()).unwrap();
        assert!(update_histogram(&mut h, &ControllerState::default(), 1.0).is_err());
    }

    #[test]
    fn bootstrap_seeds_both_slots() {
        let mut s = ControllerState::default();
        s.advance(0.5, None);
        assert_eq!((s.loss_prev, s.loss_prev2, s.frame_index), (0.5, 0.5, 1));
        s.advance(0.3, Some(ModuleId(3)));
        assert_eq!((s.loss_prev, s.loss_prev2), (0.3, 0.5));
        assert_eq!(s.last_module, Some(ModuleId(3)));
    }

    #[test]
    fn persistent_reward_raises_probability_monotonically() {
        let mut h = AdaptationHistogram::new(five()).unwrap();
        let state = ControllerState {
            loss_prev2: 2.0,
            loss_prev: 1.0,
            last_module: Some(ModuleId(3)),
            frame_index: 9,
        };
        // gamma = 0 - (-5) = 5 every step
        let mut prev = h.probability(ModuleId(3)).unwrap();
        for _ in 0..60 {
            update_histogram(&mut h, &state, -5.0).unwrap();
            let p = h.probability(ModuleId(3)).unwrap();
            assert!(p > prev);
            prev = p;
        }
        // fixed point of b = 0.99 b + 0.05 is 5
        let fixed = std::f64::consts::E.powi(5) / (std::f64::consts::E.powi(5) + 4.0);
        assert!(prev < fixed);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in AdaptationMode::ALL {
            assert_eq!(m.name().parse::<AdaptationMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert_eq!("mad-full".parse::<AdaptationMode>().unwrap(), AdaptationMode::MadFull);
        assert!("SOMETIMES".parse::<AdaptationMode>().is_err());
    }

    proptest! {
        #[test]
        fn update_matches_direct_transcription(
            bins in proptest::collection::vec(-5.0f64..5.0, 5),
            lp2 in 0.0f64..2.0,
            lp in 0.0f64..2.0,
            lt in 0.0f64..2.0,
            k in 0usize..5,
        ) {
            let mut h = AdaptationHistogram::with_bins(five(), bins.clone()).unwrap();
            let state = ControllerState { loss_prev2: lp2, loss_prev: lp, last_module: Some(ModuleId(k + 2)), frame_index: 3 };
            update_histogram(&mut h, &state, lt).unwrap();
            let l_exp = 2.0 * lp - lp2;
            let gamma = l_exp - lt;
            let mut want: Vec<f64> = bins.iter().map(|b| 0.99 * b).collect();
            want[k] += 0.01 * gamma;
            prop_assert_eq!(h.bins(), &want[..]);
        }

        #[test]
        fn softmax_is_shift_invariant(bins in proptest::collection::vec(-3.0f64..3.0, 5), t in -50.0f64..50.0) {
            let a = AdaptationHistogram::with_bins(five(), bins.clone()).unwrap().probabilities();
            let b = AdaptationHistogram::with_bins(five(), bins.iter().map(|x| x + t).collect()).unwrap().probabilities();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn punishment_demotes_the_module(bins in proptest::collection::vec(-3.0f64..3.0, 5), k in 0usize..5, hurt in 0.01f64..1.0) {
            let m = ModuleId(k + 2);
            let state = ControllerState { loss_prev2: 1.0, loss_prev: 1.0, last_module: Some(m), frame_index: 4 };
            // the loss exactly as extrapolated: decay only
            let mut neutral = AdaptationHistogram::with_bins(five(), bins.clone()).unwrap();
            update_histogram(&mut neutral, &state, 1.0).unwrap();
            let mut hurt_h = AdaptationHistogram::with_bins(five(), bins).unwrap();
            update_histogram(&mut hurt_h, &state, 1.0 + hurt).unwrap();
            let (n, a) = (neutral.probabilities(), hurt_h.probabilities());
            prop_assert!(a[k] < n[k]);
            for j in 0..5 {
                if j != k {
                    prop_assert!(a[j] > n[j]);
                }
            }
        }

        #[test]
        fn extreme_bins_stay_finite(big in 100.0f64..700.0) {
            let h = AdaptationHistogram::with_bins(five(), vec![big, -big, 0.0, big, 1.0]).unwrap();
            prop_assert!(h.probabilities().iter().all(|p| p.is_finite()));
        }
    }
}

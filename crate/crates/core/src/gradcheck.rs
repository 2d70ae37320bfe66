//! Central-difference verification of analytic backward passes.

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeometry};
use crate::tensor::{Shape4, Tensor4};

/// An operation with an explicit backward, viewed as a function of a flat
/// list of tensors (inputs and parameters alike).
pub trait Differentiable {
    fn name(&self) -> String;
    fn forward(&self, inputs: &[Tensor4<f64>]) -> Result<Tensor4<f64>>;
    /// Gradient of `sum(probe * forward(inputs))` with respect to each input.
    fn backward(&self, inputs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>>;
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_relative_error: f64,
    pub elements_checked: usize,
    /// `(input index, flat element index)` of the worst element.
    pub worst: (usize, usize),
}

/// Relative error `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Deterministic pseudo-random tensor in `[lo, hi)`.
pub fn probe_tensor(shape: Shape4, seed: u64, lo: f64, hi: f64) -> Tensor4<f64> {
    let mut s = seed ^ 0x9e37_79b9_7f4a_7c15;
    Tensor4::from_fn(shape, |_, _, _, _| {
        s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let u = (s >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    })
}

/// Compares the analytic backward of `op` with central differences of
/// `sum(probe * forward)` over every element of every input.
pub fn check_gradients(
    op: &dyn Differentiable,
    inputs: &[Tensor4<f64>],
    probe: &Tensor4<f64>,
    epsilon: f64,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::Config(format!(
            "gradient-check epsilon {epsilon} outside [1e-7, 1e-4]"
        )));
    }
    let analytic = op.backward(inputs, probe)?;
    if analytic.len() != inputs.len() {
        return Err(Error::Numerical(format!(
            "{}: backward returned {} gradients for {} inputs",
            op.name(),
            analytic.len(),
            inputs.len()
        )));
    }
    let objective = |xs: &[Tensor4<f64>]| -> Result<f64> { op.forward(xs)?.dot(probe) };
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        name: op.name(),
        max_relative_error: 0.0,
        elements_checked: 0,
        worst: (0, 0),
    };
    for (i, grad) in analytic.iter().enumerate() {
        grad.expect_shape("check_gradients", inputs[i].shape())?;
        if !grad.all_finite() {
            return Err(Error::Numerical(format!(
                "{}: non-finite analytic gradient for input {i}",
                op.name()
            )));
        }
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + epsilon;
            let plus = objective(&work)?;
            work[i].data_mut()[j] = orig - epsilon;
            let minus = objective(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(grad.data()[j], numeric);
            if !err.is_finite() {
                return Err(Error::Numerical(format!(
                    "{}: non-finite comparison at input {i} element {j}",
                    op.name()
                )));
            }
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (i, j);
            }
            report.elements_checked += 1;
        }
    }
    Ok(report)
}

/// Inputs: `x, weight, bias`.
pub struct ConvProbe(pub ConvGeometry);

impl Differentiable for ConvProbe {
    fn name(&self) -> String {
        let g = self.0;
        format!("conv2d s{} d{} p{}", g.stride, g.dilation, g.padding)
    }

    fn forward(&self, xs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        ops::conv2d(&xs[0], &xs[1], &xs[2], self.0)
    }

    fn backward(&self, xs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let mut gw = Tensor4::zeros(xs[1].shape());
        let mut gb = Tensor4::zeros(xs[2].shape());
        let gx = ops::conv2d_backward(&xs[0], &xs[1], self.0, probe, &mut gw, &mut gb, true)?
            .expect("requested");
        Ok(vec![gx, gw, gb])
    }
}

pub struct LeakyReluProbe(pub f64);

impl Differentiable for LeakyReluProbe {
    fn name(&self) -> String {
        "leaky_relu".into()
    }

    fn forward(&self, xs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        Ok(ops::leaky_relu(&xs[0], self.0))
    }

    fn backward(&self, xs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        Ok(vec![ops::leaky_relu_backward(&xs[0], probe, self.0)?])
    }
}

pub struct UpsampleProbe(pub usize);

impl Differentiable for UpsampleProbe {
    fn name(&self) -> String {
        format!("bilinear_upsample x{}", self.0)
    }

    fn forward(&self, xs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        ops::bilinear_upsample(&xs[0], self.0)
    }

    fn backward(&self, xs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        Ok(vec![ops::bilinear_upsample_backward(
            xs[0].shape(),
            self.0,
            probe,
        )?])
    }
}

/// Inputs: `left, right`.
pub struct CorrelationProbe(pub usize);

impl Differentiable for CorrelationProbe {
    fn name(&self) -> String {
        format!("correlation1d r{}", self.0)
    }

    fn forward(&self, xs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        ops::correlation1d(&xs[0], &xs[1], self.0)
    }

    fn backward(&self, xs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let (gl, gr) = ops::correlation1d_backward(&xs[0], &xs[1], self.0, probe)?;
        Ok(vec![gl, gr])
    }
}

/// Inputs: `src, disparity`.
pub struct WarpProbe;

impl Differentiable for WarpProbe {
    fn name(&self) -> String {
        "warp_horizontal".into()
    }

    fn forward(&self, xs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        ops::warp_horizontal(&xs[0], &xs[1])
    }

    fn backward(&self, xs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let (gs, gd) = ops::warp_horizontal_backward(&xs[0], &xs[1], probe, true, true)?;
        Ok(vec![gs.expect("requested"), gd.expect("requested")])
    }
}

/// Fractional disparities that keep every sample at least `margin` away from
/// interpolation-cell boundaries and from the clamp region.
pub fn smooth_disparity(shape: Shape4, seed: u64, lo: f64, hi: f64, margin: f64) -> Tensor4<f64> {
    let raw = probe_tensor(shape, seed, lo, hi);
    let w = shape.w;
    Tensor4::from_fn(shape, |n, c, y, x| {
        let mut d = raw.at(n, c, y, x);
        let whole = d.floor();
        let frac = (d - whole).clamp(margin, 1.0 - margin);
        d = whole + frac;
        // keep x - d strictly inside (0, w - 1)
        let pos = x as f64 - d;
        if pos <= margin || pos >= (w - 1) as f64 - margin {
            let target = ((w - 1) as f64 * 0.5).floor() + 0.5;
            d = x as f64 - target;
        }
        d
    })
}

/// Smooth colour image with structure at several scales; keeps the L1 term
/// of the photometric loss away from its kink.
pub fn smooth_image(shape: Shape4, seed: u64) -> Tensor4<f64> {
    let p = probe_tensor(Shape4::new(1, shape.c, 4, 4), seed, 0.0, 1.0);
    Tensor4::from_fn(shape, |_, c, y, x| {
        let u = x as f64 * 0.37 + y as f64 * 0.11;
        let v = y as f64 * 0.29;
        0.5 + 0.2 * (u + p.at(0, c, 0, 0) * 6.0).sin() * (v + p.at(0, c, 1, 1) * 6.0).cos() + 0.1 * (1.7 * u).sin()
    })
}

fn scalar(v: f64) -> Tensor4<f64> {
    Tensor4::full(Shape4::new(1, 1, 1, 1), v)
}

/// Photometric loss of a fixed pair as a function of the disparity, or of a
/// coarse prediction at `level` when `level > 0`.
pub struct ReprojectionProbe {
    pub left: Tensor4<f64>,
    pub right: Tensor4<f64>,
    pub level: usize,
}

impl Differentiable for ReprojectionProbe {
    fn name(&self) -> String {
        if self.level == 0 {
            "reprojection_loss".into()
        } else {
            format!("module_loss level {}", self.level)
        }
    }

    fn forward(&self, xs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        Ok(scalar(crate::loss::module_loss(&self.left, &self.right, &xs[0], self.level)?.scalar))
    }

    fn backward(&self, xs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let (_, mut g) = crate::loss::module_loss_with_grad(&self.left, &self.right, &xs[0], self.level)?;
        g.scale_inplace(probe.data()[0]);
        Ok(vec![g])
    }
}

/// Wraps a probe and negates its analytic gradients; used to prove the suite
/// catches a wrong backward.
pub struct Negated<D>(pub D);

impl<D: Differentiable> Differentiable for Negated<D> {
    fn name(&self) -> String {
        self.0.name()
    }

    fn forward(&self, xs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        self.0.forward(xs)
    }

    fn backward(&self, xs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let mut g = self.0.backward(xs, probe)?;
        for t in &mut g {
            t.scale_inplace(-1.0);
        }
        Ok(g)
    }
}

/// One line of the gradient-check suite.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_relative_error < self.tolerance
    }
}

/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Tolerance for the end-to-end micro network.
pub const NETWORK_TOLERANCE: f64 = 1e-4;

/// Two-level network small enough for an exhaustive check.
pub fn micro_network_config() -> crate::network::NetworkConfig {
    crate::network::NetworkConfig {
        levels: 2,
        feature_channels: vec![3, 4],
        decoder_channels: vec![4, 1],
        refinement_channels: vec![3, 1],
        refinement_dilations: vec![1, 2],
        correlation_radius: 1,
        leaky_slope: 0.2,
        lowest_decoder_level: 1,
    }
}

fn micro_network_probe() -> Result<NetworkProbe> {
    let mut net = crate::network::Network::<f64>::build(micro_network_config(), 3)?;
    // non-zero biases so every layer carries signal
    for (i, p) in net.parameters_mut().enumerate() {
        if p.value.shape().h == 1 {
            p.value = probe_tensor(p.value.shape(), 100 + i as u64, -0.3, 0.3);
        }
    }
    Ok(NetworkProbe {
        net,
        left: probe_tensor(Shape4::new(1, 3, 8, 16), 7, 0.0, 1.0),
        right: probe_tensor(Shape4::new(1, 3, 8, 16), 8, 0.0, 1.0),
        output: NetworkOutput::Full,
    })
}

/// Runs every differentiable operation and the micro network through
/// [`check_gradients`] in `f64`. `negate` names an entry (by prefix) whose
/// backward is deliberately negated.
pub fn run_suite(negate: Option<&str>) -> Result<Vec<SuiteEntry>> {
    let sh = |n, c, h, w| Shape4::new(n, c, h, w);
    let mut entries = Vec::new();
    let mut run = |op: &dyn Differentiable, inputs: &[Tensor4<f64>], probe: &Tensor4<f64>, eps: f64, tol: f64| -> Result<()> {
        let broken = negate.is_some_and(|n| op.name().starts_with(n));
        let report = if broken {
            check_gradients(&Negated(Forward(op)), inputs, probe, eps)?
        } else {
            check_gradients(op, inputs, probe, eps)?
        };
        entries.push(SuiteEntry { report, tolerance: tol });
        Ok(())
    };

    for geom in [ConvGeometry::new(2, 1, 1), ConvGeometry::new(1, 1, 1), ConvGeometry::same(3, 4)] {
        let x = probe_tensor(sh(2, 2, 7, 9), 1, -1.0, 1.0);
        let w = probe_tensor(sh(3, 2, 3, 3), 2, -1.0, 1.0);
        let b = probe_tensor(sh(1, 3, 1, 1), 3, -1.0, 1.0);
        let out = ops::conv2d(&x, &w, &b, geom)?;
        let probe = probe_tensor(out.shape(), 4, -1.0, 1.0);
        run(&ConvProbe(geom), &[x, w, b], &probe, 1e-5, OP_TOLERANCE)?;
    }
    let x = probe_tensor(sh(1, 3, 4, 4), 5, -1.0, 1.0).map(|v| if v.abs() < 0.05 { v + 0.05 * v.signum() } else { v });
    let probe = probe_tensor(x.shape(), 6, -1.0, 1.0);
    run(&LeakyReluProbe(0.2), &[x], &probe, 1e-5, OP_TOLERANCE)?;
    for f in [2, 4] {
        let x = probe_tensor(sh(1, 2, 3, 4), 7, -1.0, 1.0);
        let probe = probe_tensor(sh(1, 2, 3 * f, 4 * f), 8, -1.0, 1.0);
        run(&UpsampleProbe(f), &[x], &probe, 1e-5, OP_TOLERANCE)?;
    }
    let l = probe_tensor(sh(1, 3, 3, 7), 9, -1.0, 1.0);
    let r = probe_tensor(sh(1, 3, 3, 7), 10, -1.0, 1.0);
    let probe = probe_tensor(sh(1, 5, 3, 7), 11, -1.0, 1.0);
    run(&CorrelationProbe(2), &[l, r], &probe, 1e-5, OP_TOLERANCE)?;
    let src = probe_tensor(sh(1, 2, 3, 10), 12, 0.0, 1.0);
    let d = smooth_disparity(sh(1, 1, 3, 10), 13, -2.5, 3.5, 0.05);
    let probe = probe_tensor(sh(1, 2, 3, 10), 14, -1.0, 1.0);
    run(&WarpProbe, &[src, d], &probe, 1e-6, OP_TOLERANCE)?;

    let img = sh(1, 3, 8, 32);
    let left = smooth_image(img, 15);
    let right = smooth_image(img, 16);
    let d = smooth_disparity(sh(1, 1, 8, 32), 17, 0.5, 3.5, 0.05);
    let loss_probe = ReprojectionProbe { left: left.clone(), right: right.clone(), level: 0 };
    run(&loss_probe, &[d], &scalar(1.0), 1e-6, OP_TOLERANCE)?;
    let y = probe_tensor(sh(1, 1, 2, 8), 18, 0.6, 1.8);
    run(&ReprojectionProbe { left, right, level: 2 }, &[y], &scalar(1.0), 1e-6, OP_TOLERANCE)?;

    let net = micro_network_probe()?;
    let params = net.parameters();
    let probe = probe_tensor(sh(1, 1, 8, 16), 19, -1.0, 1.0);
    run(&net, &params, &probe, 1e-6, NETWORK_TOLERANCE)?;
    Ok(entries)
}

/// Borrowed probe, so [`Negated`] can wrap a trait object.
struct Forward<'a>(&'a dyn Differentiable);

impl Differentiable for Forward<'_> {
    fn name(&self) -> String {
        self.0.name()
    }

    fn forward(&self, xs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        self.0.forward(xs)
    }

    fn backward(&self, xs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        self.0.backward(xs, probe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Leaky ReLU inputs pushed at least `gap` away from zero.
    fn away_from_kink(shape: Shape4, seed: u64, gap: f64) -> Tensor4<f64> {
        probe_tensor(shape, seed, -1.0, 1.0).map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
    }

    #[test]
    fn linear_conv_is_exact() {
        let x = probe_tensor(Shape4::new(1, 2, 4, 5), 1, -1.0, 1.0);
        let w = probe_tensor(Shape4::new(3, 2, 1, 1), 2, -1.0, 1.0);
        let b = probe_tensor(Shape4::new(1, 3, 1, 1), 3, -1.0, 1.0);
        let probe = probe_tensor(Shape4::new(1, 3, 4, 5), 4, -1.0, 1.0);
        let r = check_gradients(&ConvProbe(ConvGeometry::new(1, 1, 0)), &[x, w, b], &probe, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
    }

    #[test]
    fn strided_conv_matches_finite_differences() {
        let x = probe_tensor(Shape4::new(1, 2, 6, 6), 5, -1.0, 1.0);
        let w = probe_tensor(Shape4::new(3, 2, 3, 3), 6, -1.0, 1.0);
        let b = probe_tensor(Shape4::new(1, 3, 1, 1), 7, -1.0, 1.0);
        let probe = probe_tensor(Shape4::new(1, 3, 3, 3), 8, -1.0, 1.0);
        let r = check_gradients(&ConvProbe(ConvGeometry::new(2, 1, 1)), &[x, w, b], &probe, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-5, "{r:?}");
    }

    #[test]
    fn dilated_conv_matches_finite_differences() {
        let x = probe_tensor(Shape4::new(2, 2, 7, 9), 9, -1.0, 1.0);
        let w = probe_tensor(Shape4::new(2, 2, 3, 3), 10, -1.0, 1.0);
        let b = probe_tensor(Shape4::new(1, 2, 1, 1), 11, -1.0, 1.0);
        let probe = probe_tensor(Shape4::new(2, 2, 7, 9), 12, -1.0, 1.0);
        let r = check_gradients(&ConvProbe(ConvGeometry::same(3, 4)), &[x, w, b], &probe, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-5, "{r:?}");
    }

    #[test]
    fn leaky_relu_away_from_kink() {
        let x = away_from_kink(Shape4::new(1, 3, 4, 4), 13, 0.05);
        let probe = probe_tensor(x.shape(), 14, -1.0, 1.0);
        let r = check_gradients(&LeakyReluProbe(0.2), &[x], &probe, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-7, "{r:?}");
    }

    #[test]
    fn upsample_matches_finite_differences() {
        for f in [2, 4] {
            let x = probe_tensor(Shape4::new(1, 2, 3, 4), 15, -1.0, 1.0);
            let probe = probe_tensor(Shape4::new(1, 2, 3 * f, 4 * f), 16, -1.0, 1.0);
            let r = check_gradients(&UpsampleProbe(f), &[x], &probe, 1e-5).unwrap();
            assert!(r.max_relative_error < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn correlation_matches_finite_differences() {
        let l = probe_tensor(Shape4::new(1, 3, 3, 7), 17, -1.0, 1.0);
        let r = probe_tensor(Shape4::new(1, 3, 3, 7), 18, -1.0, 1.0);
        let probe = probe_tensor(Shape4::new(1, 5, 3, 7), 19, -1.0, 1.0);
        let rep = check_gradients(&CorrelationProbe(2), &[l, r], &probe, 1e-5).unwrap();
        assert!(rep.max_relative_error < 1e-9, "{rep:?}");
    }

    #[test]
    fn warp_matches_finite_differences() {
        let src = probe_tensor(Shape4::new(1, 2, 3, 10), 20, 0.0, 1.0);
        let d = smooth_disparity(Shape4::new(1, 1, 3, 10), 21, -2.5, 3.5, 0.05);
        let probe = probe_tensor(Shape4::new(1, 2, 3, 10), 22, -1.0, 1.0);
        let r = check_gradients(&WarpProbe, &[src, d], &probe, 1e-6).unwrap();
        assert!(r.max_relative_error < 1e-5, "{r:?}");
    }

    struct BrokenLeaky;

    impl Differentiable for BrokenLeaky {
        fn name(&self) -> String {
            "broken".into()
        }
        fn forward(&self, xs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
            Ok(ops::leaky_relu(&xs[0], 0.2))
        }
        fn backward(&self, _xs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
            Ok(vec![probe.clone()])
        }
    }

    #[test]
    fn detects_wrong_backward() {
        let x = away_from_kink(Shape4::new(1, 1, 3, 3), 23, 0.05);
        let probe = probe_tensor(x.shape(), 24, -1.0, 1.0);
        let r = check_gradients(&BrokenLeaky, &[x], &probe, 1e-5).unwrap();
        assert!(r.max_relative_error > 1e-2);
    }

    #[test]
    fn negated_entry_fails_and_others_pass() {
        let entries = run_suite(Some("leaky_relu")).unwrap();
        for e in &entries {
            assert_eq!(e.passed(), e.report.name != "leaky_relu", "{:?}", e.report);
        }
    }

    #[test]
    fn epsilon_outside_range_rejected() {
        let x = probe_tensor(Shape4::new(1, 1, 2, 2), 1, -1.0, 1.0);
        assert!(check_gradients(&LeakyReluProbe(0.2), std::slice::from_ref(&x), &x, 1e-3).is_err());
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let l = probe_tensor(Shape4::new(1, 2, 2, 6), 30, -1.0, 1.0);
        let r = probe_tensor(Shape4::new(1, 2, 2, 6), 31, -1.0, 1.0);
        let g1 = probe_tensor(Shape4::new(1, 5, 2, 6), 32, -1.0, 1.0);
        let g2 = probe_tensor(Shape4::new(1, 5, 2, 6), 33, -1.0, 1.0);
        let mut g12 = g1.clone();
        g12.add_assign(&g2).unwrap();
        let op = CorrelationProbe(2);
        let a = op.backward(&[l.clone(), r.clone()], &g1).unwrap();
        let b = op.backward(&[l.clone(), r.clone()], &g2).unwrap();
        let ab = op.backward(&[l, r], &g12).unwrap();
        for k in 0..2 {
            for ((x, y), z) in a[k].data().iter().zip(b[k].data()).zip(ab[k].data()) {
                assert!((x + y - z).abs() <= 1e-15 * (1.0 + z.abs()));
            }
        }
    }
}

/// Which network output the objective reads.
#[derive(Clone, Copy, Debug)]
pub enum NetworkOutput {
    Full,
    Level(usize),
}

/// A whole network viewed as a function of its parameters (declaration
/// order) for a fixed stereo pair.
pub struct NetworkProbe {
    pub net: crate::network::Network<f64>,
    pub left: Tensor4<f64>,
    pub right: Tensor4<f64>,
    pub output: NetworkOutput,
}

impl NetworkProbe {
    pub fn parameters(&self) -> Vec<Tensor4<f64>> {
        self.net.parameters().map(|p| p.value.clone()).collect()
    }

    fn with_params(&self, xs: &[Tensor4<f64>]) -> Result<crate::network::Network<f64>> {
        let mut net = self.net.clone();
        let count = net.parameters().count();
        if xs.len() != count {
            return Err(Error::Config(format!(
                "network probe expects {count} tensors, got {}",
                xs.len()
            )));
        }
        for (p, x) in net.parameters_mut().zip(xs) {
            x.expect_shape("network probe", p.value.shape())?;
            p.value = x.clone();
        }
        net.zero_grad();
        Ok(net)
    }

    fn select(&self, pyr: crate::network::DisparityPyramid<f64>) -> Result<Tensor4<f64>> {
        match self.output {
            NetworkOutput::Full => Ok(pyr.full),
            NetworkOutput::Level(k) => pyr
                .scaled
                .get(&k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no decoder at level {k}"))),
        }
    }
}

impl Differentiable for NetworkProbe {
    fn name(&self) -> String {
        format!("network {:?}", self.output)
    }

    fn forward(&self, xs: &[Tensor4<f64>]) -> Result<Tensor4<f64>> {
        let net = self.with_params(xs)?;
        self.select(net.forward(&self.left, &self.right)?)
    }

    fn backward(&self, xs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<Vec<Tensor4<f64>>> {
        let mut net = self.with_params(xs)?;
        let (_, trace) = net.forward_traced(&self.left, &self.right)?;
        let grads = match self.output {
            NetworkOutput::Full => crate::network::PyramidGrad::full(probe.clone()),
            NetworkOutput::Level(k) => {
                let mut g = crate::network::PyramidGrad::empty();
                g.scaled.insert(k, probe.clone());
                g
            }
        };
        net.backward_full(&trace, grads)?;
        Ok(net.parameters().map(|p| p.grad.clone()).collect())
    }
}

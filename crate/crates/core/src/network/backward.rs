use std::collections::BTreeMap;

use super::forward::ForwardTrace;
use super::{ConvLayer, Network, Scope};
use crate::error::{Error, Result};
use crate::ops;
use crate::param::{LayerId, ModuleId};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Upstream gradients for the outputs of a [`DisparityPyramid`](super::DisparityPyramid).
#[derive(Clone, Debug, Default)]
pub struct PyramidGrad<T> {
    pub scaled: BTreeMap<usize, Tensor4<T>>,
    pub refined: Option<Tensor4<T>>,
    pub full: Option<Tensor4<T>>,
}

impl<T: Scalar> PyramidGrad<T> {
    pub fn full(grad: Tensor4<T>) -> Self {
        PyramidGrad {
            full: Some(grad),
            ..Self::empty()
        }
    }

    pub fn empty() -> Self {
        PyramidGrad {
            scaled: BTreeMap::new(),
            refined: None,
            full: None,
        }
    }

    /// Gradient for the prediction returned by
    /// [`DisparityPyramid::module_prediction`](super::DisparityPyramid::module_prediction).
    pub fn for_module(module: ModuleId, lowest_level: usize, grad: Tensor4<T>) -> Self {
        let mut g = Self::empty();
        if module.level() == lowest_level {
            g.refined = Some(grad);
        } else {
            g.scaled.insert(module.level(), grad);
        }
        g
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor4<T>>, g: Tensor4<T>) -> Result<()> {
    match slot {
        Some(s) => s.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn layer_backward<T: Scalar>(
    layer: &mut ConvLayer<T>,
    input: &Tensor4<T>,
    output: &Tensor4<T>,
    grad_out: Tensor4<T>,
    slope: T,
    want_input: bool,
) -> Result<Option<Tensor4<T>>> {
    let g = if layer.activate {
        ops::leaky_relu_backward(output, &grad_out, slope)?
    } else {
        grad_out
    };
    ops::conv2d_backward(
        input,
        &layer.weight.value,
        layer.geom,
        &g,
        &mut layer.weight.grad,
        &mut layer.bias.grad,
        want_input,
    )
}

/// Walks a conv stack from its output back to its input. Layers outside the
/// scope stop the chain. `inject` adds an extra gradient at activation index
/// `.0` (output of layer `.0 - 1`).
fn stack_backward<T: Scalar>(
    layers: &mut [ConvLayer<T>],
    acts: &[Tensor4<T>],
    grad_out: Option<Tensor4<T>>,
    mut inject: Option<(usize, Tensor4<T>)>,
    scope: &Scope,
    slope: T,
    want_input: bool,
) -> Result<Option<Tensor4<T>>> {
    let mut carried = grad_out;
    for j in (0..layers.len()).rev() {
        if let Some((at, _)) = &inject {
            if *at == j + 1 {
                let (_, g) = inject.take().expect("checked");
                accumulate(&mut carried, g)?;
            }
        }
        let Some(g) = carried.take() else { continue };
        if !scope.contains(layers[j].id) {
            continue;
        }
        let want = if j > 0 {
            scope.contains(layers[j - 1].id)
        } else {
            want_input
        };
        carried = layer_backward(&mut layers[j], &acts[j], &acts[j + 1], g, slope, want)?;
    }
    Ok(carried)
}

impl<T: Scalar> Network<T> {
    /// Accumulates parameter gradients for layers in `scope`. Gradients that
    /// would flow into the output of a layer outside the scope are dropped,
    /// so a module-scoped pass never traverses layers of other modules.
    pub fn backward(&mut self, trace: &ForwardTrace<T>, grads: PyramidGrad<T>, scope: &Scope) -> Result<()> {
        let cfg = self.config.clone();
        let slope = self.slope();
        let lowest = cfg.lowest_decoder_level;
        let top = cfg.levels;
        let n = trace.batch;
        let two = T::lit(2.0);
        let last_dec = cfg.decoder_channels.len() - 1;
        let dec_id = |level, layer| LayerId::Decoder { level, layer };
        let feat_id = |level, conv| LayerId::Feature { level, conv };

        let mut g_y: BTreeMap<usize, Tensor4<T>> = BTreeMap::new();
        for (level, g) in grads.scaled {
            if !(lowest..=top).contains(&level) {
                return Err(Error::Config(format!("no decoder at level {level}")));
            }
            g.expect_shape("backward", trace.levels[level - lowest].decoder[last_dec + 1].shape())?;
            g_y.insert(level, g);
        }

        let mut g_refined = grads.refined;
        if let Some(gf) = grads.full {
            let factor = 1usize << lowest;
            let mut g = ops::bilinear_upsample_backward(trace.refined.shape(), factor, &gf)?;
            g.scale_inplace(T::from_usize(factor).unwrap());
            accumulate(&mut g_refined, g)?;
        }

        let mut g_penult = None;
        let mut g_left_low = None;
        if let Some(gr) = g_refined {
            gr.expect_shape("backward", trace.refined.shape())?;
            // refined = y_low + residual
            let slot = g_y.entry(lowest).or_insert_with(|| Tensor4::zeros(gr.shape()));
            slot.add_assign(&gr)?;
            let want = scope.contains(dec_id(lowest, last_dec))
                || scope.contains(dec_id(lowest, last_dec - 1))
                || scope.contains(feat_id(lowest, 1));
            let g_in = stack_backward(
                &mut self.refinement,
                &trace.refinement,
                Some(gr),
                None,
                scope,
                slope,
                want,
            )?;
            if let Some(g_in) = g_in {
                let mut parts = g_in
                    .split_channels(&[cfg.decoder_penultimate_channels(), cfg.feature_channels[lowest - 1], 1])?
                    .into_iter();
                g_penult = parts.next();
                g_left_low = parts.next();
                let gy = parts.next().expect("three parts");
                g_y.get_mut(&lowest).expect("inserted").add_assign(&gy)?;
            }
        }

        let mut g_feat: Vec<Option<Tensor4<T>>> = vec![None; top + 1];
        for level in lowest..=top {
            let lt = &trace.levels[level - lowest];
            let feat_in_scope = scope.contains(feat_id(level, 1));
            let up_needed = level < top && scope.contains(dec_id(level + 1, last_dec));
            let inject = if level == lowest {
                g_penult.take().map(|g| (last_dec, g))
            } else {
                None
            };
            let g_in = stack_backward(
                &mut self.decoders[level - lowest],
                &lt.decoder,
                g_y.remove(&level),
                inject,
                scope,
                slope,
                feat_in_scope || up_needed,
            )?;

            let mut g_left = if level == lowest { g_left_low.take() } else { None };
            let mut g_right = None;
            if let Some(g_in) = g_in.filter(|_| feat_in_scope || up_needed) {
                let mut counts = vec![cfg.correlation_channels(), cfg.feature_channels[level - 1]];
                if level < top {
                    counts.push(1);
                }
                let mut parts = g_in.split_channels(&counts)?.into_iter();
                let g_corr = parts.next().expect("corr");
                let g_lf = parts.next().expect("left");
                let mut g_up = parts.next();
                let matched = lt.warped.as_ref().unwrap_or(&lt.right);
                let (gl, gm) = ops::correlation1d_backward(&lt.left, matched, cfg.correlation_radius, &g_corr)?;
                if feat_in_scope {
                    accumulate(&mut g_left, gl)?;
                    accumulate(&mut g_left, g_lf)?;
                }
                match (&lt.up, level < top) {
                    (Some(up), true) => {
                        let (gs, gd) = ops::warp_horizontal_backward(&lt.right, up, &gm, feat_in_scope, up_needed)?;
                        g_right = gs;
                        if let Some(gd) = gd {
                            accumulate(&mut g_up, gd)?;
                        }
                    }
                    _ => {
                        if feat_in_scope {
                            g_right = Some(gm);
                        }
                    }
                }
                if up_needed {
                    let g_up = g_up.expect("present below the coarsest level");
                    let coarse_shape = trace.levels[level + 1 - lowest].decoder[last_dec + 1].shape();
                    let mut g = ops::bilinear_upsample_backward(coarse_shape, 2, &g_up)?;
                    g.scale_inplace(two);
                    match g_y.get_mut(&(level + 1)) {
                        Some(s) => s.add_assign(&g)?,
                        None => {
                            g_y.insert(level + 1, g);
                        }
                    }
                }
            }
            if feat_in_scope && (g_left.is_some() || g_right.is_some()) {
                let half = lt.left.shape();
                let gl = g_left.unwrap_or_else(|| Tensor4::zeros(half));
                let gr = g_right.unwrap_or_else(|| Tensor4::zeros(half));
                g_feat[level] = Some(Tensor4::concat_batch(&[&gl, &gr])?);
            }
        }
        debug_assert_eq!(n, trace.levels[0].left.shape().n);

        let mut carried: Option<Tensor4<T>> = None;
        for level in (1..=top).rev() {
            let mut g = g_feat[level].take();
            if let Some(c) = carried.take() {
                accumulate(&mut g, c)?;
            }
            let Some(g) = g else { continue };
            let [a, b] = &trace.features[level - 1];
            let block = &mut self.features[level - 1];
            if !scope.contains(block[1].id) {
                continue;
            }
            let want0 = scope.contains(block[0].id);
            let g0 = layer_backward(&mut block[1], a, b, g, slope, want0)?;
            let Some(g0) = g0 else { continue };
            let input = if level == 1 {
                &trace.image
            } else {
                &trace.features[level - 2][1]
            };
            let want_prev = level > 1 && scope.contains(feat_id(level - 1, 1));
            carried = layer_backward(&mut block[0], input, a, g0, slope, want_prev)?;
        }
        Ok(())
    }

    pub fn backward_full(&mut self, trace: &ForwardTrace<T>, grads: PyramidGrad<T>) -> Result<()> {
        let scope = self.scope_all();
        self.backward(trace, grads, &scope)
    }

    pub fn backward_module(&mut self, trace: &ForwardTrace<T>, grads: PyramidGrad<T>, module: ModuleId) -> Result<()> {
        let scope = self.scope_module(module)?;
        self.backward(trace, grads, &scope)
    }
}

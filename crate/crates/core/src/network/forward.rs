use std::collections::BTreeMap;

use super::{ConvLayer, Network};
use crate::error::{Error, Result};
use crate::ops;
use crate::param::ModuleId;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Multi-scale output of one forward pass.
#[derive(Clone, Debug)]
pub struct DisparityPyramid<T> {
    /// Raw decoder output `y_k` per level, in pixels of that level.
    pub scaled: BTreeMap<usize, Tensor4<T>>,
    /// Lowest-level disparity after the refinement residual.
    pub refined: Tensor4<T>,
    /// Full-resolution disparity.
    pub full: Tensor4<T>,
    pub lowest_level: usize,
}

impl<T: Scalar> DisparityPyramid<T> {
    /// The prediction a module is trained on, with its pyramid level. The
    /// lowest module answers with the refined map, so its loss covers the
    /// refinement stack it owns.
    pub fn module_prediction(&self, module: ModuleId) -> Result<(&Tensor4<T>, usize)> {
        let level = module.level();
        if level == self.lowest_level {
            return Ok((&self.refined, level));
        }
        self.scaled
            .get(&level)
            .map(|t| (t, level))
            .ok_or_else(|| Error::Config(format!("no prediction for module {module}")))
    }
}

/// Activations retained for a backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub(super) batch: usize,
    /// Left and right images stacked along the batch axis.
    pub(super) image: Tensor4<T>,
    /// `[conv0 out, conv1 out]` per feature level (stacked batch).
    pub(super) features: Vec<[Tensor4<T>; 2]>,
    /// Indexed by `level - lowest`.
    pub(super) levels: Vec<LevelTrace<T>>,
    /// `acts[0]` is the stack input, `acts[i + 1]` the output of layer `i`.
    pub(super) refinement: Vec<Tensor4<T>>,
    pub(super) refined: Tensor4<T>,
}

#[derive(Clone, Debug)]
pub(super) struct LevelTrace<T> {
    pub left: Tensor4<T>,
    pub right: Tensor4<T>,
    /// Coarser disparity, upsampled and rescaled to this level.
    pub up: Option<Tensor4<T>>,
    /// Right features warped by `up`; absent at the coarsest level.
    pub warped: Option<Tensor4<T>>,
    pub decoder: Vec<Tensor4<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Number of retained scalars, for memory accounting.
    pub fn retained_len(&self) -> usize {
        let lv: usize = self
            .levels
            .iter()
            .map(|l| {
                l.left.len()
                    + l.right.len()
                    + l.up.as_ref().map_or(0, Tensor4::len)
                    + l.warped.as_ref().map_or(0, Tensor4::len)
                    + l.decoder.iter().map(Tensor4::len).sum::<usize>()
            })
            .sum();
        self.image.len()
            + self.features.iter().map(|f| f[0].len() + f[1].len()).sum::<usize>()
            + lv
            + self.refinement.iter().map(Tensor4::len).sum::<usize>()
            + self.refined.len()
    }
}

pub(super) fn run_layer<T: Scalar>(layer: &ConvLayer<T>, input: &Tensor4<T>, slope: T) -> Result<Tensor4<T>> {
    let mut out = ops::conv2d(input, &layer.weight.value, &layer.bias.value, layer.geom)?;
    if layer.activate {
        ops::leaky_relu_inplace(&mut out, slope);
    }
    Ok(out)
}

fn run_stack<T: Scalar>(layers: &[ConvLayer<T>], input: Tensor4<T>, slope: T) -> Result<Vec<Tensor4<T>>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input);
    for l in layers {
        let next = run_layer(l, acts.last().expect("non-empty"), slope)?;
        acts.push(next);
    }
    Ok(acts)
}

fn check_pair<T: Scalar>(net: &Network<T>, left: &Tensor4<T>, right: &Tensor4<T>) -> Result<()> {
    let s = left.shape();
    if s.c != 3 {
        return Err(Error::shape(
            "network input",
            format!("expected 3 channels, got {}", s.c),
        ));
    }
    right.expect_shape("network input", s)?;
    net.config.check_input(s.h, s.w)
}

impl<T: Scalar> Network<T> {
    /// Inference-only forward pass.
    pub fn forward(&self, left: &Tensor4<T>, right: &Tensor4<T>) -> Result<DisparityPyramid<T>> {
        self.forward_traced(left, right).map(|(p, _)| p)
    }

    /// Forward pass that also returns the activations needed by backward.
    pub fn forward_traced(
        &self,
        left: &Tensor4<T>,
        right: &Tensor4<T>,
    ) -> Result<(DisparityPyramid<T>, ForwardTrace<T>)> {
        check_pair(self, left, right)?;
        let cfg = &self.config;
        let slope = self.slope();
        let n = left.shape().n;
        let image = Tensor4::concat_batch(&[left, right])?;

        let mut features: Vec<[Tensor4<T>; 2]> = Vec::with_capacity(cfg.levels);
        for block in &self.features {
            let input = features.last().map_or(&image, |f| &f[1]);
            let a = run_layer(&block[0], input, slope)?;
            let b = run_layer(&block[1], &a, slope)?;
            features.push([a, b]);
        }

        let two = T::lit(2.0);
        let mut scaled = BTreeMap::new();
        let mut levels: Vec<LevelTrace<T>> = Vec::with_capacity(cfg.module_count());
        for level in cfg.decoder_levels() {
            let f = &features[level - 1][1];
            let lf = f.slice_batch(0, n)?;
            let rf = f.slice_batch(n, n)?;
            let trace = if level == cfg.levels {
                let corr = ops::correlation1d(&lf, &rf, cfg.correlation_radius)?;
                let input = Tensor4::concat_channels(&[&corr, &lf])?;
                let decoder = run_stack(self.decoder(level), input, slope)?;
                LevelTrace {
                    left: lf,
                    right: rf,
                    up: None,
                    warped: None,
                    decoder,
                }
            } else {
                let coarse = &scaled[&(level + 1)];
                let mut up = ops::bilinear_upsample(coarse, 2)?;
                up.scale_inplace(two);
                let warped = ops::warp_horizontal(&rf, &up)?;
                let corr = ops::correlation1d(&lf, &warped, cfg.correlation_radius)?;
                let input = Tensor4::concat_channels(&[&corr, &lf, &up])?;
                let decoder = run_stack(self.decoder(level), input, slope)?;
                LevelTrace {
                    left: lf,
                    right: rf,
                    up: Some(up),
                    warped: Some(warped),
                    decoder,
                }
            };
            scaled.insert(level, trace.decoder.last().expect("non-empty").clone());
            levels.push(trace);
        }
        levels.reverse();

        let lowest = cfg.lowest_decoder_level;
        let low = &levels[0];
        let y_low = &scaled[&lowest];
        let penult = &low.decoder[low.decoder.len() - 2];
        let input = Tensor4::concat_channels(&[penult, &low.left, y_low])?;
        let refinement = run_stack(&self.refinement, input, slope)?;
        let mut refined = y_low.clone();
        refined.add_assign(refinement.last().expect("non-empty"))?;

        let factor = 1usize << lowest;
        let mut full = ops::bilinear_upsample(&refined, factor)?;
        full.scale_inplace(T::from_usize(factor).unwrap());

        let pyramid = DisparityPyramid {
            scaled,
            refined: refined.clone(),
            full,
            lowest_level: lowest,
        };
        let trace = ForwardTrace {
            batch: n,
            image,
            features,
            levels,
            refinement,
            refined,
        };
        Ok((pyramid, trace))
    }
}

//! The pyramidal stereo network and its module partition.
//!
//! Layout, coarse to fine:
//!
//! * feature blocks `F_1..F_L`, each a stride-2 and a stride-1 3x3 conv,
//!   shared by the left and right towers;
//! * decoders `D_L..D_lowest`, fed with `[correlation, left features,
//!   upsampled disparity]` (no disparity at the coarsest level);
//! * a dilated refinement stack at the lowest decoder level producing a
//!   residual for that level's disparity, upsampled to full resolution.
//!
//! Module `M_k` owns `F_k` and `D_k`. Finer feature blocks and the refinement
//! stack belong to the lowest module.

mod backward;
mod checkpoint;
mod config;
mod forward;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use backward::PyramidGrad;
pub use checkpoint::CHECKPOINT_VERSION;
pub use config::NetworkConfig;
pub use forward::{DisparityPyramid, ForwardTrace};

use crate::error::Result;
use crate::ops::ConvGeometry;
use crate::param::{LayerId, ModuleId, Parameter};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug)]
pub struct ConvLayer<T> {
    pub id: LayerId,
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub geom: ConvGeometry,
    /// Leaky ReLU after the convolution.
    pub activate: bool,
}

impl<T: Scalar> ConvLayer<T> {
    fn new(
        id: LayerId,
        owner: ModuleId,
        cin: usize,
        cout: usize,
        geom: ConvGeometry,
        activate: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (cin * 9) as f64;
        let gain = if activate { 2.0 } else { 1.0 };
        let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("finite std");
        let shape = Shape4::new(cout, cin, 3, 3);
        let weight = Tensor4::from_fn(shape, |_, _, _, _| T::lit(normal.sample(rng)));
        ConvLayer {
            id,
            weight: Parameter::new(weight, owner),
            bias: Parameter::new(Tensor4::zeros(Shape4::new(1, cout, 1, 1)), owner),
            geom,
            activate,
        }
    }

    pub fn owner(&self) -> ModuleId {
        self.weight.owner
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape().n
    }
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetworkConfig,
    /// `features[k - 1]` is block `F_k`.
    features: Vec<[ConvLayer<T>; 2]>,
    /// `decoders[k - lowest]` is `D_k`.
    decoders: Vec<Vec<ConvLayer<T>>>,
    refinement: Vec<ConvLayer<T>>,
}

/// Set of layers a backward pass or an optimizer step may touch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scope {
    layers: BTreeSet<LayerId>,
}

impl Scope {
    pub fn contains(&self, id: LayerId) -> bool {
        self.layers.contains(&id)
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.layers.iter().copied()
    }

    pub fn from_layers(layers: impl IntoIterator<Item = LayerId>) -> Self {
        Scope {
            layers: layers.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a network with seeded fan-in scaled normal weights and zero biases.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slope_geom = ConvGeometry::new(2, 1, 1);
        let same = ConvGeometry::same(3, 1);

        let mut features = Vec::with_capacity(config.levels);
        let mut cin = 3;
        for level in 1..=config.levels {
            let c = config.feature_channels[level - 1];
            let owner = config.feature_owner(level);
            let a = ConvLayer::new(
                LayerId::Feature { level, conv: 0 },
                owner,
                cin,
                c,
                slope_geom,
                true,
                &mut rng,
            );
            let b = ConvLayer::new(
                LayerId::Feature { level, conv: 1 },
                owner,
                c,
                c,
                same,
                true,
                &mut rng,
            );
            features.push([a, b]);
            cin = c;
        }

        let mut decoders = Vec::with_capacity(config.module_count());
        for level in config.lowest_decoder_level..=config.levels {
            let mut cin = config.decoder_input_channels(level);
            let last = config.decoder_channels.len() - 1;
            let layers = config
                .decoder_channels
                .iter()
                .enumerate()
                .map(|(layer, &c)| {
                    let l = ConvLayer::new(
                        LayerId::Decoder { level, layer },
                        ModuleId(level),
                        cin,
                        c,
                        same,
                        layer != last,
                        &mut rng,
                    );
                    cin = c;
                    l
                })
                .collect();
            decoders.push(layers);
        }

        let mut cin = config.refinement_input_channels();
        let last = config.refinement_channels.len() - 1;
        let refinement = config
            .refinement_channels
            .iter()
            .zip(&config.refinement_dilations)
            .enumerate()
            .map(|(layer, (&c, &d))| {
                let l = ConvLayer::new(
                    LayerId::Refinement { layer },
                    config.refinement_owner(),
                    cin,
                    c,
                    ConvGeometry::same(3, d),
                    layer != last,
                    &mut rng,
                );
                cin = c;
                l
            })
            .collect();

        Ok(Network {
            config,
            features,
            decoders,
            refinement,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn slope(&self) -> T {
        T::lit(self.config.leaky_slope)
    }

    pub(crate) fn decoder(&self, level: usize) -> &[ConvLayer<T>] {
        &self.decoders[level - self.config.lowest_decoder_level]
    }

    /// Every layer in declaration order: features fine to coarse, decoders
    /// coarse to fine, then refinement.
    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer<T>> {
        self.features
            .iter()
            .flat_map(|b| b.iter())
            .chain(self.decoders.iter().rev().flat_map(|d| d.iter()))
            .chain(self.refinement.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer<T>> {
        self.features
            .iter_mut()
            .flat_map(|b| b.iter_mut())
            .chain(self.decoders.iter_mut().rev().flat_map(|d| d.iter_mut()))
            .chain(self.refinement.iter_mut())
    }

    pub fn layer_mut(&mut self, id: LayerId) -> &mut ConvLayer<T> {
        let lowest = self.config.lowest_decoder_level;
        match id {
            LayerId::Feature { level, conv } => &mut self.features[level - 1][conv],
            LayerId::Decoder { level, layer } => &mut self.decoders[level - lowest][layer],
            LayerId::Refinement { layer } => &mut self.refinement[layer],
        }
    }

    /// Parameters in declaration order (weight then bias per layer).
    pub fn parameters(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.layers().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.layers_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias].into_iter())
    }

    pub fn count_parameters(&self) -> usize {
        self.parameters().map(Parameter::len).sum()
    }

    pub fn modules(&self) -> Vec<ModuleId> {
        self.config.modules()
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().for_each(Parameter::zero_grad);
    }

    /// Order-sensitive FNV-1a hash over parameter bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.parameters() {
            for v in p.value.data() {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn scope_all(&self) -> Scope {
        Scope::from_layers(self.layers().map(|l| l.id))
    }

    pub fn scope_modules(&self, modules: &[ModuleId]) -> Scope {
        Scope::from_layers(
            self.layers()
                .filter(|l| modules.contains(&l.owner()))
                .map(|l| l.id),
        )
    }

    pub fn scope_module(&self, module: ModuleId) -> Result<Scope> {
        if !self.modules().contains(&module) {
            return Err(crate::Error::Config(format!(
                "unknown module {module}; network has {:?}",
                self.modules()
            )));
        }
        Ok(self.scope_modules(&[module]))
    }

    /// The final refinement convolution only.
    pub fn scope_last_layer(&self) -> Scope {
        Scope::from_layers([self.refinement.last().expect("non-empty").id])
    }

    pub fn scope_refinement(&self) -> Scope {
        Scope::from_layers(self.refinement.iter().map(|l| l.id))
    }

    /// Refinement plus the lowest decoder.
    pub fn scope_lowest_decoder_and_refinement(&self) -> Scope {
        let lowest = self.config.lowest_decoder_level;
        Scope::from_layers(
            self.refinement
                .iter()
                .chain(self.decoder(lowest))
                .map(|l| l.id),
        )
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |l: &ConvLayer<T>| ConvLayer {
            id: l.id,
            weight: Parameter {
                value: l.weight.value.cast(),
                grad: l.weight.grad.cast(),
                owner: l.weight.owner,
            },
            bias: Parameter {
                value: l.bias.value.cast(),
                grad: l.bias.grad.cast(),
                owner: l.bias.owner,
            },
            geom: l.geom,
            activate: l.activate,
        };
        Network {
            config: self.config.clone(),
            features: self
                .features
                .iter()
                .map(|[a, b]| [conv(a), conv(b)])
                .collect(),
            decoders: self
                .decoders
                .iter()
                .map(|d| d.iter().map(conv).collect())
                .collect(),
            refinement: self.refinement.iter().map(conv).collect(),
        }
    }
}

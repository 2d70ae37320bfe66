//! Adaptive-moment optimizer restricted to a layer scope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, Scope};
use crate::param::{ModuleId, Parameter};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(lr: f64) -> Self {
        AdamConfig {
            learning_rate: lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment estimates for one parameter tensor. Step counts are kept per
/// tensor because scoped updates touch different tensors at different rates.
#[derive(Clone, Debug)]
struct Moments<T> {
    m: Tensor4<T>,
    v: Tensor4<T>,
    steps: u64,
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    /// Declaration order, matching [`Network::parameters`].
    state: Vec<Moments<T>>,
}

fn adam_step<T: Scalar>(p: &mut Parameter<T>, s: &mut Moments<T>, cfg: &AdamConfig) {
    s.steps += 1;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let one = T::one();
    let t = s.steps as i32;
    let c1 = one - T::lit(cfg.beta1.powi(t));
    let c2 = one - T::lit(cfg.beta2.powi(t));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    let g = p.grad.data();
    let value = p.value.data_mut();
    let m = s.m.data_mut();
    let v = s.v.data_mut();
    for i in 0..g.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        value[i] -= lr * mh / (vh.sqrt() + eps);
    }
    p.zero_grad();
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Network<T>, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let state = net
            .parameters()
            .map(|p| Moments {
                m: Tensor4::zeros(p.value.shape()),
                v: Tensor4::zeros(p.value.shape()),
                steps: 0,
            })
            .collect();
        Ok(Adam { config, state })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Updates every parameter of the layers in `scope` and resets their
    /// gradients. Other parameters and their gradients are left alone.
    pub fn step(&mut self, net: &mut Network<T>, scope: &Scope) -> Result<()> {
        let expected = net.parameters().count();
        if expected != self.state.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, network has {expected}",
                self.state.len()
            )));
        }
        let cfg = self.config;
        for (i, layer) in net.layers_mut().enumerate() {
            if !scope.contains(layer.id) {
                continue;
            }
            adam_step(&mut layer.weight, &mut self.state[2 * i], &cfg);
            adam_step(&mut layer.bias, &mut self.state[2 * i + 1], &cfg);
        }
        Ok(())
    }

    /// Number of updates applied so far to each tensor, in declaration order.
    pub fn step_counts(&self) -> Vec<u64> {
        self.state.iter().map(|s| s.steps).collect()
    }
}

/// Applies one optimizer step to the listed modules.
pub fn apply_update<T: Scalar>(net: &mut Network<T>, opt: &mut Adam<T>, modules: &[ModuleId]) -> Result<()> {
    let scope = net.scope_modules(modules);
    opt.step(net, &scope)
}

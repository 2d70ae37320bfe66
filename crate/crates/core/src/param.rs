//! Trainable parameters and the identifiers that partition them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// An adaptation module, named by the pyramid level it works at (`M_k`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModuleId(pub usize);

impl ModuleId {
    pub fn level(self) -> usize {
        self.0
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.0)
    }
}

/// Identifies one convolution in the network graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerId {
    /// `conv` 0 is the stride-2 layer, 1 the stride-1 layer.
    Feature { level: usize, conv: usize },
    Decoder { level: usize, layer: usize },
    Refinement { layer: usize },
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerId::Feature { level, conv } => write!(f, "F{level}.{conv}"),
            LayerId::Decoder { level, layer } => write!(f, "D{level}.{layer}"),
            LayerId::Refinement { layer } => write!(f, "R.{layer}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub owner: ModuleId,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor4<T>, owner: ModuleId) -> Self {
        let grad = Tensor4::zeros(value.shape());
        Parameter { value, grad, owner }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::DEFAULT_LEAKY_SLOPE;
use crate::param::ModuleId;

/// Shape of the pyramid network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub levels: usize,
    pub feature_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub refinement_channels: Vec<usize>,
    pub refinement_dilations: Vec<usize>,
    pub correlation_radius: usize,
    pub leaky_slope: f64,
    pub lowest_decoder_level: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::canonical()
    }
}

impl NetworkConfig {
    /// Full-size network.
    pub fn canonical() -> Self {
        NetworkConfig {
            levels: 6,
            feature_channels: vec![16, 32, 64, 96, 128, 192],
            decoder_channels: vec![128, 128, 96, 64, 1],
            refinement_channels: vec![128, 128, 128, 96, 64, 32, 1],
            refinement_dilations: vec![1, 2, 4, 8, 16, 1, 1],
            correlation_radius: 2,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            lowest_decoder_level: 2,
        }
    }

    /// Narrow variant for CPU experiments; same topology as [`canonical`](Self::canonical).
    pub fn desk() -> Self {
        NetworkConfig {
            feature_channels: vec![4, 8, 16, 24, 32, 48],
            decoder_channels: vec![16, 16, 12, 8, 1],
            refinement_channels: vec![16, 16, 16, 12, 8, 4, 1],
            ..Self::canonical()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels == 0 {
            return bad("levels must be >= 1".into());
        }
        if self.feature_channels.len() != self.levels {
            return bad(format!(
                "feature_channels has {} entries for {} levels",
                self.feature_channels.len(),
                self.levels
            ));
        }
        if self.decoder_channels.len() < 2 || self.decoder_channels.last() != Some(&1) {
            return bad("decoder_channels needs >= 2 layers ending in 1".into());
        }
        if self.refinement_channels.len() < 2 || self.refinement_channels.last() != Some(&1) {
            return bad("refinement_channels needs >= 2 layers ending in 1".into());
        }
        if self.refinement_dilations.len() != self.refinement_channels.len() {
            return bad(format!(
                "refinement_dilations has {} entries for {} refinement layers",
                self.refinement_dilations.len(),
                self.refinement_channels.len()
            ));
        }
        if self.refinement_dilations.contains(&0) {
            return bad("refinement dilations must be >= 1".into());
        }
        if self
            .feature_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain(&self.refinement_channels)
            .any(|&c| c == 0)
        {
            return bad("channel counts must be >= 1".into());
        }
        if self.correlation_radius == 0 {
            return bad("correlation_radius must be >= 1".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope {} outside (0, 1)", self.leaky_slope));
        }
        if self.lowest_decoder_level == 0 || self.lowest_decoder_level > self.levels {
            return bad(format!(
                "lowest_decoder_level {} outside [1, {}]",
                self.lowest_decoder_level, self.levels
            ));
        }
        Ok(())
    }

    /// Required divisor of input height and width.
    pub fn input_multiple(&self) -> usize {
        1 << self.levels
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.input_multiple();
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::shape(
                "network input",
                format!("{h}x{w} is not divisible by {m} (2^levels)"),
            ));
        }
        Ok(())
    }

    /// Decoder levels, coarsest first.
    pub fn decoder_levels(&self) -> impl DoubleEndedIterator<Item = usize> + Clone {
        (self.lowest_decoder_level..=self.levels).rev()
    }

    /// The adaptation modules, one per decoder level, finest first.
    pub fn modules(&self) -> Vec<ModuleId> {
        (self.lowest_decoder_level..=self.levels)
            .map(ModuleId)
            .collect()
    }

    pub fn module_count(&self) -> usize {
        self.levels + 1 - self.lowest_decoder_level
    }

    /// Module owning feature block `level`; blocks finer than the lowest
    /// decoder level join the lowest module.
    pub fn feature_owner(&self, level: usize) -> ModuleId {
        ModuleId(level.max(self.lowest_decoder_level))
    }

    pub fn refinement_owner(&self) -> ModuleId {
        ModuleId(self.lowest_decoder_level)
    }

    pub fn correlation_channels(&self) -> usize {
        2 * self.correlation_radius + 1
    }

    pub fn decoder_input_channels(&self, level: usize) -> usize {
        let up = usize::from(level < self.levels);
        self.correlation_channels() + self.feature_channels[level - 1] + up
    }

    pub fn decoder_penultimate_channels(&self) -> usize {
        self.decoder_channels[self.decoder_channels.len() - 2]
    }

    pub fn refinement_input_channels(&self) -> usize {
        self.decoder_penultimate_channels()
            + self.feature_channels[self.lowest_decoder_level - 1]
            + 1
    }

    /// Parameter count derived from layer shapes alone.
    pub fn analytic_parameter_count(&self) -> usize {
        let conv = |cin: usize, cout: usize| cout * cin * 9 + cout;
        let mut total = 0;
        let mut cin = 3;
        for &c in &self.feature_channels {
            total += conv(cin, c) + conv(c, c);
            cin = c;
        }
        for level in self.decoder_levels() {
            let mut cin = self.decoder_input_channels(level);
            for &c in &self.decoder_channels {
                total += conv(cin, c);
                cin = c;
            }
        }
        let mut cin = self.refinement_input_channels();
        for &c in &self.refinement_channels {
            total += conv(cin, c);
            cin = c;
        }
        total
    }
}

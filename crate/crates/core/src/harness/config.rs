use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::AdaptationMode;
use crate::data::io::Manifest;
use crate::data::{central_crop, SceneSpec, SequenceGenerator, StereoFrame};
use crate::error::{Error, Result};
use crate::network::NetworkConfig;

/// Named scene distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    A,
    B,
    C,
}

impl Domain {
    pub fn spec(self, height: usize, width: usize) -> SceneSpec {
        match self {
            Domain::A => SceneSpec::domain_a(height, width),
            Domain::B => SceneSpec::domain_b(height, width),
            Domain::C => SceneSpec::domain_c(height, width),
        }
    }
}

/// Where adaptation frames come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SequenceSource {
    Generator {
        domain: Domain,
        length: usize,
        /// Replaces the domain preset entirely when present.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scene: Option<SceneSpec>,
    },
    Manifest {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub domain: Domain,
    /// Weight of pyramid level `k` is `level_decay^(k-1)`; the full-resolution
    /// output has weight 1.
    pub level_decay: f64,
    pub eval_frames: usize,
    pub log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 2000,
            batch: 4,
            learning_rate: 1e-3,
            domain: Domain::A,
            level_decay: 0.5,
            eval_frames: 50,
            log_every: 50,
        }
    }
}

/// Everything a command needs; a run is a function of this plus a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    /// Generated frame size `(height, width)`.
    pub resolution: (usize, usize),
    pub mode: AdaptationMode,
    pub seed: u64,
    /// Seeds for multi-run comparisons.
    pub seeds: Vec<u64>,
    pub learning_rate: f64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop: Option<(usize, usize)>,
    /// Times the sequence is played back to back.
    pub repeat: usize,
    pub sequence: SequenceSource,
    pub pretrain: PretrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::desk(),
            resolution: (64, 192),
            mode: AdaptationMode::MadFull,
            seed: 0,
            seeds: vec![1, 2, 3, 4, 5],
            learning_rate: 1e-4,
            output_dir: PathBuf::from("runs"),
            checkpoint: None,
            crop: None,
            repeat: 1,
            sequence: SequenceSource::Generator {
                domain: Domain::B,
                length: 1000,
                scene: None,
            },
            pretrain: PretrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let (h, w) = self.resolution;
        if let Some((ch, cw)) = self.crop {
            if ch > h || cw > w {
                return Err(Error::Config(format!("crop {ch}x{cw} exceeds resolution {h}x{w}")));
            }
            self.network.check_input(ch, cw)?;
        } else if matches!(self.sequence, SequenceSource::Generator { .. }) {
            self.network.check_input(h, w)?;
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if self.repeat == 0 {
            return Err(Error::Config("repeat must be >= 1".into()));
        }
        if self.pretrain.batch == 0 {
            return Err(Error::Config("pretrain batch must be >= 1".into()));
        }
        if let SequenceSource::Generator { scene: Some(s), .. } = &self.sequence {
            s.validate()?;
        }
        Ok(())
    }

    pub fn scene_spec(&self) -> Result<SceneSpec> {
        match &self.sequence {
            SequenceSource::Generator { scene: Some(s), .. } => Ok(s.clone()),
            SequenceSource::Generator { domain, .. } => Ok(domain.spec(self.resolution.0, self.resolution.1)),
            SequenceSource::Manifest { .. } => Err(Error::Config("sequence comes from a manifest".into())),
        }
    }

    /// Input size seen by the network.
    pub fn input_size(&self) -> (usize, usize) {
        self.crop.unwrap_or(self.resolution)
    }

    /// Lazily produces the adaptation frames for `seed`, cropped and repeated
    /// as configured.
    pub fn frames(&self, seed: u64) -> Result<FrameStream> {
        let source = match &self.sequence {
            SequenceSource::Generator { length, .. } => Source::Generator {
                spec: self.scene_spec()?,
                seed,
                length: *length,
                gen: None,
            },
            SequenceSource::Manifest { path } => {
                let manifest = Manifest::load(path)?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Source::Manifest { manifest, base }
            }
        };
        Ok(FrameStream {
            source,
            crop: self.crop,
            repeat: self.repeat,
            pass: 0,
            index: 0,
        })
    }
}

enum Source {
    Generator {
        spec: SceneSpec,
        seed: u64,
        length: usize,
        gen: Option<SequenceGenerator>,
    },
    Manifest {
        manifest: Manifest,
        base: PathBuf,
    },
}

/// Iterator over the frames of a run.
pub struct FrameStream {
    source: Source,
    crop: Option<(usize, usize)>,
    repeat: usize,
    pass: usize,
    index: usize,
}

impl FrameStream {
    pub fn len(&self) -> usize {
        let per_pass = match &self.source {
            Source::Generator { length, .. } => *length,
            Source::Manifest { manifest, .. } => manifest.len(),
        };
        per_pass * self.repeat
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn raw_next(&mut self) -> Option<Result<StereoFrame<f32>>> {
        loop {
            if self.pass >= self.repeat {
                return None;
            }
            let (len, item) = match &mut self.source {
                Source::Generator { spec, seed, length, gen } => {
                    if self.index == 0 {
                        match SequenceGenerator::new(spec.clone(), *seed) {
                            Ok(g) => *gen = Some(g),
                            Err(e) => return Some(Err(e)),
                        }
                    }
                    let item = (self.index < *length).then(|| gen.as_mut().expect("created").next_frame());
                    (*length, item)
                }
                Source::Manifest { manifest, base } => {
                    let item = (self.index < manifest.len()).then(|| manifest.load_frame(base, self.index));
                    (manifest.len(), item)
                }
            };
            match item {
                Some(f) => {
                    self.index += 1;
                    return Some(f);
                }
                None => {
                    self.pass += 1;
                    self.index = 0;
                    if len == 0 {
                        return None;
                    }
                }
            }
        }
    }
}

impl Iterator for FrameStream {
    type Item = Result<StereoFrame<f32>>;

    fn next(&mut self) -> Option<Self::Item> {
        let frame = self.raw_next()?;
        Some(frame.and_then(|f| match self.crop {
            Some((h, w)) => central_crop(&f, h, w),
            None => Ok(f),
        }))
    }
}

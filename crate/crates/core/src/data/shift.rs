//! Photometric domain shift applied identically to both views.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::texture::TextureFamily;
use super::StereoFrame;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Appearance of a visual domain: the surface texture used by the generator
/// plus a pointwise colour transform `clamp((M c)^gamma + offset + noise)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftSpec {
    pub gamma: f64,
    pub brightness_offset: f64,
    /// Row `i` gives output channel `i` as a mix of the input channels.
    pub channel_mix: [[f64; 3]; 3],
    /// Per-pixel sensor noise, independent in each view.
    pub noise_sigma: f64,
    pub texture_family: TextureFamily,
}

impl Default for DomainShiftSpec {
    fn default() -> Self {
        Self::identity(TextureFamily::Dots)
    }
}

impl DomainShiftSpec {
    pub const IDENTITY_MIX: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    pub fn identity(texture_family: TextureFamily) -> Self {
        DomainShiftSpec {
            gamma: 1.0,
            brightness_offset: 0.0,
            channel_mix: Self::IDENTITY_MIX,
            noise_sigma: 0.0,
            texture_family,
        }
    }

    pub fn is_photometric_identity(&self) -> bool {
        self.gamma == 1.0
            && self.brightness_offset == 0.0
            && self.channel_mix == Self::IDENTITY_MIX
            && self.noise_sigma == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.channel_mix.iter().flatten().all(|v| v.is_finite())
            && self.brightness_offset.is_finite();
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !finite {
            return Err(Error::Config("channel_mix and brightness_offset must be finite".into()));
        }
        Ok(())
    }

    fn pixel(&self, rgb: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            let m = &self.channel_mix[i];
            let v = (m[0] * rgb[0] + m[1] * rgb[1] + m[2] * rgb[2]).clamp(0.0, 1.0);
            *o = v.powf(self.gamma) + self.brightness_offset;
        }
        out
    }

    /// Transforms one `(1, 3, h, w)` image in place.
    pub fn apply_image<T: Scalar, R: Rng + ?Sized>(&self, image: &mut Tensor4<T>, rng: &mut R) -> Result<()> {
        let s = image.shape();
        if s.c != 3 {
            return Err(Error::shape(
                "apply_domain_shift",
                format!("expected 3 channels, got {}", s.c),
            ));
        }
        let noise = (self.noise_sigma > 0.0).then(|| Normal::new(0.0, self.noise_sigma).expect("validated"));
        let plane = s.plane();
        for n in 0..s.n {
            let item = image.item_mut(n);
            for p in 0..plane {
                let rgb = [item[p].as_f64(), item[plane + p].as_f64(), item[2 * plane + p].as_f64()];
                let out = self.pixel(rgb);
                for (c, v) in out.into_iter().enumerate() {
                    let v = match &noise {
                        Some(d) => v + d.sample(rng),
                        None => v,
                    };
                    item[c * plane + p] = T::lit(v.clamp(0.0, 1.0));
                }
            }
        }
        Ok(())
    }
}

/// Applies `spec` to both views; disparity and mask are untouched.
pub fn apply_domain_shift<T: Scalar, R: Rng + ?Sized>(
    frame: &StereoFrame<T>,
    spec: &DomainShiftSpec,
    rng: &mut R,
) -> Result<StereoFrame<T>> {
    spec.validate()?;
    let mut out = frame.clone();
    if spec.is_photometric_identity() {
        return Ok(out);
    }
    spec.apply_image(&mut out.left, rng)?;
    spec.apply_image(&mut out.right, rng)?;
    Ok(out)
}

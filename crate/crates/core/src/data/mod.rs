//! Stereo frames: synthetic generation, photometric domain shift, metrics
//! and file formats.

pub mod io;
mod metrics;
mod scene;
mod shift;
mod texture;

pub use metrics::{d1_all, epe, D1_THRESHOLD};
pub use scene::{generate_sequence, DisparityPlane, Layer, Scene, SceneSpec, SequenceGenerator};
pub use shift::{apply_domain_shift, DomainShiftSpec};
pub use texture::{Texture, TextureFamily};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// A rectified stereo pair, optionally with ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoFrame<T> {
    /// `(1, 3, h, w)` in `[0, 1]`.
    pub left: Tensor4<T>,
    pub right: Tensor4<T>,
    /// `(1, 1, h, w)` disparity in pixels.
    pub gt_disparity: Option<Tensor4<T>>,
    /// `(1, 1, h, w)`, 1 where the ground truth is valid, 0 elsewhere.
    pub valid_mask: Option<Tensor4<T>>,
}

/// Error metrics of one prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMetrics {
    pub epe: f64,
    pub d1: f64,
}

impl<T: Scalar> StereoFrame<T> {
    pub fn new(left: Tensor4<T>, right: Tensor4<T>) -> Result<Self> {
        let s = left.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::shape(
                "stereo frame",
                format!("expected a 1x3xHxW image, got {s}"),
            ));
        }
        right.expect_shape("stereo frame", s)?;
        Ok(StereoFrame {
            left,
            right,
            gt_disparity: None,
            valid_mask: None,
        })
    }

    /// Attaches ground truth. A missing mask marks every pixel valid.
    pub fn with_ground_truth(mut self, gt: Tensor4<T>, mask: Option<Tensor4<T>>) -> Result<Self> {
        let s = self.left.shape().with_channels(1);
        gt.expect_shape("ground truth", s)?;
        let mask = mask.unwrap_or_else(|| Tensor4::full(s, T::one()));
        mask.expect_shape("validity mask", s)?;
        let negative = gt
            .data()
            .iter()
            .zip(mask.data())
            .any(|(&d, &m)| m > T::zero() && !(d >= T::zero()));
        if negative {
            return Err(Error::Format("ground truth must be >= 0 on valid pixels".into()));
        }
        self.gt_disparity = Some(gt);
        self.valid_mask = Some(mask);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.left.shape().h
    }

    pub fn width(&self) -> usize {
        self.left.shape().w
    }

    pub fn has_ground_truth(&self) -> bool {
        self.gt_disparity.is_some()
    }

    /// EPE and D1-all of `pred` against the ground truth; `None` without
    /// ground truth or with an empty mask.
    pub fn metrics(&self, pred: &Tensor4<T>) -> Result<Option<FrameMetrics>> {
        let Some(gt) = &self.gt_disparity else {
            return Ok(None);
        };
        let ones;
        let mask = match &self.valid_mask {
            Some(m) => m,
            None => {
                ones = Tensor4::full(gt.shape(), T::one());
                &ones
            }
        };
        let e = epe(pred, gt, mask)?;
        let d = d1_all(pred, gt, mask, D1_THRESHOLD)?;
        Ok(e.zip(d).map(|(epe, d1)| FrameMetrics { epe, d1 }))
    }

    pub fn cast<U: Scalar>(&self) -> StereoFrame<U> {
        StereoFrame {
            left: self.left.cast(),
            right: self.right.cast(),
            gt_disparity: self.gt_disparity.as_ref().map(Tensor4::cast),
            valid_mask: self.valid_mask.as_ref().map(Tensor4::cast),
        }
    }
}

/// Centred `target_h x target_w` window; odd margins put the extra pixel on
/// the bottom/right, i.e. the offset is floored.
pub fn central_crop<T: Scalar>(frame: &StereoFrame<T>, target_h: usize, target_w: usize) -> Result<StereoFrame<T>> {
    let (h, w) = (frame.height(), frame.width());
    if target_h == 0 || target_w == 0 || target_h > h || target_w > w {
        return Err(Error::Config(format!(
            "cannot crop {target_h}x{target_w} from {h}x{w}"
        )));
    }
    let (top, left) = crop_offset(h, w, target_h, target_w);
    let cut = |t: &Tensor4<T>| t.crop(top, left, target_h, target_w);
    Ok(StereoFrame {
        left: cut(&frame.left)?,
        right: cut(&frame.right)?,
        gt_disparity: frame.gt_disparity.as_ref().map(cut).transpose()?,
        valid_mask: frame.valid_mask.as_ref().map(cut).transpose()?,
    })
}

pub fn crop_offset(h: usize, w: usize, target_h: usize, target_w: usize) -> (usize, usize) {
    ((h - target_h) / 2, (w - target_w) / 2)
}

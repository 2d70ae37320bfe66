//! Disparity error metrics over a validity mask.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const D1_THRESHOLD: f64 = 3.0;

fn errors<'a, T: Scalar>(
    pred: &'a Tensor4<T>,
    gt: &'a Tensor4<T>,
    mask: &'a Tensor4<T>,
) -> Result<impl Iterator<Item = f64> + 'a> {
    gt.expect_shape("metric", pred.shape())?;
    mask.expect_shape("metric", pred.shape())?;
    Ok(pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask.data())
        .filter(|(_, &m)| m > T::zero())
        .map(|((&p, &g), _)| (p - g).as_f64().abs()))
}

/// Mean absolute disparity error over valid pixels; `None` for an empty mask.
pub fn epe<T: Scalar>(pred: &Tensor4<T>, gt: &Tensor4<T>, mask: &Tensor4<T>) -> Result<Option<f64>> {
    let (mut sum, mut count) = (0.0, 0usize);
    for e in errors(pred, gt, mask)? {
        sum += e;
        count += 1;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Percentage of valid pixels whose error is strictly above `threshold`.
pub fn d1_all<T: Scalar>(
    pred: &Tensor4<T>,
    gt: &Tensor4<T>,
    mask: &Tensor4<T>,
    threshold: f64,
) -> Result<Option<f64>> {
    let (mut bad, mut count) = (0usize, 0usize);
    for e in errors(pred, gt, mask)? {
        bad += usize::from(e > threshold);
        count += 1;
    }
    Ok((count > 0).then(|| 100.0 * bad as f64 / count as f64))
}

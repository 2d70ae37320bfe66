//! Horizontal backward warping with linear interpolation and clamp-to-edge.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

fn check<T: Scalar>(src: &Tensor4<T>, disparity: &Tensor4<T>) -> Result<()> {
    let s = src.shape();
    let d = disparity.shape();
    if d.c != 1 {
        return Err(Error::shape(
            "warp_horizontal",
            format!("disparity must have 1 channel, got {}", d.c),
        ));
    }
    disparity.expect_shape("warp_horizontal", s.with_channels(1))
}

/// Sample location, left tap, interpolation weight, and whether the sample
/// hit the clamp.
#[inline(always)]
fn locate<T: Scalar>(x: usize, d: T, w: usize) -> (usize, T, bool) {
    let pos = T::from_usize(x).unwrap() - d;
    let max = T::from_usize(w - 1).unwrap();
    if !(pos > T::zero()) {
        return (0, T::zero(), pos < T::zero() || pos.is_nan());
    }
    if pos >= max {
        let lo = w.saturating_sub(2);
        let frac = if w >= 2 { T::one() } else { T::zero() };
        return (lo, frac, pos > max);
    }
    let lo = pos.floor();
    (lo.to_usize().unwrap(), pos - lo, false)
}

/// `out(x) = src(x - disparity(x))`, reading rows independently.
pub fn warp_horizontal<T: Scalar>(src: &Tensor4<T>, disparity: &Tensor4<T>) -> Result<Tensor4<T>> {
    check(src, disparity)?;
    let s = src.shape();
    let mut out = Tensor4::zeros(s);
    let one = T::one();
    for n in 0..s.n {
        let dp = disparity.plane(n, 0);
        for y in 0..s.h {
            for x in 0..s.w {
                let (lo, frac, _) = locate(x, dp[y * s.w + x], s.w);
                let hi = (lo + 1).min(s.w - 1);
                for c in 0..s.c {
                    let row = &src.plane(n, c)[y * s.w..(y + 1) * s.w];
                    let v = row[lo] * (one - frac) + row[hi] * frac;
                    out.set(n, c, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients with respect to `src` and `disparity`. The disparity gradient is
/// zero wherever the sample was clamped.
pub fn warp_horizontal_backward<T: Scalar>(
    src: &Tensor4<T>,
    disparity: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    want_src: bool,
    want_disparity: bool,
) -> Result<(Option<Tensor4<T>>, Option<Tensor4<T>>)> {
    check(src, disparity)?;
    let s = src.shape();
    grad_out.expect_shape("warp_horizontal backward", s)?;
    let mut gs = want_src.then(|| Tensor4::zeros(s));
    let mut gd = want_disparity.then(|| Tensor4::zeros(disparity.shape()));
    let one = T::one();
    for n in 0..s.n {
        let dp = disparity.plane(n, 0);
        for y in 0..s.h {
            for x in 0..s.w {
                let (lo, frac, clamped) = locate(x, dp[y * s.w + x], s.w);
                let hi = (lo + 1).min(s.w - 1);
                let mut dd = T::zero();
                for c in 0..s.c {
                    let g = grad_out.at(n, c, y, x);
                    if let Some(gs) = gs.as_mut() {
                        let row = &mut gs.plane_mut(n, c)[y * s.w..(y + 1) * s.w];
                        row[lo] += g * (one - frac);
                        row[hi] += g * frac;
                    }
                    if !clamped {
                        let row = &src.plane(n, c)[y * s.w..(y + 1) * s.w];
                        dd -= g * (row[hi] - row[lo]);
                    }
                }
                if let Some(gd) = gd.as_mut() {
                    gd.plane_mut(n, 0)[y * s.w + x] = dd;
                }
            }
        }
    }
    Ok((gs, gd))
}

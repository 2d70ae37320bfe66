//! Bilinear upsampling by an integer factor, half-pixel (align-corners-false)
//! sampling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

fn taps<T: Scalar>(len: usize, factor: usize) -> Vec<Tap<T>> {
    let f = factor as f64;
    (0..len * factor)
        .map(|i| {
            let src = ((i as f64 + 0.5) / f - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            Tap {
                lo,
                hi,
                frac: T::lit(src - lo as f64),
            }
        })
        .collect()
}

fn check(x: Shape4, factor: usize) -> Result<()> {
    if factor < 2 {
        return Err(Error::shape("bilinear_upsample", "factor must be >= 2"));
    }
    if x.h == 0 || x.w == 0 {
        return Err(Error::shape("bilinear_upsample", "empty spatial extent"));
    }
    Ok(())
}

pub fn bilinear_upsample<T: Scalar>(x: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    check(s, factor)?;
    let ty = taps::<T>(s.h, factor);
    let tx = taps::<T>(s.w, factor);
    let os = Shape4::new(s.n, s.c, s.h * factor, s.w * factor);
    let mut out = Tensor4::zeros(os);
    let one = T::one();
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, a) in ty.iter().enumerate() {
                let r0 = &src[a.lo * s.w..(a.lo + 1) * s.w];
                let r1 = &src[a.hi * s.w..(a.hi + 1) * s.w];
                let row = &mut dst[oy * os.w..(oy + 1) * os.w];
                for (o, b) in row.iter_mut().zip(&tx) {
                    let top = r0[b.lo] * (one - b.frac) + r0[b.hi] * b.frac;
                    let bot = r1[b.lo] * (one - b.frac) + r1[b.hi] * b.frac;
                    *o = top * (one - a.frac) + bot * a.frac;
                }
            }
        }
    }
    Ok(out)
}

pub fn bilinear_upsample_backward<T: Scalar>(
    input_shape: Shape4,
    factor: usize,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let s = input_shape;
    check(s, factor)?;
    let os = Shape4::new(s.n, s.c, s.h * factor, s.w * factor);
    grad_out.expect_shape("bilinear_upsample backward", os)?;
    let ty = taps::<T>(s.h, factor);
    let tx = taps::<T>(s.w, factor);
    let mut grad = Tensor4::zeros(s);
    let one = T::one();
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for (oy, a) in ty.iter().enumerate() {
                let row = &g[oy * os.w..(oy + 1) * os.w];
                for (&go, b) in row.iter().zip(&tx) {
                    let top = go * (one - a.frac);
                    let bot = go * a.frac;
                    dst[a.lo * s.w + b.lo] += top * (one - b.frac);
                    dst[a.lo * s.w + b.hi] += top * b.frac;
                    dst[a.hi * s.w + b.lo] += bot * (one - b.frac);
                    dst[a.hi * s.w + b.hi] += bot * b.frac;
                }
            }
        }
    }
    Ok(grad)
}

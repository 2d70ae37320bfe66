//! 2-D convolution via im2col + GEMM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        ConvGeometry {
            stride,
            dilation,
            padding,
        }
    }

    /// Stride 1 with "same" padding for a `k x k` kernel.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeometry {
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    pub fn output_len(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::shape("conv2d", "stride and dilation must be >= 1"));
        }
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::shape(
                "conv2d",
                format!("padded extent {padded} is smaller than the kernel span {span}"),
            ));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

fn validate<T: Scalar>(
    input: Shape4,
    weight: &Tensor4<T>,
    bias: &Tensor4<T>,
    geom: ConvGeometry,
) -> Result<(Shape4, usize)> {
    let ws = weight.shape();
    if ws.h != ws.w {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be square, got {}x{}", ws.h, ws.w),
        ));
    }
    if ws.c != input.c {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input channel dimension is {} but weights expect {}",
                input.c, ws.c
            ),
        ));
    }
    if bias.shape() != Shape4::new(1, ws.n, 1, 1) {
        return Err(Error::shape(
            "conv2d",
            format!(
                "bias shape {} does not match {} output channels",
                bias.shape(),
                ws.n
            ),
        ));
    }
    let k = ws.h;
    let ho = geom.output_len(input.h, k)?;
    let wo = geom.output_len(input.w, k)?;
    Ok((Shape4::new(input.n, ws.n, ho, wo), k))
}

struct Unfold {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeometry,
}

impl Unfold {
    /// Range of output positions `o` for which `o * stride + off - pad` lands in `[0, len)`.
    fn valid_range(&self, off: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.geom.stride as isize;
        let shift = off as isize - self.geom.padding as isize;
        // smallest o with o*s + shift >= 0
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        // largest o with o*s + shift <= len-1
        let hi_num = len as isize - 1 - shift;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.min(out_len as isize) as usize;
        let hi = (hi + 1).clamp(lo as isize, out_len as isize) as usize;
        (lo, hi)
    }

    fn im2col<T: Scalar>(&self, src: &[T], cols: &mut [T]) {
        let p = self.ho * self.wo;
        let (s, d, pad) = (self.geom.stride, self.geom.dilation, self.geom.padding);
        for ci in 0..self.c {
            let plane = &src[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                let (ylo, yhi) = self.valid_range(ky * d, self.h, self.ho);
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let (xlo, xhi) = self.valid_range(kx * d, self.w, self.wo);
                    for oy in 0..self.ho {
                        let out = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if oy < ylo || oy >= yhi || xlo >= xhi {
                            out.fill(T::zero());
                            continue;
                        }
                        let iy = oy * s + ky * d - pad;
                        let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                        out[..xlo].fill(T::zero());
                        out[xhi..].fill(T::zero());
                        let ix0 = xlo * s + kx * d - pad;
                        if s == 1 {
                            out[xlo..xhi].copy_from_slice(&src_row[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for (j, o) in out[xlo..xhi].iter_mut().enumerate() {
                                *o = src_row[ix0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dst: &mut [T]) {
        let p = self.ho * self.wo;
        let (s, d, pad) = (self.geom.stride, self.geom.dilation, self.geom.padding);
        for ci in 0..self.c {
            let plane = &mut dst[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                let (ylo, yhi) = self.valid_range(ky * d, self.h, self.ho);
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    let (xlo, xhi) = self.valid_range(kx * d, self.w, self.wo);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = oy * s + ky * d - pad;
                        let dst_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let ix0 = xlo * s + kx * d - pad;
                        let seg = &src[oy * self.wo + xlo..oy * self.wo + xhi];
                        for (j, &g) in seg.iter().enumerate() {
                            dst_row[ix0 + j * s] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `weight` is `(c_out, c_in, k, k)`, `bias` is `(1, c_out, 1, 1)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &Tensor4<T>,
    geom: ConvGeometry,
) -> Result<Tensor4<T>> {
    let is = input.shape();
    let (os, k) = validate(is, weight, bias, geom)?;
    let unfold = Unfold {
        c: is.c,
        h: is.h,
        w: is.w,
        k,
        ho: os.h,
        wo: os.w,
        geom,
    };
    let kk = is.c * k * k;
    let p = os.h * os.w;
    let mut out = Tensor4::zeros(os);
    let mut cols = vec![T::zero(); kk * p];
    for n in 0..is.n {
        unfold.im2col(input.item(n), &mut cols);
        let dst = out.item_mut(n);
        for (co, chunk) in dst.chunks_mut(p).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        T::gemm(
            os.c,
            kk,
            p,
            T::one(),
            weight.data(),
            (kk as isize, 1),
            &cols,
            (p as isize, 1),
            T::one(),
            dst,
            (p as isize, 1),
        );
    }
    Ok(out)
}

/// Backward convolution. Weight and bias gradients are accumulated into
/// `grad_weight` / `grad_bias`; the input gradient is returned when requested.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    geom: ConvGeometry,
    grad_out: &Tensor4<T>,
    grad_weight: &mut Tensor4<T>,
    grad_bias: &mut Tensor4<T>,
    want_input_grad: bool,
) -> Result<Option<Tensor4<T>>> {
    let is = input.shape();
    let (os, k) = validate(is, weight, grad_bias, geom)?;
    grad_out.expect_shape("conv2d backward", os)?;
    grad_weight.expect_shape("conv2d backward", weight.shape())?;
    let unfold = Unfold {
        c: is.c,
        h: is.h,
        w: is.w,
        k,
        ho: os.h,
        wo: os.w,
        geom,
    };
    let kk = is.c * k * k;
    let p = os.h * os.w;
    let mut cols = vec![T::zero(); kk * p];
    let mut grad_in = want_input_grad.then(|| Tensor4::zeros(is));
    for n in 0..is.n {
        let g = grad_out.item(n);
        for (co, chunk) in g.chunks(p).enumerate() {
            grad_bias.data_mut()[co] += chunk.iter().copied().sum::<T>();
        }
        unfold.im2col(input.item(n), &mut cols);
        T::gemm(
            os.c,
            p,
            kk,
            T::one(),
            g,
            (p as isize, 1),
            &cols,
            (1, p as isize),
            T::one(),
            grad_weight.data_mut(),
            (kk as isize, 1),
        );
        if let Some(gi) = grad_in.as_mut() {
            T::gemm(
                kk,
                os.c,
                p,
                T::one(),
                weight.data(),
                (1, kk as isize),
                g,
                (p as isize, 1),
                T::zero(),
                &mut cols,
                (p as isize, 1),
            );
            unfold.col2im(&cols, gi.item_mut(n));
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution used as an oracle.
    fn naive(input: &Tensor4<f64>, w: &Tensor4<f64>, b: &Tensor4<f64>, g: ConvGeometry) -> Tensor4<f64> {
        let is = input.shape();
        let ws = w.shape();
        let k = ws.h;
        let ho = g.output_len(is.h, k).unwrap();
        let wo = g.output_len(is.w, k).unwrap();
        Tensor4::from_fn(Shape4::new(is.n, ws.n, ho, wo), |n, co, oy, ox| {
            let mut acc = b.data()[co];
            for ci in 0..is.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < is.h && (ix as usize) < is.w {
                            acc += w.at(co, ci, ky, kx) * input.at(n, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    fn pseudo(shape: Shape4, seed: u64) -> Tensor4<f64> {
        let mut s = seed;
        Tensor4::from_fn(shape, |_, _, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn identity_scale_kernel() {
        let x = Tensor4::<f32>::full(Shape4::new(1, 1, 3, 3), 1.0);
        let w = Tensor4::full(Shape4::new(1, 1, 1, 1), 2.0);
        let b = Tensor4::zeros(Shape4::new(1, 1, 1, 1));
        let y = conv2d(&x, &w, &b, ConvGeometry::new(1, 1, 0)).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 3, 3));
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn zero_weights_give_bias() {
        let x = pseudo(Shape4::new(2, 3, 5, 7), 3);
        let w = Tensor4::zeros(Shape4::new(4, 3, 3, 3));
        let b = Tensor4::full(Shape4::new(1, 4, 1, 1), 0.7);
        let y = conv2d(&x, &w, &b, ConvGeometry::new(2, 1, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn matches_naive_for_assorted_geometries() {
        for (stride, dil, pad, h, w) in [(1, 1, 1, 5, 6), (2, 1, 1, 6, 6), (2, 1, 1, 5, 7), (1, 2, 2, 7, 5), (1, 4, 4, 6, 9), (3, 1, 0, 8, 8)] {
            let g = ConvGeometry::new(stride, dil, pad);
            let x = pseudo(Shape4::new(2, 3, h, w), 11);
            let wt = pseudo(Shape4::new(4, 3, 3, 3), 12);
            let b = pseudo(Shape4::new(1, 4, 1, 1), 13);
            let fast = conv2d(&x, &wt, &b, g).unwrap();
            let slow = naive(&x, &wt, &b, g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "{g:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn stride_two_halves_even_dims() {
        let g = ConvGeometry::new(2, 1, 1);
        assert_eq!(g.output_len(64, 3).unwrap(), 32);
        assert_eq!(g.output_len(2, 3).unwrap(), 1);
    }

    #[test]
    fn channel_mismatch_is_named() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 2, 4, 4));
        let w = Tensor4::zeros(Shape4::new(1, 3, 3, 3));
        let b = Tensor4::zeros(Shape4::new(1, 1, 1, 1));
        let err = conv2d(&x, &w, &b, ConvGeometry::same(3, 1)).unwrap_err();
        assert!(err.to_string().contains("channel"), "{err}");
    }
}

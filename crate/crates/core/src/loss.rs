//! Photometric reprojection loss: SSIM and L1 between the left image and the
//! right image warped by a disparity map.

use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WEIGHT: f64 = 0.85;
pub const L1_WEIGHT: f64 = 0.15;
pub const SSIM_WINDOW: usize = 3;

#[derive(Clone, Debug)]
pub struct LossValue<T> {
    pub scalar: T,
    /// One-channel map; `scalar` is its mean.
    pub per_pixel: Tensor4<T>,
}

impl<T: Scalar> LossValue<T> {
    /// Mean of the per-pixel map over pixels where `mask` is non-zero.
    pub fn masked_mean(&self, mask: &Tensor4<T>) -> Option<T> {
        let mut sum = T::zero();
        let mut count = 0usize;
        for (&v, &m) in self.per_pixel.data().iter().zip(mask.data()) {
            if m > T::zero() {
                sum += v;
                count += 1;
            }
        }
        (count > 0).then(|| sum / T::from_usize(count).unwrap())
    }
}

/// Window sums with the window truncated at the borders.
fn box_sum(src: &[f64], h: usize, w: usize, r: usize, out: &mut [f64], tmp: &mut [f64]) {
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let dst = &mut tmp[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            dst[x] = row[lo..=hi].iter().sum();
        }
    }
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        let dst = &mut out[y * w..(y + 1) * w];
        dst.fill(0.0);
        for yy in lo..=hi {
            for (d, &s) in dst.iter_mut().zip(&tmp[yy * w..(yy + 1) * w]) {
                *d += s;
            }
        }
    }
}

fn window_counts(h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut c = vec![0.0; h * w];
    for y in 0..h {
        let ny = (y + r).min(h - 1) - y.saturating_sub(r) + 1;
        for x in 0..w {
            let nx = (x + r).min(w - 1) - x.saturating_sub(r) + 1;
            c[y * w + x] = (ny * nx) as f64;
        }
    }
    c
}

/// Local statistics of one plane pair, in `f64`.
struct PlaneStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    sigma_a: Vec<f64>,
    sigma_b: Vec<f64>,
    sigma_ab: Vec<f64>,
    counts: Vec<f64>,
}

struct SsimPlanes {
    h: usize,
    w: usize,
    r: usize,
    tmp: Vec<f64>,
    buf: Vec<f64>,
}

impl SsimPlanes {
    fn new(h: usize, w: usize, window: usize) -> Self {
        SsimPlanes {
            h,
            w,
            r: window / 2,
            tmp: vec![0.0; h * w],
            buf: vec![0.0; h * w],
        }
    }

    fn mean(&mut self, src: &[f64], counts: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.h * self.w];
        box_sum(src, self.h, self.w, self.r, &mut out, &mut self.tmp);
        out.iter_mut().zip(counts).for_each(|(o, c)| *o /= c);
        out
    }

    fn stats(&mut self, a: &[f64], b: &[f64]) -> PlaneStats {
        let counts = window_counts(self.h, self.w, self.r);
        let mu_a = self.mean(a, &counts);
        let mu_b = self.mean(b, &counts);
        let sq: Vec<f64> = a.iter().map(|v| v * v).collect();
        let e_aa = self.mean(&sq, &counts);
        let sq: Vec<f64> = b.iter().map(|v| v * v).collect();
        let e_bb = self.mean(&sq, &counts);
        let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        let e_ab = self.mean(&sq, &counts);
        let n = a.len();
        let mut sigma_a = vec![0.0; n];
        let mut sigma_b = vec![0.0; n];
        let mut sigma_ab = vec![0.0; n];
        for i in 0..n {
            sigma_a[i] = e_aa[i] - mu_a[i] * mu_a[i];
            sigma_b[i] = e_bb[i] - mu_b[i] * mu_b[i];
            sigma_ab[i] = e_ab[i] - mu_a[i] * mu_b[i];
        }
        PlaneStats {
            mu_a,
            mu_b,
            sigma_a,
            sigma_b,
            sigma_ab,
            counts,
        }
    }

    /// Adjoint of the truncated box mean.
    fn mean_adjoint(&mut self, g: &[f64], counts: &[f64]) -> Vec<f64> {
        for ((b, &gv), &c) in self.buf.iter_mut().zip(g).zip(counts) {
            *b = gv / c;
        }
        let mut out = vec![0.0; self.h * self.w];
        let buf = std::mem::take(&mut self.buf);
        box_sum(&buf, self.h, self.w, self.r, &mut out, &mut self.tmp);
        self.buf = buf;
        out
    }
}

fn ssim_terms(s: &PlaneStats, i: usize) -> (f64, f64, f64, f64) {
    let n1 = 2.0 * s.mu_a[i] * s.mu_b[i] + SSIM_C1;
    let n2 = 2.0 * s.sigma_ab[i] + SSIM_C2;
    let d1 = s.mu_a[i] * s.mu_a[i] + s.mu_b[i] * s.mu_b[i] + SSIM_C1;
    let d2 = s.sigma_a[i] + s.sigma_b[i] + SSIM_C2;
    (n1, n2, d1, d2)
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Config(format!("SSIM window {window} must be odd")));
    }
    Ok(())
}

fn to_f64<T: Scalar>(p: &[T]) -> Vec<f64> {
    p.iter().map(|v| v.as_f64()).collect()
}

/// Per-pixel, per-channel SSIM with `window x window` box statistics.
pub fn ssim_map<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, window: usize) -> Result<Tensor4<T>> {
    check_window(window)?;
    b.expect_shape("ssim_map", a.shape())?;
    let s = a.shape();
    let mut planes = SsimPlanes::new(s.h, s.w, window);
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let st = planes.stats(&to_f64(a.plane(n, c)), &to_f64(b.plane(n, c)));
            for (i, o) in out.plane_mut(n, c).iter_mut().enumerate() {
                let (n1, n2, d1, d2) = ssim_terms(&st, i);
                *o = T::lit(n1 * n2 / (d1 * d2));
            }
        }
    }
    Ok(out)
}

/// Loss map and, optionally, gradient of the mean loss w.r.t. `warped`.
fn photometric<T: Scalar>(
    left: &Tensor4<T>,
    warped: &Tensor4<T>,
    want_grad: bool,
) -> Result<(LossValue<T>, Option<Tensor4<T>>)> {
    let s = left.shape();
    let mut per_pixel = vec![0.0f64; s.n * s.plane()];
    let mut grad = want_grad.then(|| Tensor4::zeros(s));
    let inv_c = 1.0 / s.c as f64;
    let pixels = (s.n * s.plane()) as f64;
    // d mean / d per_pixel
    let g_pp = 1.0 / pixels;
    let mut planes = SsimPlanes::new(s.h, s.w, SSIM_WINDOW);
    for n in 0..s.n {
        let pp = &mut per_pixel[n * s.plane()..(n + 1) * s.plane()];
        for c in 0..s.c {
            let a = to_f64(left.plane(n, c));
            let b = to_f64(warped.plane(n, c));
            let st = planes.stats(&a, &b);
            let plane_len = a.len();
            let mut g_mu = vec![0.0; plane_len];
            let mut g_ebb = vec![0.0; plane_len];
            let mut g_eab = vec![0.0; plane_len];
            let mut g_direct = vec![0.0; plane_len];
            for i in 0..plane_len {
                let (n1, n2, d1, d2) = ssim_terms(&st, i);
                let ssim = n1 * n2 / (d1 * d2);
                let diff = b[i] - a[i];
                pp[i] += inv_c * (SSIM_WEIGHT * (1.0 - ssim) * 0.5 + L1_WEIGHT * diff.abs());
                if want_grad {
                    let g_ssim = -g_pp * inv_c * SSIM_WEIGHT * 0.5;
                    let (ma, mb) = (st.mu_a[i], st.mu_b[i]);
                    let dd = d1 * d2;
                    let d_mu_b = (2.0 * ma * n2 - 2.0 * ma * n1) / dd
                        - ssim * (2.0 * mb / d1 - 2.0 * mb / d2);
                    let d_ebb = -ssim / d2;
                    let d_eab = 2.0 * n1 / dd;
                    g_mu[i] = g_ssim * d_mu_b;
                    g_ebb[i] = g_ssim * d_ebb;
                    g_eab[i] = g_ssim * d_eab;
                    g_direct[i] = g_pp * inv_c * L1_WEIGHT * sign(diff);
                }
            }
            if let Some(g) = grad.as_mut() {
                let counts = st.counts;
                let a_mu = planes.mean_adjoint(&g_mu, &counts);
                let a_bb = planes.mean_adjoint(&g_ebb, &counts);
                let a_ab = planes.mean_adjoint(&g_eab, &counts);
                for (i, o) in g.plane_mut(n, c).iter_mut().enumerate() {
                    *o = T::lit(a_mu[i] + 2.0 * b[i] * a_bb[i] + a[i] * a_ab[i] + g_direct[i]);
                }
            }
        }
    }
    let scalar = T::lit(per_pixel.iter().sum::<f64>() / pixels);
    let per_pixel = Tensor4::from_vec(
        Shape4::new(s.n, 1, s.h, s.w),
        per_pixel.into_iter().map(T::lit).collect(),
    )?;
    Ok((LossValue { scalar, per_pixel }, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_images<T: Scalar>(left: &Tensor4<T>, right: &Tensor4<T>, disparity: &Tensor4<T>) -> Result<()> {
    right.expect_shape("reprojection_loss", left.shape())?;
    disparity.expect_shape("reprojection_loss", left.shape().with_channels(1))
}

/// `0.85 * (1 - SSIM) / 2 + 0.15 * |left - warp(right)|`, channel-averaged.
pub fn reprojection_loss<T: Scalar>(
    left: &Tensor4<T>,
    right: &Tensor4<T>,
    disparity: &Tensor4<T>,
) -> Result<LossValue<T>> {
    check_images(left, right, disparity)?;
    let warped = ops::warp_horizontal(right, disparity)?;
    Ok(photometric(left, &warped, false)?.0)
}

/// Loss plus the gradient of its scalar w.r.t. `disparity`.
pub fn reprojection_loss_with_grad<T: Scalar>(
    left: &Tensor4<T>,
    right: &Tensor4<T>,
    disparity: &Tensor4<T>,
) -> Result<(LossValue<T>, Tensor4<T>)> {
    check_images(left, right, disparity)?;
    let warped = ops::warp_horizontal(right, disparity)?;
    let (loss, g_warped) = photometric(left, &warped, true)?;
    let (_, gd) = ops::warp_horizontal_backward(right, disparity, &g_warped.expect("requested"), false, true)?;
    Ok((loss, gd.expect("requested")))
}

/// Brings a level-`level` disparity to full resolution and pixel units.
pub fn upscale_disparity<T: Scalar>(y: &Tensor4<T>, level: usize) -> Result<Tensor4<T>> {
    if level == 0 {
        return Ok(y.clone());
    }
    let f = 1usize << level;
    let mut up = ops::bilinear_upsample(y, f)?;
    up.scale_inplace(T::from_usize(f).unwrap());
    Ok(up)
}

/// Adjoint of [`upscale_disparity`].
pub fn upscale_backward<T: Scalar>(shape: Shape4, level: usize, g: Tensor4<T>) -> Result<Tensor4<T>> {
    if level == 0 {
        return Ok(g);
    }
    let f = 1usize << level;
    let mut back = ops::bilinear_upsample_backward(shape, f, &g)?;
    back.scale_inplace(T::from_usize(f).unwrap());
    Ok(back)
}

/// Reprojection loss of a coarse prediction, upsampled to the image size.
pub fn module_loss<T: Scalar>(
    left: &Tensor4<T>,
    right: &Tensor4<T>,
    y_theta: &Tensor4<T>,
    level: usize,
) -> Result<LossValue<T>> {
    reprojection_loss(left, right, &upscale_disparity(y_theta, level)?)
}

pub fn module_loss_with_grad<T: Scalar>(
    left: &Tensor4<T>,
    right: &Tensor4<T>,
    y_theta: &Tensor4<T>,
    level: usize,
) -> Result<(LossValue<T>, Tensor4<T>)> {
    let (loss, g) = reprojection_loss_with_grad(left, right, &upscale_disparity(y_theta, level)?)?;
    Ok((loss, upscale_backward(y_theta.shape(), level, g)?))
}

/// Weighted L1 against ground truth over valid pixels, and its gradient.
pub fn supervised_l1<T: Scalar>(
    pred: &Tensor4<T>,
    gt: &Tensor4<T>,
    mask: &Tensor4<T>,
) -> Result<(T, Tensor4<T>)> {
    gt.expect_shape("supervised_l1", pred.shape())?;
    mask.expect_shape("supervised_l1", pred.shape())?;
    let valid = mask.data().iter().filter(|&&m| m > T::zero()).count();
    if valid == 0 {
        return Ok((T::zero(), Tensor4::zeros(pred.shape())));
    }
    let inv = T::one() / T::from_usize(valid).unwrap();
    let mut loss = T::zero();
    let mut grad = Tensor4::zeros(pred.shape());
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        if mask.data()[i] > T::zero() {
            let d = pred.data()[i] - gt.data()[i];
            loss += d.abs() * inv;
            *g = T::lit(sign(d.as_f64())) * inv;
        }
    }
    Ok((loss, grad))
}

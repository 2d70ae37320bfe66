//! Horizontal 1-D correlation between left and right feature maps.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

fn check<T: Scalar>(left: &Tensor4<T>, right: &Tensor4<T>, radius: usize) -> Result<Shape4> {
    right.expect_shape("correlation1d", left.shape())?;
    if radius == 0 {
        return Err(Error::shape("correlation1d", "radius must be >= 1"));
    }
    let s = left.shape();
    Ok(s.with_channels(2 * radius + 1))
}

/// Output channel `d` holds `mean_c left(c, y, x) * right(c, y, x + d - radius)`,
/// zero where the shifted column leaves the image.
pub fn correlation1d<T: Scalar>(
    left: &Tensor4<T>,
    right: &Tensor4<T>,
    radius: usize,
) -> Result<Tensor4<T>> {
    let os = check(left, right, radius)?;
    let s = left.shape();
    let inv_c = T::one() / T::from_usize(s.c.max(1)).unwrap();
    let mut out = Tensor4::zeros(os);
    for n in 0..s.n {
        for d in 0..os.c {
            let shift = d as isize - radius as isize;
            let (x0, x1) = shifted_range(s.w, shift);
            for c in 0..s.c {
                let lp = left.plane(n, c);
                let rp = right.plane(n, c);
                let op = out.plane_mut(n, d);
                for y in 0..s.h {
                    let row = y * s.w;
                    for x in x0..x1 {
                        let xr = (x as isize + shift) as usize;
                        op[row + x] += lp[row + x] * rp[row + xr];
                    }
                }
            }
            out.plane_mut(n, d).iter_mut().for_each(|v| *v *= inv_c);
        }
    }
    Ok(out)
}

/// Columns `x` for which `x + shift` stays inside `[0, w)`.
fn shifted_range(w: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (w as isize - shift.max(0)).max(0) as usize;
    (lo.min(hi), hi)
}

pub fn correlation1d_backward<T: Scalar>(
    left: &Tensor4<T>,
    right: &Tensor4<T>,
    radius: usize,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let os = check(left, right, radius)?;
    grad_out.expect_shape("correlation1d backward", os)?;
    let s = left.shape();
    let inv_c = T::one() / T::from_usize(s.c.max(1)).unwrap();
    let mut gl = Tensor4::zeros(s);
    let mut gr = Tensor4::zeros(s);
    for n in 0..s.n {
        for d in 0..os.c {
            let shift = d as isize - radius as isize;
            let (x0, x1) = shifted_range(s.w, shift);
            let gp = grad_out.plane(n, d);
            for c in 0..s.c {
                let lp = left.plane(n, c);
                let rp = right.plane(n, c);
                for y in 0..s.h {
                    let row = y * s.w;
                    for x in x0..x1 {
                        let xr = (x as isize + shift) as usize;
                        let g = gp[row + x] * inv_c;
                        gl.data_mut()[left.index(n, c, y, x)] += g * rp[row + xr];
                        gr.data_mut()[right.index(n, c, y, xr)] += g * lp[row + x];
                    }
                }
            }
        }
    }
    Ok((gl, gr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_table_radius_one() {
        let l = Tensor4::<f64>::from_vec(Shape4::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = Tensor4::<f64>::from_vec(Shape4::new(1, 1, 1, 4), vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let out = correlation1d(&l, &r, 1).unwrap();
        // shift -1: l[x]*r[x-1]; shift 0: l[x]*r[x]; shift +1: l[x]*r[x+1]
        let want = [
            [0.0, 2.0 * 5.0, 3.0 * 6.0, 4.0 * 7.0],
            [5.0, 12.0, 21.0, 32.0],
            [1.0 * 6.0, 2.0 * 7.0, 3.0 * 8.0, 0.0],
        ];
        for (d, row) in want.iter().enumerate() {
            assert_eq!(out.plane(0, d), row);
        }
    }

    #[test]
    fn zero_left_gives_zero() {
        let l = Tensor4::<f32>::zeros(Shape4::new(1, 3, 2, 5));
        let r = Tensor4::<f32>::full(Shape4::new(1, 3, 2, 5), 0.5);
        let out = correlation1d(&l, &r, 2).unwrap();
        assert_eq!(out.shape().c, 5);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let l = Tensor4::<f32>::zeros(Shape4::new(1, 3, 2, 5));
        let r = Tensor4::<f32>::zeros(Shape4::new(1, 2, 2, 5));
        assert!(correlation1d(&l, &r, 2).is_err());
    }
}

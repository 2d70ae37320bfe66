//! Dense `(batch, channel, height, width)` arrays.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn with_channels(self, c: usize) -> Self {
        Shape4 { c, ..self }
    }

    pub const fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Row-major 4-D tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape4, value: T) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} values cannot fill shape {shape}", data.len()),
            ));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline(always)]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// One `h x w` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of one batch item.
    pub fn item(&self, n: usize) -> &[T] {
        let s = self.shape.item();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.shape.item();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|d| *d = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape("zip_map", other.shape)?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape("add_assign", other.shape)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn scale_inplace(&mut self, s: T) {
        self.map_inplace(|v| v * s);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.len().max(1)).unwrap()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_shape("dot", other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.as_f64()).unwrap())
                .collect(),
        }
    }

    pub fn expect_shape(&self, op: &'static str, want: Shape4) -> Result<()> {
        if self.shape == want {
            return Ok(());
        }
        let s = self.shape;
        let dim = if s.n != want.n {
            "batch"
        } else if s.c != want.c {
            "channel"
        } else if s.h != want.h {
            "height"
        } else {
            "width"
        };
        Err(Error::shape(
            op,
            format!("{dim} differs: got {s}, expected {want}"),
        ))
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?
            .shape;
        let mut c_total = 0;
        for p in parts {
            let s = p.shape;
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::shape(
                    "concat",
                    format!("spatial/batch dims differ: {s} vs {first}"),
                ));
            }
            c_total += s.c;
        }
        let shape = first.with_channels(c_total);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..first.n {
            for p in parts {
                data.extend_from_slice(p.item(n));
            }
        }
        Ok(Tensor4 { shape, data })
    }

    /// Inverse of [`Tensor4::concat_channels`]: splits into tensors with the
    /// given channel counts.
    pub fn split_channels(&self, counts: &[usize]) -> Result<Vec<Self>> {
        if counts.iter().sum::<usize>() != self.shape.c {
            return Err(Error::shape(
                "split",
                format!("channel counts {counts:?} do not sum to {}", self.shape.c),
            ));
        }
        let plane = self.shape.plane();
        let mut out: Vec<Self> = counts
            .iter()
            .map(|&c| Tensor4 {
                shape: self.shape.with_channels(c),
                data: Vec::with_capacity(self.shape.n * c * plane),
            })
            .collect();
        for n in 0..self.shape.n {
            let item = self.item(n);
            let mut offset = 0;
            for (t, &c) in out.iter_mut().zip(counts) {
                t.data.extend_from_slice(&item[offset..offset + c * plane]);
                offset += c * plane;
            }
        }
        Ok(out)
    }

    /// Stacks along the batch axis.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_batch", "no inputs"))?
            .shape;
        let mut n_total = 0;
        for p in parts {
            if (p.shape.c, p.shape.h, p.shape.w) != (first.c, first.h, first.w) {
                return Err(Error::shape(
                    "concat_batch",
                    format!("item shapes differ: {} vs {first}", p.shape),
                ));
            }
            n_total += p.shape.n;
        }
        let mut data = Vec::with_capacity(n_total * first.item());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 {
            shape: Shape4 { n: n_total, ..first },
            data,
        })
    }

    /// Batch items `[start, start + count)`.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.n {
            return Err(Error::shape(
                "slice_batch",
                format!("batch range {start}+{count} exceeds {}", self.shape.n),
            ));
        }
        let s = self.shape.item();
        Ok(Tensor4 {
            shape: Shape4 {
                n: count,
                ..self.shape
            },
            data: self.data[start * s..(start + count) * s].to_vec(),
        })
    }

    /// Copies a spatial window `[top, top+h) x [left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.shape.h || left + w > self.shape.w {
            return Err(Error::shape(
                "crop",
                format!(
                    "window {h}x{w} at ({top}, {left}) exceeds {}x{}",
                    self.shape.h, self.shape.w
                ),
            ));
        }
        let shape = Shape4 { h, w, ..self.shape };
        Ok(Self::from_fn(shape, |n, c, y, x| {
            self.at(n, c, y + top, x + left)
        }))
    }

    /// Mirrors the width axis.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.shape.w;
        Self::from_fn(self.shape, |n, c, y, x| self.at(n, c, y, w - 1 - x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor4::<f32>::from_vec(Shape4::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(err.to_string().contains("cannot fill"));
    }

    #[test]
    fn channel_concat_and_split_are_inverse() {
        let a = Tensor4::<f32>::from_fn(Shape4::new(2, 2, 2, 3), |n, c, y, x| {
            (n * 100 + c * 10 + y * 3 + x) as f32
        });
        let b = Tensor4::<f32>::full(Shape4::new(2, 1, 2, 3), -1.0);
        let cat = Tensor4::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), Shape4::new(2, 3, 2, 3));
        assert_eq!(cat.at(1, 0, 1, 2), a.at(1, 0, 1, 2));
        assert_eq!(cat.at(1, 2, 0, 0), -1.0);
        let parts = cat.split_channels(&[2, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn shape_error_names_dimension() {
        let a = Tensor4::<f32>::zeros(Shape4::new(1, 2, 4, 4));
        let err = a.expect_shape("t", Shape4::new(1, 2, 4, 5)).unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
    }

    #[test]
    fn crop_copies_window() {
        let a = Tensor4::<f64>::from_fn(Shape4::new(1, 1, 4, 5), |_, _, y, x| (y * 5 + x) as f64);
        let c = a.crop(1, 2, 2, 3).unwrap();
        assert_eq!(c.data(), &[7.0, 8.0, 9.0, 12.0, 13.0, 14.0]);
        assert!(a.crop(3, 0, 2, 1).is_err());
    }
}

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<T: Scalar>(x: &Tensor4<T>, slope: T) -> Tensor4<T> {
    x.map(|v| if v >= T::zero() { v } else { v * slope })
}

pub fn leaky_relu_inplace<T: Scalar>(x: &mut Tensor4<T>, slope: T) {
    x.map_inplace(|v| if v >= T::zero() { v } else { v * slope });
}

/// `x` may be either the input or the output of the forward pass: both carry
/// the same sign for a positive slope.
pub fn leaky_relu_backward<T: Scalar>(
    x: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    slope: T,
) -> Result<Tensor4<T>> {
    x.zip_map(grad_out, |v, g| if v >= T::zero() { g } else { g * slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn definition() {
        let x = Tensor4::<f32>::from_vec(Shape4::new(1, 1, 1, 2), vec![-1.0, 2.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.2).data(), &[-0.2, 2.0]);
        let z = Tensor4::<f32>::zeros(Shape4::new(1, 2, 3, 3));
        assert!(leaky_relu(&z, 0.2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_scales_by_slope() {
        let x = Tensor4::<f64>::from_vec(Shape4::new(1, 1, 1, 3), vec![-3.0, 0.5, 0.0]).unwrap();
        let g = Tensor4::full(x.shape(), 2.0);
        assert_eq!(leaky_relu_backward(&x, &g, 0.1).unwrap().data(), &[0.2, 2.0, 2.0]);
    }
}

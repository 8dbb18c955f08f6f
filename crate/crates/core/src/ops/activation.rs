use crate::real::Real;
use crate::tensor::Tensor4;

pub fn relu<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Gradient of [`relu`] given its *output* (positive exactly where the input was).
pub fn relu_backward<T: Real>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    assert_eq!(output.shape(), grad_out.shape(), "relu_backward: shape mismatch");
    let mut g = grad_out.clone();
    for (d, &y) in g.data_mut().iter_mut().zip(output.data()) {
        if y <= T::ZERO {
            *d = T::ZERO;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn clamps_negatives_and_masks_gradient() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 4), vec![-1.0f32, 0.0, 0.5, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 2.0]);
        let g = relu_backward(&y, &Tensor4::filled(x.shape(), 3.0));
        assert_eq!(g.data(), &[0.0, 0.0, 3.0, 3.0]);
    }
}

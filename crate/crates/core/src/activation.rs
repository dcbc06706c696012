//! Elementwise activations and their exact derivatives.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    /// 0.5 * (tanh(x) + 1): maps reals into [0, 1], used as the generator's
    /// output so refined images are valid intensities.
    ScaledTanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::ScaledTanh => 0.5 * (x.tanh() + 1.0),
        }
    }

    /// Derivative at the pre-activation value `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Activation::ScaledTanh => {
                let t = x.tanh();
                0.5 * (1.0 - t * t)
            }
        }
    }
}

pub fn activation_forward(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kind.apply(v))
}

/// Chain rule through the activation: grad_in = f'(x) * grad_out.
pub fn activation_backward(x: &Tensor, kind: Activation, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(x.shape(), grad_out.shape());
    let mut out = Tensor::zeros(x.shape());
    for ((o, &xi), &gi) in out
        .data_mut()
        .iter_mut()
        .zip(x.data())
        .zip(grad_out.data())
    {
        *o = kind.derivative(xi) * gi;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_basic_values() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = activation_forward(&x, Activation::Relu);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn scaled_tanh_is_half_at_zero() {
        assert_eq!(Activation::ScaledTanh.apply(0.0), 0.5);
    }

    #[test]
    fn scaled_tanh_range_is_unit_interval() {
        for x in [-50.0, -3.0, -0.1, 0.0, 0.1, 3.0, 50.0] {
            let y = Activation::ScaledTanh.apply(x);
            assert!((0.0..=1.0).contains(&y));
        }
    }

    #[test]
    fn relu_backward_gates_gradient() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![-2.0, 3.0]).unwrap();
        let g = Tensor::from_vec([1, 1, 1, 2], vec![5.0, 7.0]).unwrap();
        let gi = activation_backward(&x, Activation::Relu, &g);
        assert_eq!(gi.data(), &[0.0, 7.0]);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let kinds = [
            Activation::Relu,
            Activation::LeakyRelu { slope: 0.2 },
            Activation::Sigmoid,
            Activation::ScaledTanh,
        ];
        let points = [-1.73, -0.4, 0.31, 1.9];
        let h = 1e-6;
        for kind in kinds {
            for x in points {
                let num = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                let ana = kind.derivative(x);
                assert!(
                    (num - ana).abs() < 1e-6,
                    "{kind:?} at {x}: numeric {num} vs analytic {ana}"
                );
            }
        }
    }
}

//! Elementwise kernels: add, hadamard product, constant scale, bias add,
//! and the activation pair (relu / gelu) with their gradient rules.

use crate::error::{Result, TensorError};
use crate::tensor::{Element, Tensor};

fn check_same_shape<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            context: "operands must have equal shape",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mul", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

/// Multiplies every element by a compile-time-constant scalar `c`.
pub fn scale<T: Element>(x: &Tensor<T>, c: f64) -> Tensor<T> {
    let c = T::from_f64(c);
    x.map(|v| v * c)
}

/// Adds `bias` (shape `[d]`) to every length-`d` lane along the last axis.
pub fn add_bias<T: Element>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let d = *x.shape().last().expect("rank >= 1");
    if bias.shape() != [d] {
        return Err(TensorError::ShapeMismatch {
            op: "add_bias",
            context: "bias must match the last axis",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let b = bias.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b[i % d])
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Gradients of `add_bias`: pass-through for `x`, lane sum for the bias.
pub fn add_bias_backward<T: Element>(grad: &Tensor<T>, d: usize) -> (Tensor<T>, Tensor<T>) {
    let mut gb = vec![T::ZERO; d];
    for (i, &g) in grad.data().iter().enumerate() {
        gb[i % d] += g;
    }
    (grad.clone(), Tensor::from_vec(&[d], gb).expect("bias shape"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<T: Element>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::ZERO {
                    x
                } else {
                    T::ZERO
                }
            }
            // gelu(x) = 0.5 * x * (1 + erf(x / sqrt(2)))
            Activation::Gelu => {
                let half = T::from_f64(0.5);
                let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
                half * x * (T::ONE + (x * inv_sqrt2).erf())
            }
        }
    }

    pub fn derivative<T: Element>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            // gelu'(x) = Phi(x) + x * phi(x)
            Activation::Gelu => {
                let half = T::from_f64(0.5);
                let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
                let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                let cdf = half * (T::ONE + (x * inv_sqrt2).erf());
                let pdf = inv_sqrt_2pi * (-(x * x) * half).exp();
                cdf + x * pdf
            }
        }
    }
}

pub fn activation<T: Element>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

pub fn activation_backward<T: Element>(
    x: &Tensor<T>,
    grad: &Tensor<T>,
    kind: Activation,
) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| g * kind.derivative(v))
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_gelu_fixed_points() {
        assert_eq!(Activation::Relu.apply(-1.0f64), 0.0);
        assert_eq!(Activation::Relu.apply(2.0f64), 2.0);
        assert_eq!(Activation::Gelu.apply(0.0f64), 0.0);
    }

    #[test]
    fn gelu_matches_erf_formula() {
        for i in -20..=20 {
            let x = i as f64 * 0.37;
            let expected = 0.5 * x * (1.0 + libm::erf(x / 2.0f64.sqrt()));
            let got = Activation::Gelu.apply(x);
            assert!((got - expected).abs() < 1e-6, "x={x}, got={got}, want={expected}");
        }
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[3, 2]);
        assert!(matches!(
            add(&a, &b),
            Err(TensorError::ShapeMismatch { op: "add", .. })
        ));
    }

    #[test]
    fn bias_broadcasts_over_rows() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        let b = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = add_bias(&x, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let (gx, gb) = add_bias_backward(&Tensor::filled(&[2, 3], 1.0), 3);
        assert_eq!(gx.data(), &[1.0; 6]);
        assert_eq!(gb.data(), &[2.0, 2.0, 2.0]);
    }
}

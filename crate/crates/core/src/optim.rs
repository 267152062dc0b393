use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Scalar};

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// One bias-corrected Adam update over every parameter. Fails without
    /// touching anything if any parameter lacks a gradient.
    pub fn step<T: Scalar>(&self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::InvalidArgument(format!(
                "parameter {} has no gradient",
                p.name
            )));
        }
        for p in params.iter_mut() {
            self.update(p);
        }
        Ok(())
    }

    fn update<T: Scalar>(&self, p: &mut Parameter<T>) {
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let grad = p.grad.as_ref().expect("checked by step");
        let (b1, b2) = (self.beta1, self.beta2);
        let values = p.value.data_mut();
        let m = p.first_moment.data_mut();
        let v = p.second_moment.data_mut();
        for i in 0..values.len() {
            let g = grad.data()[i].as_f64();
            let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
            let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let update = self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
            values[i] = T::from_f64(values[i].as_f64() - update);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Parameter::new("w", Tensor::<f64>::full(&[3], 0.7));
        p.grad = Some(Tensor::zeros(&[3]));
        Adam::default().step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.data(), &[0.7; 3]);
        assert_eq!(p.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the update is lr · g / (|g| + eps) ≈ lr.
        let mut p = Parameter::new("w", Tensor::<f64>::full(&[1], 0.0));
        p.grad = Some(Tensor::full(&[1], 1.0));
        let adam = Adam::with_lr(1e-3);
        adam.step(&mut [&mut p]).unwrap();
        let expected = 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.value.data()[0] + expected).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut p = Parameter::new("w", Tensor::<f32>::zeros(&[2]));
        assert!(Adam::default().step(&mut [&mut p]).is_err());
        assert_eq!(p.step, 0);
    }

    #[test]
    fn deterministic_over_ten_steps() {
        let run = || {
            let mut p = Parameter::new("w", Tensor::<f32>::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap());
            for k in 0..10 {
                let g: Vec<f32> = p.value.data().iter().map(|v| v * 2.0 + k as f32 * 0.01).collect();
                p.grad = Some(Tensor::from_vec(&[3], g).unwrap());
                Adam::with_lr(0.01).step(&mut [&mut p]).unwrap();
            }
            p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}

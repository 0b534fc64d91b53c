//! Adam and plain gradient descent over [`ParamTensor`]s.

use super::layers::ParamTensor;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of every tensor, using the gradients
    /// left by the last backward pass.
    pub fn step(&self, params: &mut [&mut ParamTensor]) {
        for p in params.iter_mut() {
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let ParamTensor {
                value,
                grad,
                adam_m,
                adam_v,
                ..
            } = &mut **p;
            for (((w, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(adam_m.data_mut())
                .zip(adam_v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            assert!(p.value.is_finite(), "Adam produced a non-finite parameter");
        }
    }
}

/// `w ← w − lr·g`.
pub fn sgd_step(params: &mut [&mut ParamTensor], lr: f64) {
    for p in params.iter_mut() {
        let ParamTensor { value, grad, .. } = &mut **p;
        for (w, g) in value.data_mut().iter_mut().zip(grad.data()) {
            *w -= lr * g;
        }
        p.step_count += 1;
    }
}

/// Update rule selectable from configuration.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam(Adam),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn step(&self, params: &mut [&mut ParamTensor]) {
        match self {
            Optimizer::Adam(a) => a.step(params),
            Optimizer::Sgd { lr } => sgd_step(params, *lr),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Adam(a) => a.lr,
            Optimizer::Sgd { lr } => *lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = ParamTensor::new(Matrix::from_rows(&[vec![1.5, -2.0]]));
        let before = p.value.clone();
        Adam::new(0.001).step(&mut [&mut p]);
        assert_eq!(p.value, before);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamTensor::new(Matrix::filled(1, 1, 0.0));
        p.grad = Matrix::filled(1, 1, 1.0);
        Adam::new(0.001).step(&mut [&mut p]);
        // m̂ = 1, v̂ = 1 => Δ = lr / (1 + eps)
        assert!((p.value.get(0, 0) + 0.001).abs() < 1e-6);
    }

    #[test]
    fn descends_a_parabola() {
        let mut p = ParamTensor::new(Matrix::filled(1, 1, 1.0));
        let adam = Adam::new(0.05);
        let mut prev = 1.0;
        for _ in 0..10 {
            let w = p.value.get(0, 0);
            p.grad = Matrix::filled(1, 1, 2.0 * w);
            adam.step(&mut [&mut p]);
            let f = p.value.get(0, 0).powi(2);
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = ParamTensor::new(Matrix::filled(1, 2, 1.0));
        p.grad = Matrix::from_rows(&[vec![2.0, -1.0]]);
        sgd_step(&mut [&mut p], 0.1);
        assert_eq!(p.value.data(), &[0.8, 1.1]);
    }
}

//! Adam with bias correction, applied only to parameters whose gradients
//! were touched since the last `zero_grad`. Untouched parameters keep their
//! moments and step counters frozen, so sparse embedding updates behave like
//! per-row lazy Adam.

use super::{NumericError, ParameterStore};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    config: AdamConfig,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        assert!(config.lr > 0.0, "learning rate must be positive");
        Adam { config }
    }

    /// One optimizer step over every touched parameter. Gradients are left
    /// intact; the caller zeroes them when starting the next tape.
    pub fn step(&self, store: &mut ParameterStore) -> Result<(), NumericError> {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for id in store.ids().collect::<Vec<_>>() {
            if !store.touched(id) {
                continue;
            }
            if !store.grad(id).is_finite() {
                return Err(NumericError {
                    param: store.name(id).to_string(),
                    stage: "gradient".to_string(),
                });
            }
            let (value, grad, m, v, step, name) = store.param_mut(id);
            *step += 1;
            let bc1 = 1.0 - beta1.powi(*step as i32);
            let bc2 = 1.0 - beta2.powi(*step as i32);
            let name = name.to_string();
            for ((x, &g), (mi, vi)) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !store.value(id).is_finite() {
                return Err(NumericError {
                    param: name,
                    stage: "update".to_string(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParameterStore::new();
        let id = store.register("w", Tensor::from_vec(1, 2, vec![0.5, -0.5]));
        // Touched but with an all-zero gradient.
        store.accumulate_grad(id, &Tensor::zeros(1, 2));
        Adam::new(AdamConfig::default()).step(&mut store).unwrap();
        assert_eq!(store.value(id).data(), &[0.5, -0.5]);
    }

    #[test]
    fn untouched_parameter_is_skipped() {
        let mut store = ParameterStore::new();
        let a = store.register("a", Tensor::scalar(1.0));
        let b = store.register("b", Tensor::scalar(1.0));
        store.accumulate_grad(a, &Tensor::scalar(2.0));
        Adam::new(AdamConfig::default()).step(&mut store).unwrap();
        assert_ne!(store.value(a).scalar_value(), 1.0);
        assert_eq!(store.value(b).scalar_value(), 1.0);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut store = ParameterStore::new();
        let id = store.register("w", Tensor::from_vec(1, 2, vec![1.0, 1.0]));
        store.accumulate_grad(id, &Tensor::from_vec(1, 2, vec![3.0, -0.004]));
        Adam::new(cfg).step(&mut store).unwrap();
        // Bias-corrected first step is −lr·g/(|g| + eps') ≈ −lr·sign(g).
        let v = store.value(id);
        assert!((v.get(0, 0) - (1.0 - 0.01)).abs() < 1e-5);
        assert!((v.get(0, 1) - (1.0 + 0.01)).abs() < 1e-5);
    }

    #[test]
    fn two_constant_gradient_steps_match_hand_recurrence() {
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let g = 0.5;
        let mut store = ParameterStore::new();
        let id = store.register("w", Tensor::scalar(2.0));

        let mut x = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);

            store.accumulate_grad(id, &Tensor::scalar(g));
            Adam::new(cfg).step(&mut store).unwrap();
            store.zero_grad();
        }
        assert!((store.value(id).scalar_value() - x).abs() < 1e-12);
    }

    #[test]
    fn nonfinite_gradient_names_the_parameter() {
        let mut store = ParameterStore::new();
        let id = store.register("entity_embedding", Tensor::scalar(1.0));
        store.accumulate_grad(id, &Tensor::scalar(f64::NAN));
        let err = Adam::new(AdamConfig::default())
            .step(&mut store)
            .unwrap_err();
        assert!(err.to_string().contains("entity_embedding"));
    }
}

use super::{Gradients, Mlp};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam moments for one model.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(model: &Mlp, config: AdamConfig) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(config.lr) && ok(config.eps) && (0.0..1.0).contains(&config.beta1) && (0.0..1.0).contains(&config.beta2)) {
            return Err(Error::Config(format!("invalid Adam settings {config:?}")));
        }
        Ok(Self {
            config,
            first_moment: Gradients::zeros_like(model),
            second_moment: Gradients::zeros_like(model),
            step_count: 0,
        })
    }

    /// Applies one update to `model` in place.
    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.matches(model) || !self.first_moment.matches(model) {
            return Err(Error::Shape("gradient shapes do not match the model".into()));
        }
        if !grads.is_finite() {
            return Err(Error::Training {
                iteration: self.step_count as usize,
                detail: "non-finite gradient".into(),
            });
        }
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let layers = model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.first_moment.layers.iter_mut().zip(self.second_moment.layers.iter_mut()));
        for ((layer, g), (m, v)) in layers {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;

    fn scalar_model(w: f64) -> Mlp {
        Mlp::from_layers(vec![Dense { in_dim: 1, out_dim: 1, weights: vec![w], bias: vec![0.0] }]).unwrap()
    }

    fn grad_of(model: &Mlp, gw: f64) -> Gradients {
        let mut g = Gradients::zeros_like(model);
        g.layers[0].weights[0] = gw;
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = Mlp::new(&[2, 4, 2], 1).unwrap();
        let before = m.params();
        let mut adam = AdamState::new(&m, AdamConfig::default()).unwrap();
        let zero = Gradients::zeros_like(&m);
        adam.step(&mut m, &zero).unwrap();
        assert_eq!(before, m.params());
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_is_a_sign_step() {
        // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let mut m = scalar_model(0.5);
        let mut adam = AdamState::new(&m, AdamConfig::with_lr(1e-3)).unwrap();
        let g = grad_of(&m, 2.0);
        adam.step(&mut m, &g).unwrap();
        let expected = 0.5 - 1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((m.layers()[0].weights[0] - expected).abs() < 1e-15);
        assert!((0.5 - m.layers()[0].weights[0] - 1e-3).abs() < 1e-11);
    }

    #[test]
    fn quadratic_loss_decreases() {
        let mut m = scalar_model(1.0);
        let mut adam = AdamState::new(&m, AdamConfig::with_lr(1e-2)).unwrap();
        let f = |m: &Mlp| m.layers()[0].weights[0].powi(2);
        let mut prev = f(&m);
        for _ in 0..2 {
            let w = m.layers()[0].weights[0];
            let g = grad_of(&m, 2.0 * w);
            adam.step(&mut m, &g).unwrap();
            assert!(f(&m) < prev);
            prev = f(&m);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut m = scalar_model(1.0);
        let mut adam = AdamState::new(&m, AdamConfig::default()).unwrap();
        let g = grad_of(&m, f64::NAN);
        let err = adam.step(&mut m, &g).unwrap_err();
        assert!(matches!(err, Error::Training { .. }));
        assert_eq!(adam.step_count, 0);
        assert_eq!(m.layers()[0].weights[0], 1.0);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut m = Mlp::new(&[2, 4, 2], 1).unwrap();
        let other = Mlp::new(&[2, 3, 2], 1).unwrap();
        let mut adam = AdamState::new(&m, AdamConfig::default()).unwrap();
        assert!(adam.step(&mut m, &Gradients::zeros_like(&other)).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::mlp::{Layer, MlpGradient, MlpModel};
use crate::error::{Error, Result};

/// Learning-rate schedule over optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// `lr₀ · cos(7π·step / (16·total_steps))`, held at its final value past the horizon.
    Cosine { total_steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub schedule: LrSchedule,
    /// L2 penalty added to weight gradients (biases are not decayed).
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.03,
            momentum: 0.9,
            schedule: LrSchedule::Constant,
            weight_decay: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must be in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        if let LrSchedule::Cosine { total_steps: 0 } = self.schedule {
            return Err(Error::Config("cosine schedule needs total_steps > 0".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine { total_steps } => {
                let progress = step.min(total_steps) as f64 / total_steps as f64;
                self.lr * (7.0 * std::f64::consts::PI * progress / 16.0).cos()
            }
        }
    }
}

/// SGD with heavy-ball momentum: `v ← μv − lr(step)·g; θ ← θ + v`, where
/// weight gradients carry the extra `wd·θ` term.
#[derive(Debug, Clone)]
pub struct SgdState {
    config: SgdConfig,
    velocity: Vec<Layer>,
}

impl SgdState {
    pub fn new(config: SgdConfig, model: &MlpModel) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: model.zero_gradient().layers,
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.config.lr_at(step)
    }

    pub fn step(&mut self, model: &mut MlpModel, grad: &MlpGradient, step: usize) -> Result<()> {
        if !model.same_shape(grad) || grad.layers.len() != self.velocity.len() {
            return Err(Error::InvalidInput("gradient shape does not match model".into()));
        }
        let lr = self.lr_at(step);
        let mu = self.config.momentum;
        let wd = self.config.weight_decay;
        for ((layer, g), v) in model
            .layers_mut()
            .iter_mut()
            .zip(&grad.layers)
            .zip(&mut self.velocity)
        {
            update(layer.weights.data_mut(), g.weights.data(), v.weights.data_mut(), mu, lr, wd);
            update(&mut layer.bias, &g.bias, &mut v.bias, mu, lr, 0.0);
        }
        Ok(())
    }
}

fn update(params: &mut [f64], grad: &[f64], velocity: &mut [f64], mu: f64, lr: f64, wd: f64) {
    for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity) {
        let g = if wd == 0.0 { *g } else { g + wd * *p };
        *v = mu * *v - lr * g;
        *p += *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, Matrix};
    use approx::assert_abs_diff_eq;

    fn scalar_model(w: f64) -> MlpModel {
        let layer = Layer {
            weights: Matrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
        };
        MlpModel::from_layers(vec![layer], Activation::Tanh).unwrap()
    }

    fn grad_of(m: &MlpModel, f: impl Fn(f64) -> f64) -> MlpGradient {
        let mut g = m.zero_gradient();
        g.layers[0].weights = Matrix::from_vec(1, 1, vec![f(m.param(0))]).unwrap();
        g
    }

    #[test]
    fn zero_gradient_leaves_model_unchanged() {
        let mut m = scalar_model(1.5);
        let before = m.clone();
        let mut opt = SgdState::new(SgdConfig::default(), &m).unwrap();
        let g = m.zero_gradient();
        opt.step(&mut m, &g, 0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn zero_momentum_is_plain_gradient_descent() {
        let mut m = scalar_model(2.0);
        let cfg = SgdConfig { lr: 0.1, momentum: 0.0, schedule: LrSchedule::Constant, weight_decay: 0.0 };
        let mut opt = SgdState::new(cfg, &m).unwrap();
        let g = grad_of(&m, |w| 3.0 * w);
        opt.step(&mut m, &g, 0).unwrap();
        assert_abs_diff_eq!(m.param(0), 2.0 - 0.1 * 6.0, epsilon = 1e-15);
    }

    #[test]
    fn weight_decay_shrinks_weights_but_not_biases() {
        let mut m = scalar_model(2.0);
        m.set_param(1, 1.0);
        let cfg = SgdConfig { lr: 0.1, momentum: 0.0, schedule: LrSchedule::Constant, weight_decay: 0.5 };
        let mut opt = SgdState::new(cfg, &m).unwrap();
        let g = m.zero_gradient();
        opt.step(&mut m, &g, 0).unwrap();
        assert_abs_diff_eq!(m.param(0), 2.0 - 0.1 * 0.5 * 2.0, epsilon = 1e-15);
        assert_eq!(m.param(1), 1.0);
    }

    #[test]
    fn momentum_trajectory_matches_hand_recursion_on_quadratic() {
        // loss = 0.5 · a · w², gradient a · w
        let (a, lr, mu) = (2.0, 0.1, 0.9);
        let mut m = scalar_model(1.0);
        let cfg = SgdConfig { lr, momentum: mu, schedule: LrSchedule::Constant, weight_decay: 0.0 };
        let mut opt = SgdState::new(cfg, &m).unwrap();
        // step 1: v = -0.2, w = 0.8
        // step 2: v = 0.9·(-0.2) - 0.1·1.6 = -0.34, w = 0.46
        // step 3: v = 0.9·(-0.34) - 0.1·0.92 = -0.398, w = 0.062
        let expected = [0.8, 0.46, 0.062];
        for (step, want) in expected.iter().enumerate() {
            let g = grad_of(&m, |w| a * w);
            opt.step(&mut m, &g, step).unwrap();
            assert_abs_diff_eq!(m.param(0), *want, epsilon = 1e-12);
        }
    }

    #[test]
    fn cosine_schedule_starts_at_lr0_and_decays() {
        let cfg = SgdConfig { lr: 0.03, momentum: 0.9, schedule: LrSchedule::Cosine { total_steps: 100 }, weight_decay: 0.0 };
        assert_eq!(cfg.lr_at(0), 0.03);
        let mut prev = cfg.lr_at(0);
        for s in 1..100 {
            let lr = cfg.lr_at(s);
            assert!(lr > 0.0 && lr <= prev);
            prev = lr;
        }
        assert!(cfg.lr_at(1000) > 0.0);
    }

    #[test]
    fn rejects_invalid_configs_and_shapes() {
        let m = scalar_model(0.0);
        let bad = SgdConfig { lr: 0.1, momentum: 1.0, schedule: LrSchedule::Constant, weight_decay: 0.0 };
        assert!(SgdState::new(bad, &m).is_err());
        let bad = SgdConfig { lr: -1.0, momentum: 0.0, schedule: LrSchedule::Constant, weight_decay: 0.0 };
        assert!(SgdState::new(bad, &m).is_err());
        let mut opt = SgdState::new(SgdConfig::default(), &m).unwrap();
        let other = MlpModel::zeros(&[2, 1], Activation::Tanh).unwrap();
        let mut m2 = m.clone();
        assert!(opt.step(&mut m2, &other.zero_gradient(), 0).is_err());
    }
}

//! AdamW with decoupled weight decay, and the warmup + cosine schedule.

use ndarray::ArrayD;

use crate::error::Result;
use crate::learner::params::ParamStore;
use crate::learner::TrainConfig;

/// AdamW state: first/second moments per parameter plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f32,
    beta2: f32,
    eps: f32,
    weight_decay: f32,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
    step: i32,
}

impl AdamW {
    pub fn new(params: &ParamStore<f32>, config: &TrainConfig) -> Self {
        let zeros: Vec<ArrayD<f32>> = params
            .iter()
            .map(|(_, p)| ArrayD::zeros(p.raw_dim()))
            .collect();
        AdamW {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One update. Decay is decoupled (`theta -= lr * wd * theta`) and, as
    /// is conventional, applied to `.weight` tensors only, never biases.
    /// With `lr == 0` parameters are untouched.
    pub fn step(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &ParamStore<f32>,
        lr: f32,
    ) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let decay = if params.name(i).ends_with(".weight") {
                self.weight_decay
            } else {
                0.0
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let g = grads.value(i);
            ndarray::Zip::from(params.value_mut(i))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + self.eps)) + lr * decay * *p;
                });
        }
        params.assert_finite()
    }
}

/// Learning rate at a 0-based epoch: linear ramp from
/// `base_lr / warmup_epochs` up to `base_lr`, then a half-cosine that
/// reaches zero at `epochs`.
pub fn lr_at_epoch(epoch: usize, config: &TrainConfig) -> f64 {
    let base = config.base_lr;
    if epoch < config.warmup_epochs {
        return base * (epoch + 1) as f64 / config.warmup_epochs as f64;
    }
    let span = (config.epochs - config.warmup_epochs) as f64;
    let progress = (epoch - config.warmup_epochs) as f64 / span;
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::ConvNetSpec;

    fn config() -> TrainConfig {
        TrainConfig {
            epochs: 60,
            warmup_epochs: 5,
            base_lr: 1e-3,
            ..TrainConfig::new(1)
        }
    }

    #[test]
    fn warmup_then_cosine_shape() {
        let cfg = config();
        // Epoch 0 of warmup: base_lr / warmup_epochs.
        assert!((lr_at_epoch(0, &cfg) - 2e-4).abs() < 1e-12);
        assert!((lr_at_epoch(4, &cfg) - 1e-3).abs() < 1e-12);
        // Peak at the start of the cosine leg, then monotone decay.
        assert!((lr_at_epoch(5, &cfg) - 1e-3).abs() < 1e-12);
        let mut prev = lr_at_epoch(5, &cfg);
        for e in 6..60 {
            let lr = lr_at_epoch(e, &cfg);
            assert!(lr < prev);
            prev = lr;
        }
        // Approaches zero at the end.
        assert!(lr_at_epoch(59, &cfg) < 1e-3 * 0.01);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let spec = ConvNetSpec {
            input: (1, 8, 8),
            stages: vec![2],
            n_classes: 3,
        };
        let cfg = config();
        let mut params: ParamStore<f32> = ParamStore::init(&spec, 1).unwrap();
        let reference = params.clone();
        let mut grads = params.zeros_like();
        for i in 0..grads.len() {
            grads.value_mut(i).fill(0.5);
        }
        let mut opt = AdamW::new(&params, &cfg);
        opt.step(&mut params, &grads, 0.0).unwrap();
        opt.step(&mut params, &grads, 0.0).unwrap();
        assert_eq!(params, reference);
    }

    #[test]
    fn step_moves_against_gradient_and_decays_weights() {
        let spec = ConvNetSpec {
            input: (1, 8, 8),
            stages: vec![2],
            n_classes: 3,
        };
        let cfg = config();
        let mut params: ParamStore<f32> = ParamStore::init(&spec, 2).unwrap();
        let before_w = params.by_name("conv0.weight").unwrap().clone();
        let mut grads = params.zeros_like();
        for i in 0..grads.len() {
            grads.value_mut(i).fill(1.0);
        }
        let mut opt = AdamW::new(&params, &cfg);
        opt.step(&mut params, &grads, 1e-2).unwrap();
        let after_w = params.by_name("conv0.weight").unwrap();
        // Positive gradient pushes every element down; decay shrinks too.
        for (b, a) in before_w.iter().zip(after_w.iter()) {
            assert!(a < b);
        }
        // Biases see no decay: with zero gradient they stay put.
        let mut params2: ParamStore<f32> = ParamStore::init(&spec, 2).unwrap();
        let bias_before = params2.by_name("conv0.bias").unwrap().clone();
        let zero_grads = params2.zeros_like();
        let mut opt2 = AdamW::new(&params2, &cfg);
        opt2.step(&mut params2, &zero_grads, 1e-2).unwrap();
        assert_eq!(params2.by_name("conv0.bias").unwrap(), &bias_before);
    }
}

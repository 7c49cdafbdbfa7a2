//! A small, self-contained 2D classifier and training loop, sufficient to
//! demonstrate temporal learning from flattened composites on a CPU.

pub mod ablate;
pub mod flops;
pub mod net;
pub mod optim;
pub mod params;
pub mod train;

pub use ablate::{run_ablation, AblationConfig, AblationReport, AblationVariant};
pub use flops::{conv_macs, flops_estimate, MacBreakdown};
pub use net::{batch_loss, forward, loss_and_grad, softmax_rows};
pub use optim::{lr_at_epoch, AdamW};
pub use params::ParamStore;
pub use train::{evaluate, train, write_history, EpochStats, EvalReport, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the classifier: a stack of 3x3 stride-2 pad-1 conv +
/// ReLU stages followed by global average pooling and a linear head.
///
/// The default four stride-2 stages shrink a 128x128 composite to an 8x8
/// map, so after pooling every head unit integrates the whole composite,
/// which is what lets spatial filters express temporal structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvNetSpec {
    /// Input dimensions `(c, h, w)`.
    pub input: (usize, usize, usize),
    /// Output channels of each stage.
    pub stages: Vec<usize>,
    pub n_classes: usize,
}

impl ConvNetSpec {
    /// The default stage widths: 16, 32, 64, 128.
    pub fn with_default_stages(input: (usize, usize, usize), n_classes: usize) -> Self {
        ConvNetSpec {
            input,
            stages: vec![16, 32, 64, 128],
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 || self.n_classes == 0 {
            return Err(Error::ShapeMismatch(format!(
                "invalid net spec: input {c}x{h}x{w}, {} classes",
                self.n_classes
            )));
        }
        if self.stages.contains(&0) {
            return Err(Error::ShapeMismatch("conv stage with zero channels".into()));
        }
        // Stride-2 pad-1 3x3 keeps spatial dims >= 1 for any input >= 1,
        // so only the input needs checking.
        Ok(())
    }

    /// `(c, h, w)` after each stage.
    pub fn stage_dims(&self) -> Vec<(usize, usize, usize)> {
        let (_, mut h, mut w) = self.input;
        self.stages
            .iter()
            .map(|&c| {
                h = net::conv_out_dim(h);
                w = net::conv_out_dim(w);
                (c, h, w)
            })
            .collect()
    }

    /// Width of the pooled feature vector feeding the head.
    pub fn feature_dim(&self) -> usize {
        self.stages.last().copied().unwrap_or(self.input.0)
    }
}

/// Training hyperparameters. The defaults are the desk-scale recipe:
/// AdamW (0.9, 0.999, 1e-8) with weight decay 5e-2, cosine schedule with
/// linear warmup, 60 epochs with 5 warmup epochs, base LR 1e-3, batch 32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            epochs: 60,
            batch: 32,
            base_lr: 1e-3,
            warmup_epochs: 5,
            weight_decay: 5e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Unconfigured("epochs must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::Unconfigured("batch size must be at least 1"));
        }
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::Unconfigured("base_lr must be positive"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Unconfigured("warmup_epochs must be below epochs"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_shapes() {
        let spec = ConvNetSpec::with_default_stages((1, 128, 128), 8);
        assert_eq!(spec.stages, vec![16, 32, 64, 128]);
        assert_eq!(
            spec.stage_dims(),
            vec![(16, 64, 64), (32, 32, 32), (64, 16, 16), (128, 8, 8)]
        );
        assert_eq!(spec.feature_dim(), 128);
        spec.validate().unwrap();
    }

    #[test]
    fn zero_stage_spec_pools_the_input() {
        let spec = ConvNetSpec {
            input: (16, 7, 7),
            stages: vec![],
            n_classes: 4,
        };
        assert_eq!(spec.feature_dim(), 16);
        spec.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::new(1);
        cfg.validate().unwrap();
        cfg.epochs = 0;
        assert!(matches!(cfg.validate(), Err(Error::Unconfigured(_))));
        let mut cfg = TrainConfig::new(1);
        cfg.warmup_epochs = cfg.epochs;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::new(1);
        cfg.base_lr = 0.0;
        assert!(cfg.validate().is_err());
    }
}

//! Multiply-accumulate accounting for the convnet.

use crate::learner::net::conv_out_dim;
use crate::learner::ConvNetSpec;

/// MACs of one convolution layer: `out_c * in_c * k^2 * out_h * out_w`.
pub fn conv_macs(out_c: usize, in_c: usize, k: usize, out_h: usize, out_w: usize) -> u64 {
    out_c as u64 * in_c as u64 * (k * k) as u64 * out_h as u64 * out_w as u64
}

/// Per-layer MAC breakdown of a spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacBreakdown {
    pub stages: Vec<u64>,
    /// Linear head (`features * classes`); pooling contributes no MACs.
    pub head: u64,
}

impl MacBreakdown {
    pub fn conv_total(&self) -> u64 {
        self.stages.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.conv_total() + self.head
    }

    /// FLOPs under the usual 2-FLOPs-per-MAC convention.
    pub fn flops(&self) -> u64 {
        2 * self.total()
    }
}

/// Exact MAC count of a spec on its configured input.
pub fn flops_estimate(spec: &ConvNetSpec) -> MacBreakdown {
    let (mut c, mut h, mut w) = spec.input;
    let mut stages = Vec::with_capacity(spec.stages.len());
    for &out_c in &spec.stages {
        let (oh, ow) = (conv_out_dim(h), conv_out_dim(w));
        stages.push(conv_macs(out_c, c, 3, oh, ow));
        c = out_c;
        h = oh;
        w = ow;
    }
    MacBreakdown {
        stages,
        head: (c * spec.n_classes) as u64,
    }
}

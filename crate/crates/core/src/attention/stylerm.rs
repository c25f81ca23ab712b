use alloc::format;

use crate::autograd::PoolKind;
use crate::init::he_normal;
use crate::nn::BatchNorm;
use crate::{ParamId, ParamKind, ParamStore, Result, Rng, Scalar, Session, Var};

/// Style-based recalibration.
///
/// Each channel of a depthwise-filtered copy of the input is summarised by
/// its spatial mean and standard deviation. A per-channel two-tap encoding of
/// that pair is batch-normalised and squashed into a gate in `(0, 1)` which
/// rescales the original input.
#[derive(Debug, Clone)]
pub struct StyleRm {
    pub channels: usize,
    /// Depthwise `C×1×3×3` kernel applied before pooling.
    pub pre_conv: ParamId,
    /// `C×2` channel-wise encoding of `(mean, std)`.
    pub cfc: ParamId,
    pub bn: BatchNorm,
}

impl StyleRm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut Rng) -> Self {
        let pre = he_normal(&[channels, 1, 3, 3], 9, rng);
        let cfc = he_normal(&[channels, 2], 2, rng);
        StyleRm {
            channels,
            pre_conv: store.add(format!("{name}.pre_conv"), ParamKind::Weight, pre),
            cfc: store.add(format!("{name}.cfc"), ParamKind::Weight, cfc),
            bn: BatchNorm::new(store, &format!("{name}.bn"), channels, 1.0),
        }
    }

    /// Trainable parameter count: `9C + 2C + 2C`.
    pub fn parameter_count(channels: usize) -> usize {
        13 * channels
    }

    /// `B×C×H×W → B×C×2` holding `(mean, std)` per channel.
    pub fn style_pool<T: Scalar>(s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let mean = s.global_pool(x, PoolKind::Mean)?;
        let std = s.global_pool(x, PoolKind::Std)?;
        s.stack_last(&[mean, std])
    }

    /// Style descriptor `B×C×2` → gates `B×C`.
    pub fn integrate<T: Scalar>(&self, s: &mut Session<'_, T>, t: Var) -> Result<Var> {
        let w = s.param(self.cfc);
        let weighted = s.mul(t, w)?;
        let z = s.sum_last(weighted)?;
        let z = self.bn.forward(s, z)?;
        Ok(s.sigmoid(z))
    }

    pub fn gate<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.pre_conv);
        let filtered = s.depthwise_conv2d(x, w, 1, 1)?;
        let t = Self::style_pool(s, filtered)?;
        self.integrate(s, t)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let g = self.gate(s, x)?;
        s.channel_scale(x, g)
    }
}

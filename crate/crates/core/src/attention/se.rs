use alloc::format;

use crate::autograd::PoolKind;
use crate::nn::Linear;
use crate::{Error, ParamStore, Result, Rng, Scalar, Session, Var};

/// Squeeze-and-excitation channel gate with bias-free FC layers.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub channels: usize,
    pub reduction: usize,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SqueezeExcite {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "SE reduction {reduction} does not divide {channels} channels"
            )));
        }
        let hidden = channels / reduction;
        Ok(SqueezeExcite {
            channels,
            reduction,
            fc1: Linear::new(store, &format!("{name}.fc1"), channels, hidden, false, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, channels, false, rng),
        })
    }

    /// `2·C·C/r`.
    pub fn parameter_count(channels: usize, reduction: usize) -> usize {
        2 * channels * (channels / reduction)
    }

    pub fn gate<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let pooled = s.global_pool(x, PoolKind::Mean)?;
        let h = self.fc1.forward(s, pooled)?;
        let h = s.relu(h);
        let logits = self.fc2.forward(s, h)?;
        Ok(s.sigmoid(logits))
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let g = self.gate(s, x)?;
        s.channel_scale(x, g)
    }
}

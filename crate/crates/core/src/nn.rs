//! Parameterised layers shared by the attention modules and the backbone.
//!
//! Layers only hold [`ParamId`]s; the tensors live in a [`ParamStore`] so that
//! optimisers and checkpoints can treat every model uniformly.

use alloc::format;

use crate::autograd::BatchNormIds;
use crate::init::he_normal;
use crate::{ParamId, ParamKind, ParamStore, Result, Rng, Scalar, Session, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Square `k×k` convolution with "same" padding, He-initialised.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let w = he_normal(
            &[out_channels, in_channels, kernel, kernel],
            in_channels * kernel * kernel,
            rng,
        );
        Conv2d {
            weight: store.add(format!("{name}.weight"), ParamKind::Weight, w),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        s.conv2d(x, w, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let w = he_normal(&[outputs, inputs], inputs, rng);
        let weight = store.add(format!("{name}.weight"), ParamKind::Weight, w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), ParamKind::Affine, Tensor::zeros(&[outputs])));
        Linear { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub ids: BatchNormIds,
}

impl BatchNorm {
    /// `gamma` is the initial scale; the shift starts at zero.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, gamma: f64) -> Self {
        let c = [channels];
        BatchNorm {
            ids: BatchNormIds {
                gamma: store.add(
                    format!("{name}.gamma"),
                    ParamKind::Affine,
                    Tensor::full(&c, T::of(gamma)),
                ),
                beta: store.add(format!("{name}.beta"), ParamKind::Affine, Tensor::zeros(&c)),
                running_mean: store.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&c)),
                running_var: store.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::ones(&c)),
            },
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        s.batch_norm(x, &self.ids)
    }
}

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, ParamKind, ParamStore, Result, Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const SGD_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam (bias-corrected) or momentum SGD with decoupled weight decay on
/// [`ParamKind::Weight`] entries.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    steps: u64,
    /// Adam first moment or SGD momentum buffer, per store entry.
    first: Vec<Option<Tensor<T>>>,
    /// Adam second moment.
    second: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, weight_decay: f64, store: &ParamStore<T>) -> Self {
        let buffers = |on: bool| {
            store
                .iter()
                .map(|(_, p)| (on && p.kind.trainable()).then(|| Tensor::zeros(p.value.shape())))
                .collect()
        };
        Optimizer {
            kind,
            weight_decay,
            steps: 0,
            first: buffers(true),
            second: buffers(kind == OptimizerKind::Adam),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the gradients held in `store`. Fails before
    /// touching any parameter if a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for (_, p) in store.iter() {
            if let Some(g) = &p.grad {
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient { param: p.name.clone() });
                }
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - Float::powi(ADAM_BETA1, t);
        let bc2 = 1.0 - Float::powi(ADAM_BETA2, t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let p = store.get_mut(id);
            if !p.kind.trainable() {
                continue;
            }
            let decay = if p.kind == ParamKind::Weight {
                self.weight_decay
            } else {
                0.0
            };
            let Some(m) = self.first[i].as_mut() else { continue };
            let w = p.value.data_mut();
            let zero_grad;
            let g = match &p.grad {
                Some(g) => g.data(),
                None => {
                    zero_grad = alloc::vec![T::zero(); w.len()];
                    &zero_grad
                }
            };
            match self.kind {
                OptimizerKind::Adam => {
                    let v = self.second[i].as_mut().expect("adam state");
                    let (m, v) = (m.data_mut(), v.data_mut());
                    for j in 0..w.len() {
                        let gj = g[j].as_f64();
                        let mj = ADAM_BETA1 * m[j].as_f64() + (1.0 - ADAM_BETA1) * gj;
                        let vj = ADAM_BETA2 * v[j].as_f64() + (1.0 - ADAM_BETA2) * gj * gj;
                        m[j] = T::of(mj);
                        v[j] = T::of(vj);
                        let update = (mj / bc1) / (Float::sqrt(vj / bc2) + ADAM_EPS) + decay * w[j].as_f64();
                        w[j] = T::of(w[j].as_f64() - lr * update);
                    }
                }
                OptimizerKind::Sgd => {
                    let m = m.data_mut();
                    for j in 0..w.len() {
                        let mj = SGD_MOMENTUM * m[j].as_f64() + g[j].as_f64();
                        m[j] = T::of(mj);
                        w[j] = T::of(w[j].as_f64() - lr * (mj + decay * w[j].as_f64()));
                    }
                }
            }
        }
        Ok(())
    }

    /// State tensors named `opt.m.<param>` / `opt.v.<param>`. The step count
    /// is not included; see [`steps`](Self::steps).
    pub fn state_records(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (id, p) in store.iter() {
            if let Some(m) = &self.first[id.index()] {
                out.push((format!("opt.m.{}", p.name), m.clone()));
            }
            if let Some(v) = &self.second[id.index()] {
                out.push((format!("opt.v.{}", p.name), v.clone()));
            }
        }
        out
    }

    pub fn set_steps(&mut self, steps: u64) {
        self.steps = steps;
    }

    /// Restores one record produced by [`state_records`](Self::state_records).
    pub fn load_record(&mut self, store: &ParamStore<T>, name: &str, value: Tensor<T>) -> Result<()> {
        let (slot, param) = if let Some(p) = name.strip_prefix("opt.m.") {
            (&mut self.first, p)
        } else if let Some(p) = name.strip_prefix("opt.v.") {
            (&mut self.second, p)
        } else {
            return Err(Error::Data(format!("unknown optimizer record `{name}`")));
        };
        let id = store
            .find(param)
            .ok_or_else(|| Error::Data(format!("optimizer record for unknown parameter `{param}`")))?;
        match &mut slot[id.index()] {
            Some(buf) if buf.shape() == value.shape() => {
                *buf = value;
                Ok(())
            }
            Some(buf) => Err(Error::Data(format!(
                "optimizer record `{name}` has shape {:?}, expected {:?}",
                value.shape(),
                buf.shape()
            ))),
            None => Err(Error::Data(format!("optimizer has no buffer for `{name}`"))),
        }
    }
}

//! Optimisation loop: loss, optimisers, learning-rate schedule, augmentation
//! and the epoch driver.

mod augment;
mod optim;
mod schedule;

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use augment::{augment_eval, augment_sample, augment_train, resample, AugmentMode, CROP_SCALE};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, SGD_MOMENTUM};
pub use schedule::{lr_at, COSINE_FLOOR, WARMUP_START};

use crate::backbone::Network;
use crate::data::LabeledImage;
use crate::metrics::{topk_accuracy, RunMetrics};
use crate::{Error, Mode, ParamStore, Result, Rng, Scalar, Session, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Random resized crops during training; off means the eval transform.
    pub augment: bool,
    /// Random horizontal flips (only with `augment`).
    pub flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 48,
            optimizer: OptimizerKind::Adam,
            lr: 1e-4,
            weight_decay: 1e-5,
            warmup_epochs: 0,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            augment: true,
            flip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Splits a permutation into batches of `batch` indices. A trailing batch of
/// one sample is merged into the previous batch, because batch statistics
/// need at least two samples.
pub fn make_batches(order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch.max(1)).map(|c| c.to_vec()).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap_or_default();
        if let Some(prev) = out.last_mut() {
            prev.extend(last);
        }
    }
    out
}

/// Stacks `3×H×W` images into a `B×3×H×W` batch.
pub fn stack_images<T: Scalar>(images: &[Tensor<T>]) -> Result<Tensor<T>> {
    Tensor::stack(images)
}

/// Serialisable generator position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based index of the finished epoch.
    pub epoch: usize,
    /// Rate used by the epoch's last step.
    pub lr: f64,
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
}

/// Owns the model, its parameters and the optimiser state for one run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub network: Network,
    pub store: ParamStore<T>,
    pub optimizer: Optimizer<T>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_top1: f64,
    rng: Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(network: Network, store: ParamStore<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer, config.weight_decay, &store);
        let mut rng = Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            network,
            store,
            optimizer,
            config,
            epoch: 0,
            best_val_top1: 0.0,
            rng,
        })
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    pub fn set_rng_state(&mut self, state: &RngState) {
        self.rng = state.restore();
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        let order: Vec<usize> = (0..samples).collect();
        make_batches(&order, self.config.batch_size).len()
    }

    fn prepare(&mut self, sample: &LabeledImage<T>) -> Result<Tensor<T>> {
        let target = self.network.spec.input_size;
        if self.config.augment {
            augment_train(&sample.pixels, target, self.config.flip, &mut self.rng)
        } else {
            augment_eval(&sample.pixels, target)
        }
    }

    /// One pass over `data` in seeded shuffled order.
    pub fn train_epoch(&mut self, data: &[LabeledImage<T>]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let classes = self.network.spec.num_classes;
        let per_epoch = self.steps_per_epoch(data.len());
        let total_steps = per_epoch * self.config.epochs;
        let warmup_steps = per_epoch * self.config.warmup_epochs;

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut loss_sum, mut hits1, mut hits5, mut lr) = (0.0, 0.0, 0.0, 0.0);
        for batch in make_batches(&order, self.config.batch_size) {
            let mut images = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in &batch {
                images.push(self.prepare(&data[i])?);
                labels.push(data[i].label);
            }
            let x = stack_images(&images)?;
            lr = lr_at(
                self.optimizer.steps() as usize,
                total_steps,
                self.config.lr,
                warmup_steps,
            );

            let (grads, updates, loss, logits) = {
                let mut s = Session::new(&self.store, Mode::Train);
                let xv = s.input(x);
                let logits = self.network.forward(&mut s, xv)?;
                let loss = s.cross_entropy(logits, &labels)?;
                let g = s.backward(loss)?;
                let grads = s.param_grads(&g);
                let loss_v = s.value(loss).item().as_f64();
                let logits_v = s.value(logits).clone();
                (grads, s.into_stat_updates(), loss_v, logits_v)
            };
            self.store.zero_grad();
            self.store.accumulate_grads(grads);
            self.optimizer.step(&mut self.store, lr)?;
            self.store.apply_stat_updates(&updates);

            let b = labels.len() as f64;
            loss_sum += loss * b;
            hits1 += topk_accuracy(logits.data(), classes, &labels, 1)? * b;
            hits5 += topk_accuracy(logits.data(), classes, &labels, classes.min(5))? * b;
        }
        self.epoch += 1;
        let n = data.len() as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            lr,
            loss: loss_sum / n,
            top1: hits1 / n,
            top5: hits5 / n,
        })
    }

    pub fn evaluate(&self, data: &[LabeledImage<T>]) -> Result<RunMetrics> {
        evaluate(&self.network, &self.store, data, self.config.batch_size)
    }
}

/// Eval-mode logits for `data`, `N×K` row-major.
pub fn predict<T: Scalar>(
    network: &Network,
    store: &ParamStore<T>,
    data: &[LabeledImage<T>],
    batch_size: usize,
) -> Result<Vec<T>> {
    let target = network.spec.input_size;
    let mut out = Vec::with_capacity(data.len() * network.spec.num_classes);
    for chunk in data.chunks(batch_size.max(1)) {
        let images = chunk
            .iter()
            .map(|s| augment_eval(&s.pixels, target))
            .collect::<Result<Vec<_>>>()?;
        let mut s = Session::new(store, Mode::Eval);
        let x = s.input(stack_images(&images)?);
        let logits = network.forward(&mut s, x)?;
        out.extend_from_slice(s.value(logits).data());
    }
    Ok(out)
}

/// Eval-mode metrics over `data`; parameters and statistics are untouched.
pub fn evaluate<T: Scalar>(
    network: &Network,
    store: &ParamStore<T>,
    data: &[LabeledImage<T>],
    batch_size: usize,
) -> Result<RunMetrics> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let logits = predict(network, store, data, batch_size)?;
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    RunMetrics::from_logits(&logits, network.spec.num_classes, &labels)
}

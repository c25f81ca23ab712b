//! Epoch loop with a JSON-lines metrics stream and checkpointing.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fetr_core::data::LabeledImage;
use fetr_core::train::Trainer;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, SplitRecord};
use crate::dataset::{ImageFolder, Manifest};
use crate::{Error, Result};

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
    pub val_top5: f64,
    /// Seconds spent on the epoch, or 0 when wall-clock reporting is off.
    pub wall_seconds: f64,
}

/// A split dataset loaded into memory.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub folder: ImageFolder,
    pub manifest: Manifest,
    pub train: Vec<LabeledImage<f32>>,
    pub val: Vec<LabeledImage<f32>>,
}

impl SplitData {
    pub fn load(dir: &Path, split: &SplitRecord) -> Result<Self> {
        let folder = ImageFolder::open(dir)?;
        let manifest = folder.split(split.train_ratio, split.seed)?;
        let train = folder.load_all(&manifest.train)?;
        let val = folder.load_all(&manifest.val)?;
        Ok(SplitData {
            folder,
            manifest,
            train,
            val,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.folder.classes
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for `last.fetr`, `best.fetr` and periodic snapshots.
    pub out: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Report real epoch durations. Off makes the stream a pure function of
    /// seed, configuration and data.
    pub wall_clock: bool,
}

pub const LAST: &str = "last.fetr";
pub const BEST: &str = "best.fetr";

pub fn snapshot_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.fetr")
}

/// Trains until `trainer.config.epochs` epochs are complete, writing one
/// JSON line per epoch to `sink`.
pub fn train(
    trainer: &mut Trainer<f32>,
    data: &SplitData,
    split: &SplitRecord,
    opts: &RunOptions,
    sink: &mut dyn Write,
) -> Result<Vec<EpochRecord>> {
    if let Some(out) = &opts.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    let mut records = Vec::new();
    while trainer.epoch < trainer.config.epochs {
        let t0 = Instant::now();
        let stats = trainer.train_epoch(&data.train)?;
        let val = trainer.evaluate(&data.val)?;
        let improved = trainer.epoch == 1 || val.top1 > trainer.best_val_top1;
        if improved {
            trainer.best_val_top1 = val.top1;
        }
        let record = EpochRecord {
            epoch: stats.epoch,
            lr: stats.lr,
            train_loss: stats.loss,
            train_top1: stats.top1,
            val_top1: val.top1,
            val_top5: val.top5,
            wall_seconds: if opts.wall_clock {
                t0.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        writeln!(sink, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io("<metrics stream>", e))?;
        sink.flush().map_err(|e| Error::io("<metrics stream>", e))?;
        log::info!(
            "epoch {}/{}: loss {:.4}, train top-1 {:.3}, val top-1 {:.3}",
            record.epoch,
            trainer.config.epochs,
            record.train_loss,
            record.train_top1,
            record.val_top1
        );
        if let Some(out) = &opts.out {
            let ckpt = Checkpoint::from_trainer(trainer, data.classes(), split.clone(), opts.checkpoint_every);
            ckpt.save(out.join(LAST))?;
            if improved {
                ckpt.save(out.join(BEST))?;
            }
            if opts.checkpoint_every > 0 && trainer.epoch % opts.checkpoint_every == 0 {
                ckpt.save(out.join(snapshot_name(trainer.epoch)))?;
            }
        }
        records.push(record);
    }
    Ok(records)
}

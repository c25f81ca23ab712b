//! Residual classifier: space-to-depth stem, two stages of basic blocks with
//! style recalibration and SE, two stages of bottlenecks with SE and
//! criss-cross attention, global pooling and a linear head.

mod blocks;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use blocks::{BasicBlock, Block, Bottleneck, Downsample, EXPANSION};

use crate::autograd::PoolKind;
use crate::nn::{BatchNorm, Conv2d, Linear};
use crate::{Error, ParamStore, Result, Rng, Scalar, Session, Var};

/// Spatial stride of each stage. The last stage keeps its resolution so the
/// attention stage still sees a map larger than one position.
pub const STAGE_STRIDES: [usize; 4] = [1, 2, 2, 1];

/// Space-to-depth block size of the stem.
pub const STEM_BLOCK: usize = 4;

/// Declarative network description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub stage_depths: [usize; 4],
    /// Width of stage 1; each later stage doubles it.
    pub base_width: usize,
    pub num_classes: usize,
    /// 1-based indices of bottleneck stages carrying criss-cross attention.
    pub dca_stages: Vec<usize>,
    pub se_reduction: usize,
    /// `(H, W)` of the network input.
    pub input_size: (usize, usize),
    /// Whether basic blocks carry style recalibration.
    pub stylerm: bool,
    /// Number of criss-cross passes (shared parameters).
    pub dca_passes: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            stage_depths: [1, 1, 1, 1],
            base_width: 16,
            num_classes: 10,
            dca_stages: alloc::vec![4],
            se_reduction: 4,
            input_size: (32, 32),
            stylerm: true,
            dca_passes: 2,
        }
    }
}

impl NetworkSpec {
    /// The SE-only baseline: no style recalibration, no attention.
    pub fn baseline(mut self) -> Self {
        self.stylerm = false;
        self.dca_stages.clear();
        self
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Output channels of stage `stage` (0-based).
    pub fn stage_out_channels(&self, stage: usize) -> usize {
        if stage < 2 {
            self.stage_width(stage)
        } else {
            self.stage_width(stage) * EXPANSION
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % STEM_BLOCK != 0 || w % STEM_BLOCK != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be a positive multiple of {STEM_BLOCK}"
            )));
        }
        if self.stage_depths.contains(&0) {
            return Err(Error::Config(format!(
                "stage depths must be positive, got {:?}",
                self.stage_depths
            )));
        }
        if self.base_width == 0 || self.num_classes == 0 {
            return Err(Error::Config("base width and class count must be positive".into()));
        }
        if self.se_reduction == 0 || self.base_width % self.se_reduction != 0 {
            return Err(Error::Config(format!(
                "SE reduction {} must divide base width {}",
                self.se_reduction, self.base_width
            )));
        }
        if let Some(bad) = self.dca_stages.iter().find(|s| !(1..=4).contains(*s)) {
            return Err(Error::Config(format!("attention stage {bad} is not in 1..=4")));
        }
        if !(1..=2).contains(&self.dca_passes) {
            return Err(Error::Config(format!(
                "attention passes must be 1 or 2, got {}",
                self.dca_passes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub stem_conv: Conv2d,
    pub stem_bn: BatchNorm,
    pub stages: Vec<Vec<Block>>,
    pub classifier: Linear,
}

impl Network {
    /// Registers every parameter in `store` and returns the layer graph.
    pub fn build<T: Scalar>(spec: &NetworkSpec, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let s2d = 3 * STEM_BLOCK * STEM_BLOCK;
        let stem_conv = Conv2d::new(store, "stem.conv", s2d, spec.base_width, 1, 1, rng);
        let stem_bn = BatchNorm::new(store, "stem.bn", spec.base_width, 1.0);
        let mut c_in = spec.base_width;
        let mut stages = Vec::with_capacity(4);
        for (si, &depth) in spec.stage_depths.iter().enumerate() {
            let width = spec.stage_width(si);
            let mut blocks = Vec::with_capacity(depth);
            for bi in 0..depth {
                let name = format!("stage{}.block{}", si + 1, bi);
                let stride = if bi == 0 { STAGE_STRIDES[si] } else { 1 };
                let block = if si < 2 {
                    Block::Basic(BasicBlock::new(
                        store,
                        &name,
                        c_in,
                        width,
                        stride,
                        spec.stylerm,
                        spec.se_reduction,
                        rng,
                    )?)
                } else {
                    let dca = spec.dca_stages.contains(&(si + 1)).then_some(spec.dca_passes);
                    Block::Bottleneck(Bottleneck::new(
                        store,
                        &name,
                        c_in,
                        width,
                        stride,
                        dca,
                        spec.se_reduction,
                        rng,
                    )?)
                };
                blocks.push(block);
                c_in = spec.stage_out_channels(si);
            }
            stages.push(blocks);
        }
        let classifier = Linear::new(store, "classifier", c_in, spec.num_classes, true, rng);
        Ok(Network {
            spec: spec.clone(),
            stem_conv,
            stem_bn,
            stages,
            classifier,
        })
    }

    /// Builds a network and a fresh store from `seed`.
    pub fn init<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = crate::seeded_rng(seed);
        let net = Self::build(spec, &mut store, &mut rng)?;
        Ok((net, store))
    }

    pub fn stem<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = s.space_to_depth(x, STEM_BLOCK)?;
        let h = self.stem_conv.forward(s, h)?;
        let h = self.stem_bn.forward(s, h)?;
        Ok(s.relu(h))
    }

    /// `B×3×H×W` images → `B×num_classes` logits.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (h, w) = self.spec.input_size;
        match *s.shape(x) {
            [_, 3, xh, xw] if (xh, xw) == (h, w) => {}
            ref other => {
                return Err(Error::Dimension(format!(
                    "network expects B×3×{h}×{w} input, got {other:?}"
                )))
            }
        }
        let mut h = self.stem(s, x)?;
        for stage in &self.stages {
            for block in stage {
                h = block.forward(s, h)?;
            }
        }
        let pooled = s.global_pool(h, PoolKind::Mean)?;
        self.classifier.forward(s, pooled)
    }
}

/// Trainable parameter totals attributed to parts of the network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub stem: usize,
    /// Per-stage counts excluding the attention modules below.
    pub stages: [usize; 4],
    pub stylerm: usize,
    pub se: usize,
    pub dca: usize,
    pub classifier: usize,
}

/// Counts trainable scalars by name prefix (`stem.`, `stageN.`,
/// `classifier.`) and module segment (`.stylerm.`, `.se.`, `.dca.`).
pub fn count_parameters<T: Scalar>(store: &ParamStore<T>) -> ParamCount {
    let mut c = ParamCount::default();
    for (_, p) in store.iter() {
        if !p.kind.trainable() {
            continue;
        }
        let n = p.value.len();
        c.total += n;
        let name = p.name.as_str();
        if name.starts_with("stem.") {
            c.stem += n;
        } else if name.starts_with("classifier.") {
            c.classifier += n;
        } else if name.contains(".stylerm.") {
            c.stylerm += n;
        } else if name.contains(".se.") {
            c.se += n;
        } else if name.contains(".dca.") {
            c.dca += n;
        } else if let Some(stage) = name
            .strip_prefix("stage")
            .and_then(|r| r.chars().next())
            .and_then(|d| d.to_digit(10))
        {
            c.stages[stage as usize - 1] += n;
        }
    }
    c
}

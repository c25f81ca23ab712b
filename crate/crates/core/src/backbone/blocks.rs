use alloc::format;

use crate::attention::{Dca, SqueezeExcite, StyleRm};
use crate::nn::{BatchNorm, Conv2d};
use crate::{ParamStore, Result, Rng, Scalar, Session, Var};

/// Projection on the identity path when a block changes shape: optional blur
/// downsampling, then 1×1 conv and batch norm.
#[derive(Debug, Clone)]
pub struct Downsample {
    pub blur: bool,
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl Downsample {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        blur: bool,
        rng: &mut Rng,
    ) -> Self {
        Downsample {
            blur,
            conv: Conv2d::new(store, &format!("{name}.conv"), c_in, c_out, 1, 1, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), c_out, 1.0),
        }
    }
}

fn identity<T: Scalar>(s: &mut Session<'_, T>, x: Var, stride: usize, down: &Option<Downsample>) -> Result<Var> {
    match down {
        None if stride == 2 => s.blur_pool(x),
        None => Ok(x),
        Some(d) => {
            let x = if d.blur { s.blur_pool(x)? } else { x };
            let x = d.conv.forward(s, x)?;
            d.bn.forward(s, x)
        }
    }
}

/// Two 3×3 convolutions followed by optional style recalibration and SE.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub stride: usize,
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub stylerm: Option<StyleRm>,
    pub se: SqueezeExcite,
    pub downsample: Option<Downsample>,
}

impl BasicBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        width: usize,
        stride: usize,
        stylerm: bool,
        se_reduction: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(BasicBlock {
            stride,
            conv1: Conv2d::new(store, &format!("{name}.conv1"), c_in, width, 3, 1, rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), width, 1.0),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), width, width, 3, 1, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), width, 0.0),
            stylerm: stylerm.then(|| StyleRm::new(store, &format!("{name}.stylerm"), width, rng)),
            se: SqueezeExcite::new(store, &format!("{name}.se"), width, se_reduction, rng)?,
            downsample: (c_in != width)
                .then(|| Downsample::new(store, &format!("{name}.downsample"), c_in, width, stride == 2, rng)),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(s, x)?;
        let h = self.bn1.forward(s, h)?;
        let mut h = s.relu(h);
        if self.stride == 2 {
            h = s.blur_pool(h)?;
        }
        let h = self.conv2.forward(s, h)?;
        let mut h = self.bn2.forward(s, h)?;
        if let Some(srm) = &self.stylerm {
            h = srm.forward(s, h)?;
        }
        let h = self.se.forward(s, h)?;
        let id = identity(s, x, self.stride, &self.downsample)?;
        let sum = s.add(h, id)?;
        Ok(s.relu(sum))
    }
}

/// 1×1 → 3×3 → 1×1 bottleneck with SE and optional criss-cross attention on
/// the inner width, expanding to `4·width` channels.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub stride: usize,
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub se: SqueezeExcite,
    pub dca: Option<Dca>,
    pub conv3: Conv2d,
    pub bn3: BatchNorm,
    pub downsample: Option<Downsample>,
}

pub const EXPANSION: usize = 4;

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        width: usize,
        stride: usize,
        dca_passes: Option<usize>,
        se_reduction: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let c_out = width * EXPANSION;
        let dca = match dca_passes {
            Some(p) => Some(Dca::new(store, &format!("{name}.dca"), width, p, rng)?),
            None => None,
        };
        Ok(Bottleneck {
            stride,
            conv1: Conv2d::new(store, &format!("{name}.conv1"), c_in, width, 1, 1, rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), width, 1.0),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), width, width, 3, 1, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), width, 1.0),
            se: SqueezeExcite::new(store, &format!("{name}.se"), width, se_reduction, rng)?,
            dca,
            conv3: Conv2d::new(store, &format!("{name}.conv3"), width, c_out, 1, 1, rng),
            bn3: BatchNorm::new(store, &format!("{name}.bn3"), c_out, 0.0),
            downsample: (c_in != c_out || stride == 2)
                .then(|| Downsample::new(store, &format!("{name}.downsample"), c_in, c_out, stride == 2, rng)),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(s, x)?;
        let h = self.bn1.forward(s, h)?;
        let h = s.relu(h);
        let h = self.conv2.forward(s, h)?;
        let h = self.bn2.forward(s, h)?;
        let mut h = s.relu(h);
        if self.stride == 2 {
            h = s.blur_pool(h)?;
        }
        let mut h = self.se.forward(s, h)?;
        if let Some(dca) = &self.dca {
            h = dca.forward(s, h)?;
        }
        let h = self.conv3.forward(s, h)?;
        let h = self.bn3.forward(s, h)?;
        let id = identity(s, x, self.stride, &self.downsample)?;
        let sum = s.add(h, id)?;
        Ok(s.relu(sum))
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    Basic(BasicBlock),
    Bottleneck(Bottleneck),
}

impl Block {
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        match self {
            Block::Basic(b) => b.forward(s, x),
            Block::Bottleneck(b) => b.forward(s, x),
        }
    }
}

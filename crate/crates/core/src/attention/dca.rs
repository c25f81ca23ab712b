use alloc::format;

use crate::init::he_normal;
use crate::{Error, ParamId, ParamKind, ParamStore, Result, Rng, Scalar, Session, Tensor, Var};

/// Largest map (in positions) the dense non-local baseline accepts.
pub const NONLOCAL_MAX_POSITIONS: usize = 4096;

/// One depthwise-separable projection: per-channel scale then 1×1 mixing.
#[derive(Debug, Clone)]
pub struct Projection {
    pub depth: ParamId,
    pub point: ParamId,
}

impl Projection {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        Projection {
            depth: store.add(
                format!("{name}.depth"),
                ParamKind::Weight,
                Tensor::ones(&[c_in, 1, 1, 1]),
            ),
            point: store.add(
                format!("{name}.point"),
                ParamKind::Weight,
                he_normal(&[c_out, c_in, 1, 1], c_in, rng),
            ),
        }
    }

    fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let d = s.param(self.depth);
        let p = s.param(self.point);
        s.depthwise_separable(x, d, p)
    }
}

/// Recurrent criss-cross attention with one parameter set shared by every
/// pass.
#[derive(Debug, Clone)]
pub struct Dca {
    pub channels: usize,
    pub reduced: usize,
    pub passes: usize,
    pub query: Projection,
    pub key: Projection,
    pub value: Projection,
}

impl Dca {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        passes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if passes == 0 {
            return Err(Error::Config("attention needs at least one pass".into()));
        }
        let reduced = Self::reduced_channels(channels);
        Ok(Dca {
            channels,
            reduced,
            passes,
            query: Projection::new(store, &format!("{name}.query"), channels, reduced, rng),
            key: Projection::new(store, &format!("{name}.key"), channels, reduced, rng),
            value: Projection::new(store, &format!("{name}.value"), channels, channels, rng),
        })
    }

    /// Query/key width `max(1, C/8)`.
    pub fn reduced_channels(channels: usize) -> usize {
        (channels / 8).max(1)
    }

    /// `3C + 2·C·C' + C²`, whatever the number of passes.
    pub fn parameter_count(channels: usize) -> usize {
        let r = Self::reduced_channels(channels);
        3 * channels + 2 * channels * r + channels * channels
    }

    /// One criss-cross pass with residual: `R + Σ A·V` over row and column.
    pub fn cca_pass<T: Scalar>(&self, s: &mut Session<'_, T>, r: Var) -> Result<Var> {
        let q = self.query.forward(s, r)?;
        let k = self.key.forward(s, r)?;
        let v = self.value.forward(s, r)?;
        s.criss_cross(q, k, v, r)
    }

    /// `passes` chained criss-cross passes.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, r: Var) -> Result<Var> {
        let mut x = r;
        for _ in 0..self.passes {
            x = self.cca_pass(s, x)?;
        }
        Ok(x)
    }

    /// Dense non-local attention using the same projections, optionally
    /// masked (`mask[query·HW + key]`).
    pub fn nonlocal_forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        r: Var,
        mask: Option<alloc::vec::Vec<bool>>,
    ) -> Result<Var> {
        let shape = s.shape(r);
        let positions = shape.get(2).copied().unwrap_or(1) * shape.get(3).copied().unwrap_or(1);
        if positions > NONLOCAL_MAX_POSITIONS {
            return Err(Error::Resource(format!(
                "dense attention over {positions} positions exceeds the {NONLOCAL_MAX_POSITIONS} guard"
            )));
        }
        let q = self.query.forward(s, r)?;
        let k = self.key.forward(s, r)?;
        let v = self.value.forward(s, r)?;
        s.dense_attention(q, k, v, r, mask)
    }
}

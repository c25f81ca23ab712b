//! Criss-cross and dense (non-local) spatial attention.
//!
//! Both share one kernel parameterised by the set of key positions each query
//! position may attend to. Queries and keys are `B×C'×H×W`, values and the
//! residual input are `B×C×H×W`. Attention weights are kept as
//! `B×slots×H×W`, where `slots = H+W-1` for criss-cross and `H·W` for dense.

use alloc::vec;
use alloc::vec::Vec;

use super::Counters;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnDims {
    pub batch: usize,
    pub qk_channels: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl AttnDims {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }
}

/// Which key positions a query position attends to.
#[derive(Debug, Clone, Copy)]
pub enum Pattern<'a> {
    /// The `H+W-1` positions sharing the query's row or column, the query
    /// itself counted once.
    CrissCross,
    /// Every position, optionally restricted by an `HW×HW` keep-mask indexed
    /// `[query·HW + key]`.
    Dense { mask: Option<&'a [bool]> },
}

/// Position of slot `slot` in the criss-cross set of `(i, j)`.
///
/// Slots `0..H` walk the column `(0..H, j)`; slots `H..H+W-1` walk the row
/// `(i, 0..W)` skipping `j`.
#[inline]
pub fn criss_cross_position(i: usize, j: usize, slot: usize, height: usize) -> (usize, usize) {
    if slot < height {
        (slot, j)
    } else {
        let w = slot - height;
        (i, if w < j { w } else { w + 1 })
    }
}

impl Pattern<'_> {
    pub fn slots(&self, height: usize, width: usize) -> usize {
        match self {
            Pattern::CrissCross => height + width - 1,
            Pattern::Dense { .. } => height * width,
        }
    }

    /// Fills `out` with `(slot, key position)` pairs for query `u`.
    fn neighbors(&self, u: usize, height: usize, width: usize, out: &mut Vec<(usize, usize)>) {
        out.clear();
        match self {
            Pattern::CrissCross => {
                let (i, j) = (u / width, u % width);
                for slot in 0..height + width - 1 {
                    let (h, w) = criss_cross_position(i, j, slot, height);
                    out.push((slot, h * width + w));
                }
            }
            Pattern::Dense { mask } => {
                let hw = height * width;
                for key in 0..hw {
                    if mask.is_none_or(|m| m[u * hw + key]) {
                        out.push((key, key));
                    }
                }
            }
        }
    }
}

/// Returns `(output, attention)`; `output = r + Σ_slot A·V`.
#[allow(clippy::too_many_arguments)]
pub fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    r: &[T],
    d: &AttnDims,
    pattern: Pattern<'_>,
    counters: &mut Counters,
) -> (Vec<T>, Vec<T>) {
    let hw = d.positions();
    let slots = pattern.slots(d.height, d.width);
    let mut out = r.to_vec();
    let mut attn = vec![T::zero(); d.batch * slots * hw];
    let mut nbrs = Vec::with_capacity(slots);
    let mut scores = vec![T::zero(); slots];
    for b in 0..d.batch {
        let qb = &q[b * d.qk_channels * hw..(b + 1) * d.qk_channels * hw];
        let kb = &k[b * d.qk_channels * hw..(b + 1) * d.qk_channels * hw];
        let vb = &v[b * d.channels * hw..(b + 1) * d.channels * hw];
        for u in 0..hw {
            pattern.neighbors(u, d.height, d.width, &mut nbrs);
            let n = nbrs.len();
            scores[..n].fill(T::zero());
            for c in 0..d.qk_channels {
                let qv = qb[c * hw + u];
                let krow = &kb[c * hw..(c + 1) * hw];
                for (s, &(_, pos)) in scores[..n].iter_mut().zip(&nbrs) {
                    *s = *s + qv * krow[pos];
                }
            }
            counters.score_elements += n as u64;
            counters.score_macs += (n * d.qk_channels) as u64;

            let m = scores[..n].iter().fold(T::neg_infinity(), |a, &s| a.max(s));
            let mut z = T::zero();
            for s in &mut scores[..n] {
                *s = (*s - m).exp();
                z = z + *s;
            }
            for (s, &(slot, _)) in scores[..n].iter_mut().zip(&nbrs) {
                *s = *s / z;
                attn[(b * slots + slot) * hw + u] = *s;
            }

            for c in 0..d.channels {
                let vrow = &vb[c * hw..(c + 1) * hw];
                let mut acc = T::zero();
                for (&a, &(_, pos)) in scores[..n].iter().zip(&nbrs) {
                    acc = acc + a * vrow[pos];
                }
                let o = (b * d.channels + c) * hw + u;
                out[o] = out[o] + acc;
            }
            counters.aggregate_macs += (n * d.channels) as u64;
        }
    }
    (out, attn)
}

/// Gradient buffers for [`attention_backward`]; each is accumulated into.
pub struct AttnGrads<'g, T> {
    pub q: Option<&'g mut [T]>,
    pub k: Option<&'g mut [T]>,
    pub v: Option<&'g mut [T]>,
    pub r: Option<&'g mut [T]>,
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    attn: &[T],
    d: &AttnDims,
    pattern: Pattern<'_>,
    grad: &[T],
    mut g: AttnGrads<'_, T>,
) {
    let hw = d.positions();
    let slots = pattern.slots(d.height, d.width);
    if let Some(gr) = g.r.as_deref_mut() {
        for (a, &b) in gr.iter_mut().zip(grad) {
            *a = *a + b;
        }
    }
    let mut nbrs = Vec::with_capacity(slots);
    let mut ga = vec![T::zero(); slots];
    for b in 0..d.batch {
        let vb = &v[b * d.channels * hw..(b + 1) * d.channels * hw];
        let gb = &grad[b * d.channels * hw..(b + 1) * d.channels * hw];
        for u in 0..hw {
            pattern.neighbors(u, d.height, d.width, &mut nbrs);
            let n = nbrs.len();
            let a_at = |slot: usize| attn[(b * slots + slot) * hw + u];
            ga[..n].fill(T::zero());
            for c in 0..d.channels {
                let go = gb[c * hw + u];
                if go == T::zero() {
                    continue;
                }
                let vrow = &vb[c * hw..(c + 1) * hw];
                for (gs, &(_, pos)) in ga[..n].iter_mut().zip(&nbrs) {
                    *gs = *gs + go * vrow[pos];
                }
                if let Some(gv) = g.v.as_deref_mut() {
                    let base = (b * d.channels + c) * hw;
                    for &(slot, pos) in &nbrs {
                        gv[base + pos] = gv[base + pos] + a_at(slot) * go;
                    }
                }
            }
            if g.q.is_none() && g.k.is_none() {
                continue;
            }
            let mut dot = T::zero();
            for (&gs, &(slot, _)) in ga[..n].iter().zip(&nbrs) {
                dot = dot + gs * a_at(slot);
            }
            for (gs, &(slot, _)) in ga[..n].iter_mut().zip(&nbrs) {
                *gs = a_at(slot) * (*gs - dot);
            }
            for c in 0..d.qk_channels {
                let base = (b * d.qk_channels + c) * hw;
                if let Some(gq) = g.q.as_deref_mut() {
                    let mut acc = T::zero();
                    for (&gs, &(_, pos)) in ga[..n].iter().zip(&nbrs) {
                        acc = acc + gs * k[base + pos];
                    }
                    gq[base + u] = gq[base + u] + acc;
                }
                if let Some(gk) = g.k.as_deref_mut() {
                    let qv = q[base + u];
                    for (&gs, &(_, pos)) in ga[..n].iter().zip(&nbrs) {
                        gk[base + pos] = gk[base + pos] + gs * qv;
                    }
                }
            }
        }
    }
}

//! Slice-level forward and backward kernels.
//!
//! Kernels take raw row-major buffers plus extents and never allocate their
//! outputs implicitly unless they return a `Vec`. The tape in
//! [`crate::autograd`] is the only caller that needs shape checking.

pub mod attention;
pub mod conv;
pub mod gemm;
pub mod layout;
pub mod norm;

/// Work counters incremented from inside the attention kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Attention scores materialised (one per query/key pair kept).
    pub score_elements: u64,
    /// Multiply-accumulates spent on query·key affinities.
    pub score_macs: u64,
    /// Multiply-accumulates spent aggregating values with attention weights.
    pub aggregate_macs: u64,
}

impl Counters {
    pub fn merge(&mut self, other: &Counters) {
        self.score_elements += other.score_elements;
        self.score_macs += other.score_macs;
        self.aggregate_macs += other.aggregate_macs;
    }
}

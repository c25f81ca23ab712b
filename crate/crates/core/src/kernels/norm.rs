//! Batch normalisation, global pooling and softmax kernels.

use alloc::vec;
use alloc::vec::Vec;

use crate::Scalar;

/// Variance floor shared by batch normalisation and std pooling.
pub const EPS: f64 = 1e-5;

/// Saved state of a train-mode batch norm forward.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Population (biased) variance used for normalisation.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalises `(B, C, S)` data per channel with batch statistics.
///
/// Returns `(y, x_hat, stats)`.
pub fn batch_norm_train<T: Scalar>(
    x: &[T],
    (b_n, c_n, s_n): (usize, usize, usize),
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>, BatchStats<T>) {
    let n = T::of((b_n * s_n) as f64);
    let eps = T::of(EPS);
    let mut mean = vec![T::zero(); c_n];
    let mut var = vec![T::zero(); c_n];
    for c in 0..c_n {
        let mut s = T::zero();
        for b in 0..b_n {
            let off = (b * c_n + c) * s_n;
            s = s + x[off..off + s_n].iter().copied().sum::<T>();
        }
        let mu = s / n;
        let mut ss = T::zero();
        for b in 0..b_n {
            let off = (b * c_n + c) * s_n;
            for &v in &x[off..off + s_n] {
                ss = ss + (v - mu) * (v - mu);
            }
        }
        mean[c] = mu;
        var[c] = ss / n;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for b in 0..b_n {
        for c in 0..c_n {
            let off = (b * c_n + c) * s_n;
            for i in off..off + s_n {
                let h = (x[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat, BatchStats { mean, var, inv_std })
}

/// Normalises with fixed running statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &[T],
    (b_n, c_n, s_n): (usize, usize, usize),
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let eps = T::of(EPS);
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for b in 0..b_n {
        for c in 0..c_n {
            let off = (b * c_n + c) * s_n;
            for i in off..off + s_n {
                let h = (x[i] - running_mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat, inv_std)
}

/// Gradients of batch norm. With `batch_stats` the normalisation statistics
/// are treated as functions of `x` (train mode); otherwise they are constants.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_backward<T: Scalar>(
    grad: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    (b_n, c_n, s_n): (usize, usize, usize),
    batch_stats: bool,
    grad_x: Option<&mut [T]>,
    grad_gamma: Option<&mut [T]>,
    grad_beta: Option<&mut [T]>,
) {
    let mut sum_g = vec![T::zero(); c_n];
    let mut sum_gx = vec![T::zero(); c_n];
    for b in 0..b_n {
        for c in 0..c_n {
            let off = (b * c_n + c) * s_n;
            for i in off..off + s_n {
                sum_g[c] = sum_g[c] + grad[i];
                sum_gx[c] = sum_gx[c] + grad[i] * xhat[i];
            }
        }
    }
    if let Some(gg) = grad_gamma {
        for c in 0..c_n {
            gg[c] = gg[c] + sum_gx[c];
        }
    }
    if let Some(gb) = grad_beta {
        for c in 0..c_n {
            gb[c] = gb[c] + sum_g[c];
        }
    }
    if let Some(gx) = grad_x {
        let n = T::of((b_n * s_n) as f64);
        for b in 0..b_n {
            for c in 0..c_n {
                let off = (b * c_n + c) * s_n;
                let scale = gamma[c] * inv_std[c];
                for i in off..off + s_n {
                    let d = if batch_stats {
                        scale * (grad[i] - sum_g[c] / n - xhat[i] * sum_gx[c] / n)
                    } else {
                        scale * grad[i]
                    };
                    gx[i] = gx[i] + d;
                }
            }
        }
    }
}

/// Per-(batch, channel) spatial mean of `(B·C, S)` rows.
pub fn global_mean<T: Scalar>(x: &[T], rows: usize, s_n: usize) -> Vec<T> {
    let n = T::of(s_n as f64);
    (0..rows)
        .map(|r| x[r * s_n..(r + 1) * s_n].iter().copied().sum::<T>() / n)
        .collect()
}

/// Per-row population standard deviation `sqrt(var + EPS)`.
/// Returns `(std, mean)`.
pub fn global_std<T: Scalar>(x: &[T], rows: usize, s_n: usize) -> (Vec<T>, Vec<T>) {
    let mean = global_mean(x, rows, s_n);
    let n = T::of(s_n as f64);
    let eps = T::of(EPS);
    let std = (0..rows)
        .map(|r| {
            let mu = mean[r];
            let ss: T = x[r * s_n..(r + 1) * s_n].iter().map(|&v| (v - mu) * (v - mu)).sum();
            (ss / n + eps).sqrt()
        })
        .collect();
    (std, mean)
}

/// Softmax over the middle extent of an `(outer, axis, inner)` view.
pub fn softmax<T: Scalar>(x: &[T], outer: usize, axis: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * axis + a) * inner + i;
            let mut m = T::neg_infinity();
            for a in 0..axis {
                m = m.max(x[at(a)]);
            }
            let mut s = T::zero();
            for a in 0..axis {
                let e = (x[at(a)] - m).exp();
                y[at(a)] = e;
                s = s + e;
            }
            for a in 0..axis {
                y[at(a)] = y[at(a)] / s;
            }
        }
    }
    y
}

pub fn softmax_backward<T: Scalar>(y: &[T], grad: &[T], outer: usize, axis: usize, inner: usize, grad_x: &mut [T]) {
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * axis + a) * inner + i;
            let mut dot = T::zero();
            for a in 0..axis {
                dot = dot + grad[at(a)] * y[at(a)];
            }
            for a in 0..axis {
                let k = at(a);
                grad_x[k] = grad_x[k] + y[k] * (grad[k] - dot);
            }
        }
    }
}

/// Mean softmax cross-entropy. Returns `(loss, probabilities)`.
pub fn cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> (T, Vec<T>) {
    let b_n = labels.len();
    let probs = softmax(logits, b_n, classes, 1);
    let mut loss = T::zero();
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        loss = loss + (lse - row[label]);
    }
    (loss / T::of(b_n as f64), probs)
}

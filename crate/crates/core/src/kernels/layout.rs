//! Space-to-depth rearrangement and anti-aliased downsampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::Scalar;

/// 1-D binomial taps; the 2-D kernel is their outer product (sum 16/16).
pub const BLUR_TAPS: [f64; 3] = [0.25, 0.5, 0.25];

/// `B×C×H×W → B×(b²C)×(H/b)×(W/b)`; output channel `(bi·b + bj)·C + c`.
pub fn space_to_depth<T: Scalar>(x: &[T], (b_n, c_n, h, w): (usize, usize, usize, usize), block: usize) -> Vec<T> {
    let (ho, wo) = (h / block, w / block);
    let co = c_n * block * block;
    let mut out = vec![T::zero(); x.len()];
    for b in 0..b_n {
        for c in 0..c_n {
            for i in 0..h {
                for j in 0..w {
                    let oc = ((i % block) * block + j % block) * c_n + c;
                    out[((b * co + oc) * ho + i / block) * wo + j / block] = x[((b * c_n + c) * h + i) * w + j];
                }
            }
        }
    }
    out
}

/// Exact inverse of [`space_to_depth`]; dims are those of the original input.
pub fn depth_to_space<T: Scalar>(y: &[T], (b_n, c_n, h, w): (usize, usize, usize, usize), block: usize) -> Vec<T> {
    let (ho, wo) = (h / block, w / block);
    let co = c_n * block * block;
    let mut out = vec![T::zero(); y.len()];
    for b in 0..b_n {
        for c in 0..c_n {
            for i in 0..h {
                for j in 0..w {
                    let oc = ((i % block) * block + j % block) * c_n + c;
                    out[((b * c_n + c) * h + i) * w + j] = y[((b * co + oc) * ho + i / block) * wo + j / block];
                }
            }
        }
    }
    out
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

pub fn blur_out_extent(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

/// Fixed binomial low-pass filter with reflect padding, then stride 2.
///
/// Each tap pair is summed before the centre tap is doubled and the 1/16
/// scale is applied last, so a constant map is reproduced exactly.
pub fn blur_pool<T: Scalar>(x: &[T], (b_n, c_n, h, w): (usize, usize, usize, usize)) -> Vec<T> {
    let (ho, wo) = blur_out_extent(h, w);
    let scale = T::of(1.0 / 16.0);
    let mut out = vec![T::zero(); b_n * c_n * ho * wo];
    for p in 0..b_n * c_n {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for oi in 0..ho {
            let rows = [-1isize, 0, 1].map(|d| reflect(2 * oi as isize + d, h));
            for oj in 0..wo {
                let [c0, c1, c2] = [-1isize, 0, 1].map(|d| reflect(2 * oj as isize + d, w));
                let line = |r: usize| {
                    let row = &src[r * w..(r + 1) * w];
                    (row[c0] + row[c2]) + (row[c1] + row[c1])
                };
                let (top, mid, bot) = (line(rows[0]), line(rows[1]), line(rows[2]));
                dst[oi * wo + oj] = ((top + bot) + (mid + mid)) * scale;
            }
        }
    }
    out
}

pub fn blur_pool_backward<T: Scalar>(grad: &[T], (b_n, c_n, h, w): (usize, usize, usize, usize), grad_x: &mut [T]) {
    let (ho, wo) = blur_out_extent(h, w);
    let taps = BLUR_TAPS.map(T::of);
    for p in 0..b_n * c_n {
        let g = &grad[p * ho * wo..(p + 1) * ho * wo];
        let gx = &mut grad_x[p * h * w..(p + 1) * h * w];
        for oi in 0..ho {
            for oj in 0..wo {
                let gv = g[oi * wo + oj];
                for (di, &ti) in taps.iter().enumerate() {
                    let r = reflect(2 * oi as isize + di as isize - 1, h);
                    for (dj, &tj) in taps.iter().enumerate() {
                        let c = reflect(2 * oj as isize + dj as isize - 1, w);
                        gx[r * w + c] = gx[r * w + c] + ti * tj * gv;
                    }
                }
            }
        }
    }
}

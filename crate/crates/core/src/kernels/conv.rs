//! Dense and depthwise 2-D convolution (cross-correlation convention).

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::dim_err;
use crate::{Result, Scalar};

/// Geometry shared by the dense and depthwise kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_extent(&self) -> Result<(usize, usize)> {
        let (h, w, k, s, p) = (self.height, self.width, self.kernel, self.stride, self.pad);
        if k == 0 || s == 0 {
            return Err(dim_err!("kernel and stride must be positive"));
        }
        if h + 2 * p < k || w + 2 * p < k {
            return Err(dim_err!(
                "output extent < 1: input {}x{}, kernel {}, pad {}",
                h,
                w,
                k,
                p
            ));
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Unfolds input patches into a `[C·k·k] × [B·H'·W']` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, ho: usize, wo: usize, cols: &mut [T]) {
    let (b_n, c_n, h, w, k) = (g.batch, g.in_channels, g.height, g.width, g.kernel);
    let span = b_n * ho * wo;
    for c in 0..c_n {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * span..(row + 1) * span];
                for b in 0..b_n {
                    let plane = &x[(b * c_n + c) * h * w..(b * c_n + c + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        let out = &mut dst[(b * ho + oh) * wo..(b * ho + oh + 1) * wo];
                        if ih < 0 || ih >= h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                        for (ow, o) in out.iter_mut().enumerate() {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            *o = if iw < 0 || iw >= w as isize {
                                T::zero()
                            } else {
                                src[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back onto the input grid, accumulating overlaps.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, ho: usize, wo: usize, x: &mut [T]) {
    let (b_n, c_n, h, w, k) = (g.batch, g.in_channels, g.height, g.width, g.kernel);
    let span = b_n * ho * wo;
    for c in 0..c_n {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * span..(row + 1) * span];
                for b in 0..b_n {
                    let base = (b * c_n + c) * h * w;
                    for oh in 0..ho {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let row_in = base + ih as usize * w;
                        let line = &src[(b * ho + oh) * wo..(b * ho + oh + 1) * wo];
                        for (ow, &v) in line.iter().enumerate() {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < w as isize {
                                x[row_in + iw as usize] = x[row_in + iw as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dense convolution; `w` is `O×C×k×k`. Returns `(output, H', W')`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    out_channels: usize,
    g: &ConvGeom,
) -> Result<(Vec<T>, usize, usize)> {
    let (ho, wo) = g.out_extent()?;
    let span = g.batch * ho * wo;
    let kk = g.patch_len();
    let mut cols = vec![T::zero(); kk * span];
    im2col(x, g, ho, wo, &mut cols);
    let mut tmp = vec![T::zero(); out_channels * span];
    gemm_nn(out_channels, kk, span, w, &cols, &mut tmp);
    let mut out = vec![T::zero(); g.batch * out_channels * ho * wo];
    let plane = ho * wo;
    for o in 0..out_channels {
        for b in 0..g.batch {
            out[(b * out_channels + o) * plane..(b * out_channels + o + 1) * plane]
                .copy_from_slice(&tmp[o * span + b * plane..o * span + (b + 1) * plane]);
        }
    }
    Ok((out, ho, wo))
}

/// Accumulates input and weight gradients of [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    out_channels: usize,
    g: &ConvGeom,
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: Option<&mut [T]>,
) -> Result<()> {
    let (ho, wo) = g.out_extent()?;
    let span = g.batch * ho * wo;
    let plane = ho * wo;
    let kk = g.patch_len();
    let mut gtmp = vec![T::zero(); out_channels * span];
    for o in 0..out_channels {
        for b in 0..g.batch {
            gtmp[o * span + b * plane..o * span + (b + 1) * plane]
                .copy_from_slice(&grad_out[(b * out_channels + o) * plane..(b * out_channels + o + 1) * plane]);
        }
    }
    if let Some(gw) = grad_w {
        let mut cols = vec![T::zero(); kk * span];
        im2col(x, g, ho, wo, &mut cols);
        gemm_nt(out_channels, span, kk, &gtmp, &cols, gw);
    }
    if let Some(gx) = grad_x {
        let mut gcols = vec![T::zero(); kk * span];
        gemm_tn(kk, out_channels, span, w, &gtmp, &mut gcols);
        col2im(&gcols, g, ho, wo, gx);
    }
    Ok(())
}

/// Depthwise convolution; `w` holds one `k×k` kernel per channel.
pub fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom) -> Result<(Vec<T>, usize, usize)> {
    let (ho, wo) = g.out_extent()?;
    let (c_n, h, wd, k) = (g.in_channels, g.height, g.width, g.kernel);
    let mut out = vec![T::zero(); g.batch * c_n * ho * wo];
    for b in 0..g.batch {
        for c in 0..c_n {
            let src = &x[(b * c_n + c) * h * wd..(b * c_n + c + 1) * h * wd];
            let ker = &w[c * k * k..(c + 1) * k * k];
            let dst = &mut out[(b * c_n + c) * ho * wo..(b * c_n + c + 1) * ho * wo];
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = T::zero();
                    for ki in 0..k {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < wd as isize {
                                acc = acc + ker[ki * k + kj] * src[ih as usize * wd + iw as usize];
                            }
                        }
                    }
                    dst[oh * wo + ow] = acc;
                }
            }
        }
    }
    Ok((out, ho, wo))
}

pub fn depthwise_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    g: &ConvGeom,
    grad_out: &[T],
    mut grad_x: Option<&mut [T]>,
    mut grad_w: Option<&mut [T]>,
) -> Result<()> {
    let (ho, wo) = g.out_extent()?;
    let (c_n, h, wd, k) = (g.in_channels, g.height, g.width, g.kernel);
    for b in 0..g.batch {
        for c in 0..c_n {
            let xo = (b * c_n + c) * h * wd;
            let go = (b * c_n + c) * ho * wo;
            for oh in 0..ho {
                for ow in 0..wo {
                    let gv = grad_out[go + oh * wo + ow];
                    if gv == T::zero() {
                        continue;
                    }
                    for ki in 0..k {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw < 0 || iw >= wd as isize {
                                continue;
                            }
                            let xi = xo + ih as usize * wd + iw as usize;
                            let wi = c * k * k + ki * k + kj;
                            if let Some(gx) = grad_x.as_deref_mut() {
                                gx[xi] = gx[xi] + w[wi] * gv;
                            }
                            if let Some(gw) = grad_w.as_deref_mut() {
                                gw[wi] = gw[wi] + x[xi] * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    // Direct six-loop oracle, independent of im2col.
    fn naive_conv(x: &[f64], w: &[f64], o_n: usize, g: &ConvGeom) -> Vec<f64> {
        let (ho, wo) = g.out_extent().unwrap();
        let (c_n, h, wd, k) = (g.in_channels, g.height, g.width, g.kernel);
        let mut out = vec![0.0; g.batch * o_n * ho * wo];
        for b in 0..g.batch {
            for o in 0..o_n {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut s = 0.0;
                        for c in 0..c_n {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                                    let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                                        s += w[((o * c_n + c) * k + ki) * k + kj]
                                            * x[((b * c_n + c) * h + ih as usize) * wd + iw as usize];
                                    }
                                }
                            }
                        }
                        out[((b * o_n + o) * ho + oh) * wo + ow] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn dense_matches_loop_oracle() {
        let mut rng = crate::seeded_rng(5);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 1)] {
            let g = ConvGeom {
                batch: 2,
                in_channels: 2,
                height: 5,
                width: 5,
                kernel: 3,
                stride,
                pad,
            };
            let x: Vec<f64> = (0..2 * 2 * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (out, _, _) = conv2d_forward(&x, &w, 3, &g).unwrap();
            let expect = naive_conv(&x, &w, 3, &g);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_extent_below_one_is_rejected() {
        let g = ConvGeom {
            batch: 1,
            in_channels: 1,
            height: 2,
            width: 2,
            kernel: 3,
            stride: 1,
            pad: 0,
        };
        assert!(g.out_extent().is_err());
    }

    #[test]
    fn depthwise_matches_per_channel_dense() {
        let mut rng = crate::seeded_rng(6);
        let g = ConvGeom {
            batch: 2,
            in_channels: 3,
            height: 4,
            width: 5,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let x: Vec<f64> = (0..2 * 3 * 20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..3 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (out, _, _) = depthwise_forward(&x, &w, &g).unwrap();
        // dense kernel that is zero off the channel diagonal
        let mut dense = vec![0.0; 3 * 3 * 9];
        for c in 0..3 {
            dense[(c * 3 + c) * 9..(c * 3 + c + 1) * 9].copy_from_slice(&w[c * 9..(c + 1) * 9]);
        }
        let expect = naive_conv(&x, &dense, 3, &g);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

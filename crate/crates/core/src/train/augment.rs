use alloc::format;

use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Rng, Scalar, Tensor};

/// Fraction of the image area kept by a training crop.
pub const CROP_SCALE: (f64, f64) = (0.7, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentMode {
    Train,
    Eval,
}

fn image_dims<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] if h >= 2 && w >= 2 => Ok((c, h, w)),
        ref s => Err(Error::Data(format!("cannot augment image of shape {s:?}"))),
    }
}

/// Bilinear resampling of the window `(y0, x0, h, w)` (in source pixels) to
/// `out_h×out_w`, sampling at pixel centres with edge clamping.
pub fn resample<T: Scalar>(
    img: &Tensor<T>,
    (y0, x0, h, w): (f64, f64, f64, f64),
    (out_h, out_w): (usize, usize),
    flip: bool,
) -> Result<Tensor<T>> {
    let (c, ih, iw) = image_dims(img)?;
    let src = img.data();
    let mut out = alloc::vec![T::zero(); c * out_h * out_w];
    let axis = |o: usize, n_out: usize, start: f64, len: f64, n_in: usize| {
        let p = (start + (o as f64 + 0.5) * len / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = Float::floor(p) as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, p - lo as f64)
    };
    for oy in 0..out_h {
        let (ya, yb, fy) = axis(oy, out_h, y0, h, ih);
        for ox in 0..out_w {
            let (xa, xb, fx) = axis(ox, out_w, x0, w, iw);
            let dst_x = if flip { out_w - 1 - ox } else { ox };
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(ch * ih + y) * iw + x].as_f64();
                let top = at(ya, xa) * (1.0 - fx) + at(ya, xb) * fx;
                let bot = at(yb, xa) * (1.0 - fx) + at(yb, xb) * fx;
                out[(ch * out_h + oy) * out_w + dst_x] = T::of(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Random resized crop (area fraction in [`CROP_SCALE`], source aspect kept)
/// followed by a horizontal flip with probability 1/2 when `flip` is set.
pub fn augment_train<T: Scalar>(
    img: &Tensor<T>,
    target: (usize, usize),
    flip: bool,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let (_, ih, iw) = image_dims(img)?;
    let scale = rng.random_range(CROP_SCALE.0..=CROP_SCALE.1);
    let side = Float::sqrt(scale);
    let (ch, cw) = (ih as f64 * side, iw as f64 * side);
    let y0 = rng.random_range(0.0..=(ih as f64 - ch));
    let x0 = rng.random_range(0.0..=(iw as f64 - cw));
    let mirrored = flip && rng.random_bool(0.5);
    resample(img, (y0, x0, ch, cw), target, mirrored)
}

/// Resize so the shorter side matches the target, then centre crop.
pub fn augment_eval<T: Scalar>(img: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let (_, ih, iw) = image_dims(img)?;
    if (ih, iw) == target {
        return Ok(img.clone());
    }
    let (th, tw) = (target.0 as f64, target.1 as f64);
    let s = (th / ih as f64).max(tw / iw as f64);
    let (ch, cw) = (th / s, tw / s);
    let y0 = (ih as f64 - ch) / 2.0;
    let x0 = (iw as f64 - cw) / 2.0;
    resample(img, (y0, x0, ch, cw), target, false)
}

pub fn augment_sample<T: Scalar>(
    img: &Tensor<T>,
    mode: AugmentMode,
    target: (usize, usize),
    flip: bool,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    match mode {
        AugmentMode::Train => augment_train(img, target, flip, rng),
        AugmentMode::Eval => augment_eval(img, target),
    }
}

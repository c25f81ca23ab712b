//! In-memory samples, stratified splitting and the procedural texture
//! generator.
//!
//! The generator draws every sample with one of two silhouettes (disk or
//! square) chosen independently of the class, so the outline carries no class
//! information. Classes differ in stripe frequency and orientation, noise
//! amplitude and colour.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result, Rng, Scalar, Tensor};

/// One image with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage<T> {
    /// `3×H×W`, values in `[0, 1]`.
    pub pixels: Tensor<T>,
    pub label: usize,
    pub source: String,
}

/// Interleaved 8-bit RGB (`H×W×3`) → channels-first `3×H×W` scaled by 1/255.
pub fn from_rgb8<T: Scalar>(width: usize, height: usize, rgb: &[u8]) -> Result<Tensor<T>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Data(format!(
            "{} bytes for a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    let plane = width * height;
    let mut data = vec![T::zero(); 3 * plane];
    for (p, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = T::of(px[c] as f64 / 255.0);
        }
    }
    Tensor::new(&[3, height, width], data)
}

/// Inverse of [`from_rgb8`], rounding and clamping to `[0, 255]`.
pub fn to_rgb8<T: Scalar>(pixels: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w) = match *pixels.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::Dimension(format!("expected 3×H×W image, got {s:?}"))),
    };
    if c != 3 {
        return Err(Error::Dimension(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let d = pixels.data();
    let mut out = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for ch in 0..3 {
            let v = Float::round(d[ch * plane + p].as_f64().clamp(0.0, 1.0) * 255.0);
            out.push(v as u8);
        }
    }
    Ok(out)
}

/// Per-class stratified split. Returns `(train, val)` index lists, each in
/// ascending order.
pub fn stratified_split(labels: &[usize], classes: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Data(format!("label {l} out of range for {classes} classes")));
        }
        by_class[l].push(i);
    }
    let mut rng = Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class {c} has {} sample(s); splitting needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (Float::round(ratio * n as f64) as usize).clamp(1, n - 1);
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Texture and colour statistics of one synthetic class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStyle {
    /// Stripe cycles across the image.
    pub frequency: f64,
    /// Stripe direction in radians.
    pub orientation: f64,
    pub noise: f64,
    pub color: [f64; 3],
}

/// Deterministic styles for `classes` classes.
pub fn class_styles(classes: usize, seed: u64) -> Vec<ClassStyle> {
    let mut rng = Rng::seed_from_u64(seed ^ 0x5eed_c1a5_5e5f_0000);
    (0..classes)
        .map(|c| {
            let hue = c as f64 / classes as f64;
            let base = [
                0.5 + 0.35 * Float::cos(2.0 * PI * hue),
                0.5 + 0.35 * Float::cos(2.0 * PI * (hue - 1.0 / 3.0)),
                0.5 + 0.35 * Float::cos(2.0 * PI * (hue - 2.0 / 3.0)),
            ];
            ClassStyle {
                frequency: 2.0 + (c % 4) as f64 * 1.5 + rng.random_range(0.0..0.3),
                orientation: PI * ((c * 3) % classes) as f64 / classes as f64,
                noise: 0.02 + 0.06 * (c % 3) as f64 / 2.0,
                color: base,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Silhouette {
    Disk,
    Square,
}

/// Rendered synthetic sample.
#[derive(Debug, Clone)]
pub struct SynthSample {
    /// Interleaved RGB, `size×size×3`.
    pub rgb: Vec<u8>,
    /// Object mask, `size×size`.
    pub mask: Vec<bool>,
    pub silhouette: Silhouette,
}

/// Renders one `size×size` sample of `style`.
pub fn render_sample(style: &ClassStyle, size: usize, rng: &mut Rng) -> SynthSample {
    let silhouette = if rng.random_bool(0.5) {
        Silhouette::Disk
    } else {
        Silhouette::Square
    };
    let s = size as f64;
    let radius = s * rng.random_range(0.28..0.42);
    let cx = s * 0.5 + rng.random_range(-0.12..0.12) * s;
    let cy = s * 0.5 + rng.random_range(-0.12..0.12) * s;
    let bg_level = rng.random_range(0.1..0.9);
    let bg = [
        bg_level + rng.random_range(-0.05..0.05),
        bg_level + rng.random_range(-0.05..0.05),
        bg_level + rng.random_range(-0.05..0.05),
    ];
    let phase = rng.random_range(0.0..2.0 * PI);
    let gain = rng.random_range(0.85..1.15);
    let (sin_o, cos_o) = Float::sin_cos(style.orientation);
    let k = 2.0 * PI * style.frequency / s;

    let mut rgb = Vec::with_capacity(size * size * 3);
    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = match silhouette {
                Silhouette::Disk => (px - cx) * (px - cx) + (py - cy) * (py - cy) <= radius * radius,
                Silhouette::Square => Float::abs(px - cx) <= radius && Float::abs(py - cy) <= radius,
            };
            mask.push(inside);
            let stripe = 0.5 + 0.5 * Float::sin(k * (px * cos_o + py * sin_o) + phase);
            for c in 0..3 {
                let v = if inside {
                    let z: f64 = StandardNormal.sample(rng);
                    style.color[c] * gain * (0.35 + 0.65 * stripe) + style.noise * z
                } else {
                    bg[c]
                };
                rgb.push(Float::round(v.clamp(0.0, 1.0) * 255.0) as u8);
            }
        }
    }
    SynthSample { rgb, mask, silhouette }
}

/// Generates `per_class` samples of each class, class-major. Every sample is
/// drawn from a generator keyed by `(seed, class, index)`, so the output does
/// not depend on generation order.
pub fn generate_synthetic(
    classes: usize,
    per_class: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<(usize, SynthSample)>> {
    if classes < 2 || per_class < 2 || size < 16 {
        return Err(Error::Config(format!(
            "synthetic data needs classes >= 2, per-class >= 2, size >= 16 (got {classes}, {per_class}, {size})"
        )));
    }
    let styles = class_styles(classes, seed);
    let mut out = Vec::with_capacity(classes * per_class);
    for (c, style) in styles.iter().enumerate() {
        for i in 0..per_class {
            let mut rng = Rng::seed_from_u64(seed);
            rng.set_stream((c * per_class + i) as u64 + 1);
            out.push((c, render_sample(style, size, &mut rng)));
        }
    }
    Ok(out)
}

//! Writes the procedural texture dataset to disk as PPM files.

use std::fs;
use std::path::Path;

use fetr_core::data::generate_synthetic;

use crate::dataset::{ImageFolder, Manifest};
use crate::image_io::{encode_ppm, RgbImage};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Class directory name for class `k` of `classes`.
pub fn class_name(k: usize, classes: usize) -> String {
    let digits = classes.saturating_sub(1).to_string().len().max(2);
    format!("class{k:0digits$}")
}

/// Generates `classes × per_class` images of `size×size` into
/// `out/<class>/sampleNNN.ppm` and writes `out/manifest.json` describing the
/// default 80/20 split under the same seed.
pub fn write_synthetic(out: &Path, classes: usize, per_class: usize, size: usize, seed: u64) -> Result<Manifest> {
    let samples = generate_synthetic(classes, per_class, size, seed)?;
    let digits = per_class.saturating_sub(1).to_string().len().max(3);
    for k in 0..classes {
        let dir = out.join(class_name(k, classes));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut index = vec![0usize; classes];
    for (label, sample) in samples {
        let path = out
            .join(class_name(label, classes))
            .join(format!("sample{:0digits$}.ppm", index[label]));
        index[label] += 1;
        let bytes = encode_ppm(&RgbImage {
            width: size,
            height: size,
            data: sample.rgb,
        });
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = ImageFolder::open(out)?.split(0.8, seed)?;
    manifest.write(out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

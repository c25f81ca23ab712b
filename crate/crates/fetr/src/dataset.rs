//! Folder-per-class image datasets and their JSON manifests.

use std::fs;
use std::path::{Path, PathBuf};

use fetr_core::data::{stratified_split, LabeledImage};
use fetr_core::Scalar;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::image_io::decode_image;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub label: usize,
}

/// An enumerated `root/<class>/<image>` tree.
#[derive(Debug, Clone)]
pub struct ImageFolder {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub samples: Vec<Entry>,
    /// Hex SHA-256 over class names, relative paths and file bytes.
    pub hash: String,
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        out.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
    }
    out.sort();
    Ok(out)
}

fn is_image(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".ppm") || lower.ends_with(".png")
}

impl ImageFolder {
    /// Lists classes (sorted subdirectory names) and their images (sorted
    /// file names). Files that fail to decode are skipped with a warning.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(Error::io(
                &root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let mut hasher = Sha256::new();
        let mut classes = Vec::new();
        let mut samples = Vec::new();
        for (name, path) in sorted_entries(&root)? {
            if !path.is_dir() {
                continue;
            }
            let label = classes.len();
            hasher.update(b"class\0");
            hasher.update(name.as_bytes());
            let mut kept = 0;
            for (file, fpath) in sorted_entries(&path)? {
                if !fpath.is_file() || !is_image(&file) {
                    continue;
                }
                let bytes = fs::read(&fpath).map_err(|e| Error::io(&fpath, e))?;
                if let Err(e) = decode_image(&bytes) {
                    log::warn!("skipping {}: {e}", fpath.display());
                    continue;
                }
                let rel = format!("{name}/{file}");
                hasher.update(b"file\0");
                hasher.update(rel.as_bytes());
                hasher.update((bytes.len() as u64).to_le_bytes());
                hasher.update(&bytes);
                samples.push(Entry { path: rel, label });
                kept += 1;
            }
            if kept == 0 {
                return Err(fetr_core::Error::Data(format!(
                    "class directory {} has no readable images",
                    path.display()
                ))
                .into());
            }
            classes.push(name);
        }
        if classes.is_empty() {
            return Err(fetr_core::Error::Data(format!("{} contains no class directories", root.display())).into());
        }
        Ok(ImageFolder {
            root,
            classes,
            samples,
            hash: hex(&hasher.finalize()),
        })
    }

    pub fn load<T: Scalar>(&self, entry: &Entry) -> Result<LabeledImage<T>> {
        let path = self.root.join(&entry.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let pixels = decode_image(&bytes)
            .map_err(|e| match e {
                Error::Decode { offset, message } => Error::Decode {
                    offset,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })?
            .to_tensor()?;
        Ok(LabeledImage {
            pixels,
            label: entry.label,
            source: entry.path.clone(),
        })
    }

    pub fn load_all<T: Scalar>(&self, entries: &[Entry]) -> Result<Vec<LabeledImage<T>>> {
        entries.iter().map(|e| self.load(e)).collect()
    }

    /// Stratified split; `train_ratio` of each class goes to training.
    pub fn split(&self, train_ratio: f64, seed: u64) -> Result<Manifest> {
        let labels: Vec<usize> = self.samples.iter().map(|s| s.label).collect();
        let (train, val) = stratified_split(&labels, self.classes.len(), train_ratio, seed)?;
        Ok(Manifest {
            classes: self.classes.clone(),
            train: train.iter().map(|&i| self.samples[i].clone()).collect(),
            val: val.iter().map(|&i| self.samples[i].clone()).collect(),
            train_ratio,
            seed,
            hash: self.hash.clone(),
        })
    }
}

/// Exported description of a split dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub train: Vec<Entry>,
    pub val: Vec<Entry>,
    pub train_ratio: f64,
    pub seed: u64,
    pub hash: String,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

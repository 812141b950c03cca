//! Dataset ingestion, synthetic long-tail generation, stratified
//! splitting, balanced sampling, augmentation, and mixup.

mod augment;
mod packed;
mod sampler;
mod split;
mod synthetic;

pub use augment::{
    augment, hsv_to_rgb, mixup, mixup_with_lambda, rgb_to_hsv, standardize, AugmentConfig,
};
pub use packed::{read_packed, write_packed, PACKED_FILE};
pub use sampler::{balanced_epoch, balanced_epoch_from_indices, default_n_c};
pub use split::{stratified_kfold, FoldPlan};
pub use synthetic::{
    generate_synthetic, longtail8_spec, marrow_longtail_spec, BlobShape, ClassSpec, SyntheticSpec,
};

use crate::error::{Error, Result};
use std::path::Path;

/// One RGB image with an optional class label (0-based index).
///
/// Pixels are stored row-major HWC as f64. Raw images live in [0, 1];
/// standardized images may exceed that range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub label: Option<usize>,
}

impl ImageSample {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, label: Option<usize>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape {
                expected: format!("{height}x{width}x3 = {} pixels", height * width * 3),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        Ok(ImageSample {
            height,
            width,
            pixels,
            label,
        })
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * 3 + c] = v;
    }
}

/// An immutable labeled image collection with per-class supports.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    samples: Vec<ImageSample>,
    class_names: Vec<String>,
    class_counts: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<ImageSample>, class_names: Vec<String>) -> Result<Self> {
        let mut class_counts = vec![0usize; class_names.len()];
        for (i, s) in samples.iter().enumerate() {
            match s.label {
                Some(l) if l < class_names.len() => class_counts[l] += 1,
                Some(l) => {
                    return Err(Error::data(format!(
                        "sample {i} has label index {l}, but only {} classes exist",
                        class_names.len()
                    )))
                }
                None => {
                    return Err(Error::data(format!("sample {i} is unlabeled")));
                }
            }
        }
        Ok(LabeledDataset {
            samples,
            class_names,
            class_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &ImageSample {
        &self.samples[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.samples[i].label.expect("labeled dataset")
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Indices of every sample of the given class, in dataset order.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.label(i) == class).collect()
    }

    /// Per-channel mean and standard deviation over the given sample indices.
    pub fn channel_stats(&self, indices: &[usize]) -> Result<([f64; 3], [f64; 3])> {
        if indices.is_empty() {
            return Err(Error::data("channel stats over an empty index set"));
        }
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        let mut n = 0usize;
        for &i in indices {
            let s = &self.samples[i];
            for px in s.pixels.chunks_exact(3) {
                for c in 0..3 {
                    sum[c] += px[c];
                    sum_sq[c] += px[c] * px[c];
                }
            }
            n += s.height * s.width;
        }
        let mut mean = [0.0f64; 3];
        let mut std = [0.0f64; 3];
        for c in 0..3 {
            mean[c] = sum[c] / n as f64;
            let var = (sum_sq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
            std[c] = var.sqrt().max(1e-6);
        }
        Ok((mean, std))
    }

    /// SHA-256 over labels and pixel bytes, stable across runs.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for name in &self.class_names {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
        }
        for s in &self.samples {
            hasher.update((s.label.unwrap_or(usize::MAX) as u64).to_le_bytes());
            hasher.update((s.height as u64).to_le_bytes());
            hasher.update((s.width as u64).to_le_bytes());
            for v in &s.pixels {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

const CLASSES_FILE: &str = "classes.json";
const MANIFEST_FILE: &str = "manifest.csv";

/// Read the class-name list for a dataset directory.
pub fn read_classes(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(CLASSES_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let names: Vec<String> =
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    if names.is_empty() {
        return Err(Error::data(format!("{}: empty class list", path.display())));
    }
    Ok(names)
}

/// Ingest a dataset directory holding `classes.json`, `manifest.csv`
/// (header `path,label`, one image per row), and the referenced PNGs.
pub fn ingest(dir: &Path) -> Result<LabeledDataset> {
    let class_names = read_classes(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&manifest_path)
        .map_err(|e| Error::data(format!("{}: {e}", manifest_path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::data(format!("{}: {e}", manifest_path.display())))?;
        if headers.len() < 2 || &headers[0] != "path" || &headers[1] != "label" {
            return Err(Error::data(format!(
                "{}: expected header `path,label`",
                manifest_path.display()
            )));
        }
    }
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::data(format!("{}: {e}", manifest_path.display())))?;
        let rel = &record[0];
        let label_name = &record[1];
        let label = class_names
            .iter()
            .position(|n| n == label_name)
            .ok_or_else(|| {
                Error::data(format!(
                    "{rel}: unknown label {label_name:?}; known classes: {class_names:?}"
                ))
            })?;
        let img_path = dir.join(rel);
        let img = image::open(&img_path)
            .map_err(|e| Error::data(format!("{}: {e}", img_path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels: Vec<f64> = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        samples.push(ImageSample::new(h, w, pixels, Some(label))?);
    }
    LabeledDataset::new(samples, class_names)
}

/// Load a dataset directory in either packed or PNG-manifest form.
pub fn load_dataset(dir: &Path) -> Result<LabeledDataset> {
    if dir.join(PACKED_FILE).exists() {
        let class_names = read_classes(dir)?;
        read_packed(&dir.join(PACKED_FILE), class_names)
    } else {
        ingest(dir)
    }
}

/// Write a dataset as PNG files plus `manifest.csv` and `classes.json`.
pub fn write_dataset_png(dataset: &LabeledDataset, dir: &Path) -> Result<()> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    write_classes(dataset, dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut writer = csv::Writer::from_path(&manifest_path)
        .map_err(|e| Error::data(format!("{}: {e}", manifest_path.display())))?;
    writer
        .write_record(["path", "label"])
        .map_err(|e| Error::data(e.to_string()))?;
    for (i, s) in dataset.samples().iter().enumerate() {
        let rel = format!("images/{i:06}.png");
        let bytes: Vec<u8> = s
            .pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img: image::RgbImage =
            image::ImageBuffer::from_raw(s.width as u32, s.height as u32, bytes)
                .expect("pixel buffer matches dimensions");
        let path = dir.join(&rel);
        img.save(&path)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        writer
            .write_record([rel.as_str(), &dataset.class_names()[s.label.unwrap()]])
            .map_err(|e| Error::data(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

/// Write a dataset in the packed binary form plus `classes.json`.
pub fn write_dataset_packed(dataset: &LabeledDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_classes(dataset, dir)?;
    write_packed(dataset, &dir.join(PACKED_FILE))
}

fn write_classes(dataset: &LabeledDataset, dir: &Path) -> Result<()> {
    let path = dir.join(CLASSES_FILE);
    let text = serde_json::to_string_pretty(dataset.class_names()).expect("serializable");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

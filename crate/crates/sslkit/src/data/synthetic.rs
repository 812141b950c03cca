//! Seeded synthetic long-tail dataset generation.
//!
//! Each class renders a colored-blob motif on a noisy gray background.
//! Class identity is carried by the blob hue (and optionally its shape),
//! so classes are linearly separable in feature space when hue centers
//! are far apart relative to their jitter.

use super::augment::hsv_to_rgb;
use super::{ImageSample, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlobShape {
    Disk,
    Square,
    Ring,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub count: usize,
    /// Blob hue center in [0, 1); per-image hue is wrapped after jitter.
    pub hue: f64,
    pub hue_sigma: f64,
    #[serde(default = "default_shape")]
    pub shape: BlobShape,
    /// Blob radius range as a fraction of image size.
    #[serde(default = "default_radius")]
    pub radius: (f64, f64),
}

fn default_shape() -> BlobShape {
    BlobShape::Disk
}

fn default_radius() -> (f64, f64) {
    (0.25, 0.38)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub image_size: usize,
    /// Per-pixel Gaussian noise sigma on the gray background.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    pub classes: Vec<ClassSpec>,
}

fn default_noise() -> f64 {
    0.08
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::config("synthetic spec needs at least 2 classes"));
        }
        if self.image_size < 4 {
            return Err(Error::config("image_size must be at least 4"));
        }
        for c in &self.classes {
            if c.count == 0 {
                return Err(Error::config(format!("class {:?} has count 0", c.name)));
            }
            if !(0.0..1.0).contains(&c.hue) {
                return Err(Error::config(format!("class {:?} hue outside [0,1)", c.name)));
            }
            if c.radius.0 <= 0.0 || c.radius.1 < c.radius.0 {
                return Err(Error::config(format!("class {:?} invalid radius range", c.name)));
            }
        }
        Ok(())
    }

    /// Minimal balanced two-class spec for tests.
    pub fn small_two_class(count: usize) -> SyntheticSpec {
        SyntheticSpec {
            image_size: 16,
            noise_sigma: 0.05,
            classes: vec![
                ClassSpec {
                    name: "red".into(),
                    count,
                    hue: 0.0,
                    hue_sigma: 0.01,
                    shape: BlobShape::Disk,
                    radius: default_radius(),
                },
                ClassSpec {
                    name: "cyan".into(),
                    count,
                    hue: 0.5,
                    hue_sigma: 0.01,
                    shape: BlobShape::Disk,
                    radius: default_radius(),
                },
            ],
        }
    }
}

/// Generate a dataset from a spec, deterministically for a given seed.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut samples = Vec::new();
    for (class_idx, class) in spec.classes.iter().enumerate() {
        for i in 0..class.count {
            let img_seed = rng::derive_seed(seed, &[tag::SYNTH, class_idx as u64, i as u64]);
            samples.push(render_image(spec, class, class_idx, img_seed));
        }
    }
    let class_names = spec.classes.iter().map(|c| c.name.clone()).collect();
    LabeledDataset::new(samples, class_names)
}

fn render_image(
    spec: &SyntheticSpec,
    class: &ClassSpec,
    class_idx: usize,
    seed: u64,
) -> ImageSample {
    let mut r = rng::stream(seed, &[]);
    let size = spec.image_size;
    let noise = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");

    let hue = (class.hue + Normal::new(0.0, class.hue_sigma).expect("valid sigma").sample(&mut r))
        .rem_euclid(1.0);
    let sat = 0.85 + r.random_range(-0.05..0.05);
    let val = 0.90 + r.random_range(-0.05..0.05);
    let color = hsv_to_rgb(hue, sat, val);

    let s = size as f64;
    let cx = s / 2.0 + r.random_range(-0.125..0.125) * s;
    let cy = s / 2.0 + r.random_range(-0.125..0.125) * s;
    let radius = r.random_range(class.radius.0..=class.radius.1) * s;

    let mut pixels = vec![0.0f64; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let inside = match class.shape {
                BlobShape::Disk => dx * dx + dy * dy <= radius * radius,
                BlobShape::Square => dx.abs() <= radius && dy.abs() <= radius,
                BlobShape::Ring => {
                    // thin annulus: its colored area is well below any
                    // disk's, so coverage alone separates the shapes
                    let d2 = dx * dx + dy * dy;
                    d2 <= radius * radius && d2 >= (0.8 * radius) * (0.8 * radius)
                }
            };
            for c in 0..3 {
                let base = if inside { color[c] } else { 0.5 };
                let v = (base + noise.sample(&mut r)).clamp(0.0, 1.0);
                pixels[(y * size + x) * 3 + c] = v;
            }
        }
    }
    ImageSample {
        height: size,
        width: size,
        pixels,
        label: Some(class_idx),
    }
}

/// Eight-class long-tail spec with head:tail support ratio 100:1 over
/// 2,000 images. The tail class has no hue identity (near-uniform hue)
/// and is recognizable only by its thin-ring shape, so a classifier
/// trained at natural frequencies has little incentive to learn it.
pub fn longtail8_spec(image_size: usize) -> SyntheticSpec {
    let supports = [1000usize, 400, 250, 150, 100, 50, 40, 10];
    let hues = [0.00, 0.15, 0.275, 0.40, 0.525, 0.65, 0.775, 0.5];
    // the tail class carries no color identity (its hue is effectively
    // uniform): only its ring shape separates it, and with 10 images a
    // natural-frequency learner maps each ring to its hue neighbor
    // instead of investing in the shape feature
    let sigmas = [0.006, 0.015, 0.015, 0.015, 0.015, 0.015, 0.015, 0.3];
    let shapes = [
        BlobShape::Disk,
        BlobShape::Disk,
        BlobShape::Disk,
        BlobShape::Disk,
        BlobShape::Disk,
        BlobShape::Disk,
        BlobShape::Disk,
        BlobShape::Ring,
    ];
    let classes = (0..8)
        .map(|i| ClassSpec {
            name: format!("class{i}"),
            count: supports[i],
            hue: hues[i],
            hue_sigma: sigmas[i],
            shape: shapes[i],
            // a small annulus has far less colored mass than any disk, so
            // even a heavily tilted decision boundary along the mass axis
            // cannot reach the disk classes
            radius: if i == 7 { (0.20, 0.26) } else { (0.30, 0.38) },
        })
        .collect();
    SyntheticSpec {
        image_size,
        noise_sigma: 0.08,
        classes,
    }
}

/// 21-class long-tail spec mirroring a public bone-marrow cytomorphology
/// dataset's class supports scaled down by 10 (classes under 10 samples
/// keep their original support).
pub fn marrow_longtail_spec(image_size: usize) -> SyntheticSpec {
    let raw: [(&str, usize); 21] = [
        ("ABE", 8),
        ("ART", 19630),
        ("NGB", 9968),
        ("BAS", 441),
        ("BLA", 11973),
        ("EOS", 5883),
        ("EBO", 27395),
        ("FGC", 47),
        ("HAC", 409),
        ("LYI", 65),
        ("LYT", 26242),
        ("MMZ", 3055),
        ("MON", 4040),
        ("MYB", 6557),
        ("NIF", 3538),
        ("OTH", 294),
        ("PLM", 7629),
        ("PEB", 2740),
        ("PMO", 11994),
        ("NGS", 29424),
        ("KSC", 42),
    ];
    let classes = raw
        .iter()
        .enumerate()
        .map(|(i, &(name, support))| ClassSpec {
            name: name.to_string(),
            count: if support < 10 { support } else { support / 10 },
            hue: i as f64 / 21.0,
            hue_sigma: 0.008,
            shape: BlobShape::Disk,
            radius: default_radius(),
        })
        .collect();
    SyntheticSpec {
        image_size,
        noise_sigma: 0.08,
        classes,
    }
}

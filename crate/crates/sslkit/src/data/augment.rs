//! Probabilistic augmentation: flips, HSV jitter, per-channel
//! standardization, and mixup.

use super::ImageSample;
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob_h: f64,
    pub flip_prob_v: f64,
    /// Hue shift drawn uniformly from [-hue_delta, hue_delta], hue in [0, 1).
    pub hue_delta: f64,
    pub sat_range: (f64, f64),
    pub val_range: (f64, f64),
    pub standardize_mean: [f64; 3],
    pub standardize_std: [f64; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob_h: 0.5,
            flip_prob_v: 0.5,
            hue_delta: 0.05,
            sat_range: (0.8, 1.2),
            val_range: (0.8, 1.2),
            standardize_mean: [0.0; 3],
            standardize_std: [1.0; 3],
        }
    }
}

impl AugmentConfig {
    /// Identity transform up to standardization.
    pub fn standardize_only(mean: [f64; 3], std: [f64; 3]) -> Self {
        AugmentConfig {
            flip_prob_h: 0.0,
            flip_prob_v: 0.0,
            hue_delta: 0.0,
            sat_range: (1.0, 1.0),
            val_range: (1.0, 1.0),
            standardize_mean: mean,
            standardize_std: std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("flip_prob_h", self.flip_prob_h), ("flip_prob_v", self.flip_prob_v)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        for (name, (lo, hi)) in [("sat_range", self.sat_range), ("val_range", self.val_range)] {
            if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi >= lo) {
                return Err(Error::config(format!(
                    "{name} must be a positive interval containing 1, got [{lo}, {hi}]"
                )));
            }
        }
        if self.standardize_std.iter().any(|&s| s == 0.0) {
            return Err(Error::config("standardize_std must be nonzero"));
        }
        Ok(())
    }
}

/// RGB in [0,1] to (hue, saturation, value), hue in [0, 1).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h.rem_euclid(1.0), s, v)
}

/// (hue, saturation, value) back to RGB in [0,1].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

fn flip_h(img: &mut ImageSample) {
    for y in 0..img.height {
        for x in 0..img.width / 2 {
            let xr = img.width - 1 - x;
            for c in 0..3 {
                let a = img.get(y, x, c);
                let b = img.get(y, xr, c);
                img.set(y, x, c, b);
                img.set(y, xr, c, a);
            }
        }
    }
}

fn flip_v(img: &mut ImageSample) {
    for y in 0..img.height / 2 {
        let yr = img.height - 1 - y;
        for x in 0..img.width {
            for c in 0..3 {
                let a = img.get(y, x, c);
                let b = img.get(yr, x, c);
                img.set(y, x, c, b);
                img.set(yr, x, c, a);
            }
        }
    }
}

/// Standardize pixels in place: (x - mean) / std per channel.
pub fn standardize(img: &mut ImageSample, mean: &[f64; 3], std: &[f64; 3]) {
    for px in img.pixels.chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = (px[c] - mean[c]) / std[c];
        }
    }
}

/// Apply the probabilistic transform: optional horizontal flip, optional
/// vertical flip, HSV jitter, then per-channel standardization.
/// Deterministic for a given seed.
pub fn augment(image: &ImageSample, config: &AugmentConfig, seed: u64) -> Result<ImageSample> {
    config.validate()?;
    let mut r = rng::stream(seed, &[]);
    let mut out = image.clone();
    if config.flip_prob_h > 0.0 && r.random_range(0.0..1.0) < config.flip_prob_h {
        flip_h(&mut out);
    }
    if config.flip_prob_v > 0.0 && r.random_range(0.0..1.0) < config.flip_prob_v {
        flip_v(&mut out);
    }
    let jitter_active = config.hue_delta > 0.0
        || config.sat_range != (1.0, 1.0)
        || config.val_range != (1.0, 1.0);
    if jitter_active {
        let dh = if config.hue_delta > 0.0 {
            r.random_range(-config.hue_delta..config.hue_delta)
        } else {
            0.0
        };
        let sf = range_sample(&mut r, config.sat_range);
        let vf = range_sample(&mut r, config.val_range);
        for px in out.pixels.chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let rgb = hsv_to_rgb(
                (h + dh).rem_euclid(1.0),
                (s * sf).clamp(0.0, 1.0),
                (v * vf).clamp(0.0, 1.0),
            );
            px.copy_from_slice(&rgb);
        }
    }
    standardize(&mut out, &config.standardize_mean, &config.standardize_std);
    Ok(out)
}

fn range_sample(r: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        r.random_range(lo..hi)
    }
}

/// Mixup: one lambda ~ Beta(alpha, alpha) per batch, partner indices from
/// a seeded permutation. Labels must be distribution rows (one-hot or soft).
pub fn mixup(
    images: &[ImageSample],
    labels: &Matrix,
    alpha: f64,
    seed: u64,
) -> Result<(Vec<ImageSample>, Matrix)> {
    if alpha <= 0.0 {
        return Err(Error::config(format!("mixup alpha must be > 0, got {alpha}")));
    }
    let mut r = rng::stream(seed, &[]);
    let lambda = Beta::new(alpha, alpha)
        .map_err(|e| Error::config(format!("mixup alpha invalid: {e}")))?
        .sample(&mut r);
    let mut partners: Vec<usize> = (0..images.len()).collect();
    partners.shuffle(&mut r);
    mixup_apply(images, labels, lambda, &partners)
}

/// Mixup with an explicit lambda and partner permutation.
pub fn mixup_with_lambda(
    images: &[ImageSample],
    labels: &Matrix,
    lambda: f64,
    partners: &[usize],
) -> Result<(Vec<ImageSample>, Matrix)> {
    mixup_apply(images, labels, lambda, partners)
}

fn mixup_apply(
    images: &[ImageSample],
    labels: &Matrix,
    lambda: f64,
    partners: &[usize],
) -> Result<(Vec<ImageSample>, Matrix)> {
    if images.len() < 2 {
        return Err(Error::data("mixup needs a batch of at least 2"));
    }
    if labels.rows() != images.len() || partners.len() != images.len() {
        return Err(Error::Shape {
            expected: format!("{} label rows and partner indices", images.len()),
            actual: format!("{} rows, {} partners", labels.rows(), partners.len()),
        });
    }
    let mut mixed_images = Vec::with_capacity(images.len());
    let mut mixed_labels = Matrix::zeros(labels.rows(), labels.cols());
    for (i, img) in images.iter().enumerate() {
        let j = partners[i];
        let partner = &images[j];
        let pixels: Vec<f64> = img
            .pixels
            .iter()
            .zip(&partner.pixels)
            .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        mixed_images.push(ImageSample {
            height: img.height,
            width: img.width,
            pixels,
            label: img.label,
        });
        for k in 0..labels.cols() {
            mixed_labels.set(i, k, lambda * labels.get(i, k) + (1.0 - lambda) * labels.get(j, k));
        }
    }
    Ok((mixed_images, mixed_labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn sample_image() -> ImageSample {
        let spec = SyntheticSpec::small_two_class(1);
        crate::data::generate_synthetic(&spec, 3).unwrap().samples()[0].clone()
    }

    #[test]
    fn noop_config_is_identity() {
        let img = sample_image();
        let cfg = AugmentConfig::standardize_only([0.0; 3], [1.0; 3]);
        let out = augment(&img, &cfg, 0).unwrap();
        assert_eq!(out.pixels, img.pixels);
    }

    #[test]
    fn double_horizontal_flip_is_identity() {
        let mut img = sample_image();
        let orig = img.clone();
        flip_h(&mut img);
        assert_ne!(img.pixels, orig.pixels);
        flip_h(&mut img);
        assert_eq!(img.pixels, orig.pixels);
    }

    #[test]
    fn hue_shift_red_to_green() {
        let (h, s, v) = rgb_to_hsv(1.0, 0.0, 0.0);
        let rgb = hsv_to_rgb(h + 1.0 / 3.0, s, v);
        assert!((rgb[0] - 0.0).abs() < 1e-9);
        assert!((rgb[1] - 1.0).abs() < 1e-9);
        assert!((rgb[2] - 0.0).abs() < 1e-9);
    }

    #[test]
    fn rgb_hsv_round_trip_grid() {
        // all non-gray pixels on a 17^3 grid
        for ri in 0..17 {
            for gi in 0..17 {
                for bi in 0..17 {
                    let (r, g, b) = (ri as f64 / 16.0, gi as f64 / 16.0, bi as f64 / 16.0);
                    if r == g && g == b {
                        continue;
                    }
                    let (h, s, v) = rgb_to_hsv(r, g, b);
                    let back = hsv_to_rgb(h, s, v);
                    assert!((back[0] - r).abs() < 1e-9, "({r},{g},{b})");
                    assert!((back[1] - g).abs() < 1e-9, "({r},{g},{b})");
                    assert!((back[2] - b).abs() < 1e-9, "({r},{g},{b})");
                }
            }
        }
    }

    #[test]
    fn standardize_round_trip() {
        let img = sample_image();
        let mean = [0.3, 0.4, 0.5];
        let std = [0.9, 1.1, 1.3];
        let mut out = img.clone();
        standardize(&mut out, &mean, &std);
        for px in out.pixels.chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = px[c] * std[c] + mean[c];
            }
        }
        for (a, b) in out.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn augment_deterministic_for_seed() {
        let img = sample_image();
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, 11).unwrap();
        let b = augment(&img, &cfg, 11).unwrap();
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn mixup_endpoints_and_midpoint() {
        let imgs = vec![sample_image(), {
            let mut s = sample_image();
            s.pixels.iter_mut().for_each(|p| *p = 1.0 - *p);
            s
        }];
        let labels = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let partners = vec![1, 0];

        let (mixed, ml) = mixup_with_lambda(&imgs, &labels, 1.0, &partners).unwrap();
        assert_eq!(mixed[0].pixels, imgs[0].pixels);
        assert_eq!(ml.row(0), &[1.0, 0.0]);

        let (_, ml) = mixup_with_lambda(&imgs, &labels, 0.5, &partners).unwrap();
        assert_eq!(ml.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn mixup_labels_are_distributions_and_pixels_in_hull() {
        let imgs = vec![sample_image(), sample_image(), sample_image()];
        let labels = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
        ])
        .unwrap();
        let (mixed, ml) = mixup(&imgs, &labels, 0.2, 5).unwrap();
        for i in 0..3 {
            let sum: f64 = ml.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        for (i, m) in mixed.iter().enumerate() {
            for (k, &p) in m.pixels.iter().enumerate() {
                let bounds: Vec<f64> = imgs.iter().map(|im| im.pixels[k]).collect();
                let lo = bounds.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = bounds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(p >= lo - 1e-12 && p <= hi + 1e-12, "sample {i} pixel {k}");
            }
        }
    }
}

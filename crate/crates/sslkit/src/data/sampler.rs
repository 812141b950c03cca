//! Balanced epoch construction: each class contributes exactly N_c draws.

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use rand::seq::SliceRandom;
use rand::Rng;

/// Default N_c: the median class support.
pub fn default_n_c(class_counts: &[usize]) -> usize {
    let mut sorted: Vec<usize> = class_counts.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]).div_ceil(2)
    } else {
        sorted[mid]
    };
    median.max(1)
}

/// Emit a sample-index sequence of length C * N_c in which each class
/// appears exactly N_c times. Classes with support >= N_c contribute a
/// permuted subset without replacement; smaller classes draw with
/// replacement. The whole sequence is then shuffled.
pub fn balanced_epoch(dataset: &LabeledDataset, n_c: usize, seed: u64) -> Result<Vec<usize>> {
    balanced_epoch_from_indices(dataset, None, n_c, seed)
}

/// Balanced epoch restricted to a subset of sample indices (for training
/// folds). `None` uses the whole dataset.
pub fn balanced_epoch_from_indices(
    dataset: &LabeledDataset,
    subset: Option<&[usize]>,
    n_c: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if n_c == 0 {
        return Err(Error::config("N_c must be at least 1"));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    match subset {
        Some(indices) => {
            for &i in indices {
                per_class[dataset.label(i)].push(i);
            }
        }
        None => {
            for i in 0..dataset.len() {
                per_class[dataset.label(i)].push(i);
            }
        }
    }
    let mut sequence = Vec::with_capacity(dataset.num_classes() * n_c);
    for (class, indices) in per_class.iter().enumerate() {
        if indices.is_empty() {
            return Err(Error::data(format!(
                "class {} ({}) has no samples to draw from",
                class,
                dataset.class_names()[class]
            )));
        }
        let mut r = rng::stream(seed, &[tag::BALANCED, class as u64]);
        if indices.len() >= n_c {
            let mut pool = indices.clone();
            pool.shuffle(&mut r);
            sequence.extend_from_slice(&pool[..n_c]);
        } else {
            for _ in 0..n_c {
                sequence.push(indices[r.random_range(0..indices.len())]);
            }
        }
    }
    let mut r = rng::stream(seed, &[tag::BALANCED, u64::MAX]);
    sequence.shuffle(&mut r);
    Ok(sequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageSample, LabeledDataset};

    fn dataset_with_counts(counts: &[usize]) -> LabeledDataset {
        let mut samples = Vec::new();
        for (class, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                samples.push(ImageSample::new(2, 2, vec![0.2; 12], Some(class)).unwrap());
            }
        }
        let names = (0..counts.len()).map(|i| format!("c{i}")).collect();
        LabeledDataset::new(samples, names).unwrap()
    }

    fn class_histogram(ds: &LabeledDataset, seq: &[usize]) -> Vec<usize> {
        let mut hist = vec![0usize; ds.num_classes()];
        for &i in seq {
            hist[ds.label(i)] += 1;
        }
        hist
    }

    #[test]
    fn exact_cover_when_support_equals_n_c() {
        let ds = dataset_with_counts(&[3, 3]);
        let seq = balanced_epoch(&ds, 3, 0).unwrap();
        assert_eq!(seq.len(), 6);
        let mut sorted = seq.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn replacement_forced_for_tiny_class() {
        let ds = dataset_with_counts(&[1, 4]);
        let seq = balanced_epoch(&ds, 4, 0).unwrap();
        assert_eq!(seq.iter().filter(|&&i| i == 0).count(), 4);
    }

    #[test]
    fn histogram_uniform_across_classes() {
        let ds = dataset_with_counts(&[50, 7, 3, 1]);
        for seed in [0u64, 1, 2] {
            let seq = balanced_epoch(&ds, 10, seed).unwrap();
            assert_eq!(class_histogram(&ds, &seq), vec![10; 4]);
        }
    }

    #[test]
    fn median_default_n_c() {
        assert_eq!(default_n_c(&[1, 5, 9]), 5);
        assert_eq!(default_n_c(&[2, 4, 6, 8]), 5);
        assert_eq!(default_n_c(&[1]), 1);
    }

    #[test]
    fn empty_class_in_subset_rejected() {
        let ds = dataset_with_counts(&[2, 2]);
        // subset holding only class-0 samples
        let err = balanced_epoch_from_indices(&ds, Some(&[0, 1]), 2, 0).unwrap_err();
        assert!(err.to_string().contains("c1"), "{err}");
    }
}

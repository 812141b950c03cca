//! Stratified K-fold split plans.

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Per-sample fold assignment for a K-fold split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn complement_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FoldPlan> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    pub fn validate_for(&self, dataset: &LabeledDataset, fold: usize) -> Result<()> {
        if self.assignments.len() != dataset.len() {
            return Err(Error::data(format!(
                "fold plan covers {} samples but dataset has {}",
                self.assignments.len(),
                dataset.len()
            )));
        }
        if fold >= self.k {
            return Err(Error::config(format!(
                "fold index {fold} out of range for k={}",
                self.k
            )));
        }
        Ok(())
    }
}

/// Assign each sample a fold so that per class, fold sizes differ by at
/// most 1. Within-class order is a seeded shuffle, then round-robin.
pub fn stratified_kfold(dataset: &LabeledDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config(format!("k must be at least 2, got {k}")));
    }
    let mut assignments = vec![0usize; dataset.len()];
    for class in 0..dataset.num_classes() {
        let mut indices = dataset.indices_of_class(class);
        let mut r = rng::stream(seed, &[tag::KFOLD, class as u64]);
        indices.shuffle(&mut r);
        for (pos, idx) in indices.into_iter().enumerate() {
            assignments[idx] = pos % k;
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}

//! Confusion-matrix construction, per-class and macro precision /
//! recall / F1, and embedding export.

use crate::data::{augment, AugmentConfig, LabeledDataset};
use crate::encoder::{classify, encode, ClassifierHead, EncoderState};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Per-class and macro classification metrics.
///
/// Classes with a zero denominator carry `None` and are excluded from the
/// macro means instead of counting as zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Rows = true class, columns = predicted class.
    pub confusion: Vec<Vec<usize>>,
    pub classes: Vec<String>,
    pub per_class: PerClassMetrics,
    #[serde(rename = "macro")]
    pub macro_metrics: MacroMetrics,
    /// Alternative convention: harmonic mean of the macro precision and
    /// macro recall, rather than the mean of per-class F1.
    pub f1_of_means: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
    pub support: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Count (true, predicted) pairs into a C x C matrix.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} predictions", labels.len()),
            actual: format!("{}", predictions.len()),
        });
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::data(format!(
                "class id out of range: predicted {p}, true {t}, C = {num_classes}"
            )));
        }
        confusion[t][p] += 1;
    }
    Ok(confusion)
}

fn defined_mean(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().filter_map(|&v| v).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

pub fn f1_from_pr(precision: f64, recall: f64) -> Option<f64> {
    if precision + recall == 0.0 {
        None
    } else {
        Some(2.0 * precision * recall / (precision + recall))
    }
}

/// Derive per-class precision/recall/F1 and macro averages from a
/// confusion matrix.
pub fn per_class_metrics(
    confusion: &[Vec<usize>],
    classes: &[String],
) -> Result<MetricsReport> {
    let c = confusion.len();
    if c == 0 {
        return Err(Error::data("empty confusion matrix"));
    }
    if classes.len() != c || confusion.iter().any(|row| row.len() != c) {
        return Err(Error::Shape {
            expected: format!("{c}x{c} matrix with {c} class names"),
            actual: format!("{} names", classes.len()),
        });
    }
    let mut precision = Vec::with_capacity(c);
    let mut recall = Vec::with_capacity(c);
    let mut f1 = Vec::with_capacity(c);
    let mut support = Vec::with_capacity(c);
    for j in 0..c {
        let tp = confusion[j][j];
        let row_sum: usize = confusion[j].iter().sum();
        let col_sum: usize = (0..c).map(|i| confusion[i][j]).sum();
        support.push(row_sum);
        let p = if col_sum > 0 {
            Some(tp as f64 / col_sum as f64)
        } else {
            None
        };
        let r = if row_sum > 0 {
            Some(tp as f64 / row_sum as f64)
        } else {
            None
        };
        let f = match (p, r) {
            (Some(p), Some(r)) => f1_from_pr(p, r),
            _ => None,
        };
        precision.push(p);
        recall.push(r);
        f1.push(f);
    }
    let macro_precision = defined_mean(&precision);
    let macro_recall = defined_mean(&recall);
    let macro_f1 = defined_mean(&f1);
    let f1_of_means = match (macro_precision, macro_recall) {
        (Some(p), Some(r)) => f1_from_pr(p, r),
        _ => None,
    };
    Ok(MetricsReport {
        confusion: confusion.to_vec(),
        classes: classes.to_vec(),
        per_class: PerClassMetrics {
            precision,
            recall,
            f1,
            support,
        },
        macro_metrics: MacroMetrics {
            precision: macro_precision,
            recall: macro_recall,
            f1: macro_f1,
        },
        f1_of_means,
    })
}

impl MetricsReport {
    /// Trace over total: the plain fraction of correct predictions.
    pub fn micro_accuracy(&self) -> f64 {
        let total: usize = self.confusion.iter().flatten().sum();
        if total == 0 {
            return 0.0;
        }
        let correct: usize = (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum();
        correct as f64 / total as f64
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<MetricsReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    /// Aligned-column text table.
    pub fn to_text_table(&self) -> String {
        let name_width = self
            .classes
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:>9.4}"),
            None => format!("{:>9}", "undef"),
        };
        let mut out = String::new();
        out.push_str(&format!(
            "{:<name_width$} {:>9} {:>9} {:>9} {:>9}\n",
            "class", "precision", "recall", "f1", "support"
        ));
        for (i, name) in self.classes.iter().enumerate() {
            out.push_str(&format!(
                "{:<name_width$} {} {} {} {:>9}\n",
                name,
                fmt(self.per_class.precision[i]),
                fmt(self.per_class.recall[i]),
                fmt(self.per_class.f1[i]),
                self.per_class.support[i]
            ));
        }
        out.push_str(&format!(
            "{:<name_width$} {} {} {} {:>9}\n",
            "macro",
            fmt(self.macro_metrics.precision),
            fmt(self.macro_metrics.recall),
            fmt(self.macro_metrics.f1),
            self.per_class.support.iter().sum::<usize>()
        ));
        out.push_str(&format!(
            "{:<name_width$} {}\n",
            "f1-of-means",
            fmt(self.f1_of_means)
        ));
        out
    }
}

/// Predict argmax classes for the given samples (standardization only,
/// no stochastic augmentation).
pub fn predict(
    encoder: &EncoderState,
    head: &ClassifierHead,
    dataset: &LabeledDataset,
    indices: &[usize],
    standardize: (&[f64; 3], &[f64; 3]),
) -> Result<Vec<usize>> {
    let cfg = AugmentConfig::standardize_only(*standardize.0, *standardize.1);
    let mut predictions = Vec::with_capacity(indices.len());
    for &i in indices {
        let img = augment(dataset.sample(i), &cfg, 0)?;
        let z = encode(&img, encoder)?;
        let p = classify(&z, head)?;
        let argmax = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
            .map(|(j, _)| j)
            .expect("non-empty class set");
        predictions.push(argmax);
    }
    Ok(predictions)
}

/// Evaluate a trained encoder + classifier on a held-out index set.
pub fn evaluate_model(
    encoder: &EncoderState,
    head: &ClassifierHead,
    dataset: &LabeledDataset,
    indices: &[usize],
    standardize: (&[f64; 3], &[f64; 3]),
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::data("evaluation fold is empty"));
    }
    let predictions = predict(encoder, head, dataset, indices, standardize)?;
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.label(i)).collect();
    let confusion = confusion_matrix(&predictions, &labels, dataset.num_classes())?;
    per_class_metrics(&confusion, dataset.class_names())
}

/// Export latent vectors as CSV: sample_id, label, z_1..z_d.
pub fn export_embeddings(
    encoder: &EncoderState,
    dataset: &LabeledDataset,
    standardize: (&[f64; 3], &[f64; 3]),
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let d_emb = encoder.config.d_emb;
    let mut header = String::from("sample_id,label");
    for j in 1..=d_emb {
        header.push_str(&format!(",z_{j}"));
    }
    writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
    let cfg = AugmentConfig::standardize_only(*standardize.0, *standardize.1);
    for i in 0..dataset.len() {
        let img = augment(dataset.sample(i), &cfg, 0)?;
        let z = encode(&img, encoder)?;
        let mut line = format!("{i},{}", dataset.label(i));
        for v in &z {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

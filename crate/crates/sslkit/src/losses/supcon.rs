//! Supervised contrastive objective with label-defined positive sets.

use crate::error::{Error, Result};
use crate::numeric::{logsumexp, Matrix};

#[derive(Debug, Clone)]
pub struct SupconOutput {
    pub value: f64,
    /// Gradient with respect to the projected vectors u (rows).
    pub grad_u: Matrix,
}

/// For each anchor i the positive set P(i) holds every other item sharing
/// its label (the anchor's other views included, the anchor excluded):
///
/// L = -(1/B_tot) sum_i (1/|P(i)|) sum_{j in P(i)}
///       ln( exp(u_i.u_j / tau) / sum_{k != i} exp(u_i.u_k / tau) )
///
/// `labels` carries one label per row of `u`; every view of an image
/// repeats the image's label.
pub fn supcon_loss(u: &Matrix, labels: &[usize], tau: f64) -> Result<SupconOutput> {
    let b_tot = u.rows();
    if labels.len() != b_tot {
        return Err(Error::Shape {
            expected: format!("{b_tot} labels"),
            actual: format!("{}", labels.len()),
        });
    }
    if b_tot < 2 {
        return Err(Error::data("contrastive batch needs at least 2 items"));
    }
    if tau <= 0.0 {
        return Err(Error::config("temperature must be positive"));
    }
    let sim = u.matmul_nt(u)?;
    let mut value = 0.0;
    // dL/ds_ij over ordered pairs, zero diagonal
    let mut g_sim = Matrix::zeros(b_tot, b_tot);
    let inv_b = 1.0 / b_tot as f64;
    let mut scaled = vec![0.0; b_tot - 1];
    let mut others = vec![0usize; b_tot - 1];
    for i in 0..b_tot {
        let positives: Vec<usize> = (0..b_tot)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            return Err(Error::data(format!(
                "anchor {i} (label {}) has an empty positive set",
                labels[i]
            )));
        }
        let mut idx = 0;
        for k in 0..b_tot {
            if k != i {
                others[idx] = k;
                scaled[idx] = sim.get(i, k) / tau;
                idx += 1;
            }
        }
        let lse = logsumexp(&scaled);
        let inv_p = 1.0 / positives.len() as f64;
        for &j in &positives {
            value -= inv_b * inv_p * (sim.get(i, j) / tau - lse);
        }
        // denominator softmax term appears once per anchor
        for (pos, &k) in others.iter().enumerate() {
            let soft = (scaled[pos] - lse).exp();
            let mut g = inv_b * soft / tau;
            if labels[k] == labels[i] {
                g -= inv_b * inv_p / tau;
            }
            g_sim.set(i, k, g);
        }
    }
    if !value.is_finite() {
        return Err(Error::numerical("supervised contrastive loss is not finite"));
    }
    // s_ij = u_i . u_j, so u_a collects both row and column contributions
    let mut grad_u = Matrix::zeros(b_tot, u.cols());
    for a in 0..b_tot {
        let out = grad_u.row_mut(a);
        for b in 0..b_tot {
            let coeff = g_sim.get(a, b) + g_sim.get(b, a);
            if coeff != 0.0 {
                for (o, &ub) in out.iter_mut().zip(u.row(b)) {
                    *o += coeff * ub;
                }
            }
        }
    }
    Ok(SupconOutput { value, grad_u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_check, l2_normalize};
    use crate::rng;
    use rand::Rng;

    fn random_unit_rows(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed, &[88]);
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                let v: Vec<f64> = (0..cols).map(|_| r.random_range(-1.0..1.0)).collect();
                l2_normalize(&v).unwrap()
            })
            .collect();
        Matrix::from_rows(&data).unwrap()
    }

    /// Brute-force reference following the formula term by term.
    fn supcon_oracle(u: &Matrix, labels: &[usize], tau: f64) -> f64 {
        let b = u.rows();
        let mut total = 0.0;
        for i in 0..b {
            let positives: Vec<usize> = (0..b)
                .filter(|&j| j != i && labels[j] == labels[i])
                .collect();
            let mut anchor = 0.0;
            for &j in &positives {
                let num = (crate::numeric::dot(u.row(i), u.row(j)) / tau).exp();
                let mut den = 0.0;
                for k in 0..b {
                    if k != i {
                        den += (crate::numeric::dot(u.row(i), u.row(k)) / tau).exp();
                    }
                }
                anchor += (num / den).ln();
            }
            total -= anchor / positives.len() as f64;
        }
        total / b as f64
    }

    #[test]
    fn two_items_degenerate_loss_is_zero() {
        let u = random_unit_rows(2, 4, 0);
        let out = supcon_loss(&u, &[0, 0], 0.2).unwrap();
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn four_identical_vectors_give_ln_three() {
        let row = l2_normalize(&[0.3, -0.5, 0.8]).unwrap();
        let u = Matrix::from_rows(&[row.clone(), row.clone(), row.clone(), row]).unwrap();
        let out = supcon_loss(&u, &[0, 0, 1, 1], 0.2).unwrap();
        assert!((out.value - 3.0f64.ln()).abs() < 1e-10, "{}", out.value);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut r = rng::stream(1, &[]);
        for trial in 0..50u64 {
            let b = 8;
            let u = random_unit_rows(b, 5, 100 + trial);
            let labels: Vec<usize> = {
                // guarantee at least one positive per anchor: pairs share labels
                (0..b).map(|i| i / 2).collect()
            };
            let tau = r.random_range(0.05..1.0);
            let out = supcon_loss(&u, &labels, tau).unwrap();
            let oracle = supcon_oracle(&u, &labels, tau);
            assert!(
                (out.value - oracle).abs() < 1e-10,
                "trial {trial}: {} vs {oracle}",
                out.value
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (b, d) = (8usize, 4usize);
        let u = random_unit_rows(b, d, 7);
        let labels = vec![0, 0, 1, 1, 2, 2, 0, 1];
        let out = supcon_loss(&u, &labels, 0.2).unwrap();
        let labels2 = labels.clone();
        let f = move |x: &[f64]| {
            let m = Matrix::from_vec(b, d, x.to_vec())?;
            Ok(supcon_loss(&m, &labels2, 0.2)?.value)
        };
        let report = finite_diff_check(f, out.grad_u.data(), u.data(), 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn invariant_under_label_relabeling() {
        let u = random_unit_rows(6, 4, 9);
        let labels = vec![0, 1, 2, 0, 1, 2];
        let relabeled = vec![5, 9, 7, 5, 9, 7];
        let a = supcon_loss(&u, &labels, 0.2).unwrap();
        let b = supcon_loss(&u, &relabeled, 0.2).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn unique_labels_without_other_views_rejected() {
        let u = random_unit_rows(3, 4, 11);
        let err = supcon_loss(&u, &[0, 1, 2], 0.2).unwrap_err();
        assert!(err.to_string().contains("positive set"), "{err}");
    }
}

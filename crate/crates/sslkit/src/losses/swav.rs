//! Swapped-prediction objective: prototype codes, Sinkhorn targets, and
//! the assignment queue.

use super::LOG_FLOOR;
use crate::error::{Error, Result};
use crate::numeric::{logsumexp, softmax, Matrix};
use crate::rng::{self, tag};
use rand::Rng;
use std::collections::VecDeque;

/// Code softmax temperature. The similarity-to-distribution step needs a
/// temperature; 0.1 follows the swapped-assignment lineage this objective
/// comes from.
pub const CODE_TEMPERATURE: f64 = 0.1;

/// K unit-norm prototype vectors in projection space.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    /// K x d_proj, one prototype per row.
    pub vectors: Matrix,
    pub frozen: bool,
}

impl PrototypeBank {
    /// Initialize uniformly on the unit sphere (normalized Gaussians).
    pub fn init(k: usize, d_proj: usize, seed: u64) -> Result<Self> {
        if k == 0 || d_proj == 0 {
            return Err(Error::config("prototype bank needs k >= 1 and d_proj >= 1"));
        }
        let mut r = rng::stream(seed, &[tag::PROTOTYPES]);
        let mut vectors = Matrix::zeros(k, d_proj);
        for i in 0..k {
            // Box-Muller pairs; normalized direction is uniform on the sphere
            let row = vectors.row_mut(i);
            for v in row.iter_mut() {
                let u1: f64 = r.random_range(f64::EPSILON..1.0);
                let u2: f64 = r.random_range(0.0..1.0);
                *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
        }
        let mut bank = PrototypeBank {
            vectors,
            frozen: false,
        };
        bank.renormalize();
        Ok(bank)
    }

    pub fn k(&self) -> usize {
        self.vectors.rows()
    }

    pub fn d_proj(&self) -> usize {
        self.vectors.cols()
    }

    /// Re-project every prototype onto the unit sphere.
    pub fn renormalize(&mut self) {
        for i in 0..self.vectors.rows() {
            let row = self.vectors.row_mut(i);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in row {
                *v /= n;
            }
        }
    }

    /// Dot-product similarity scores of each u row against every prototype.
    pub fn scores(&self, u: &Matrix) -> Result<Matrix> {
        u.matmul_nt(&self.vectors)
    }
}

/// Per-view code and target distributions over prototypes.
#[derive(Debug, Clone)]
pub struct AssignmentResult {
    /// Predicted code distributions, one B x K matrix per view.
    pub codes: Vec<Matrix>,
    /// Sinkhorn pseudo-groundtruth distributions, one B x K matrix per view.
    pub targets: Vec<Matrix>,
    pub epsilon: f64,
    pub iterations: usize,
}

/// Code distributions: softmax(u . v / temperature) per row, per view.
pub fn swav_codes(u: &[Matrix], bank: &PrototypeBank, temperature: f64) -> Result<Vec<Matrix>> {
    if temperature <= 0.0 {
        return Err(Error::config("code temperature must be positive"));
    }
    u.iter()
        .map(|view| {
            if view.cols() != bank.d_proj() {
                return Err(Error::Shape {
                    expected: format!("u with {} columns", bank.d_proj()),
                    actual: format!("{} columns", view.cols()),
                });
            }
            let mut scores = view.matmul_nt(&bank.vectors)?;
            scores.scale(1.0 / temperature);
            let mut out = Matrix::zeros(scores.rows(), scores.cols());
            for i in 0..scores.rows() {
                out.row_mut(i).copy_from_slice(&softmax(scores.row(i))?);
            }
            Ok(out)
        })
        .collect()
}

/// Entropic assignment by alternating rescaling, in log space.
///
/// Starts from exp(scores/epsilon); each iteration rescales columns to sum
/// to B_eff/K, then rows to sum to 1, so the last operation is always a row
/// rescale and every output row is an exact distribution.
pub fn sinkhorn_assign(scores: &Matrix, epsilon: f64, iterations: usize) -> Result<Matrix> {
    let (b_eff, k) = (scores.rows(), scores.cols());
    if b_eff == 0 || k == 0 {
        return Err(Error::data("sinkhorn needs at least one row and column"));
    }
    if epsilon <= 0.0 {
        return Err(Error::config("sinkhorn epsilon must be positive"));
    }
    if !scores.is_finite() {
        return Err(Error::numerical("non-finite sinkhorn scores"));
    }
    let col_target_log = (b_eff as f64 / k as f64).ln();
    let mut log_q: Vec<f64> = scores.data().iter().map(|&s| s / epsilon).collect();
    let mut col_buf = vec![0.0; b_eff];
    for _ in 0..iterations.max(1) {
        for j in 0..k {
            for i in 0..b_eff {
                col_buf[i] = log_q[i * k + j];
            }
            let shift = logsumexp(&col_buf) - col_target_log;
            for i in 0..b_eff {
                log_q[i * k + j] -= shift;
            }
        }
        for i in 0..b_eff {
            let row = &mut log_q[i * k..(i + 1) * k];
            let shift = logsumexp(row);
            for v in row.iter_mut() {
                *v -= shift;
            }
        }
    }
    let mut out = Matrix::zeros(b_eff, k);
    for i in 0..b_eff {
        let row = out.row_mut(i);
        let mut sum = 0.0;
        for j in 0..k {
            let v = log_q[i * k + j].exp();
            row[j] = v;
            sum += v;
        }
        // exact renormalization against rounding in the final exp
        for v in row {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Swapped-prediction loss value and gradient.
#[derive(Debug, Clone)]
pub struct SwavOutput {
    pub value: f64,
    /// Gradient with respect to the pre-softmax code logits, per view.
    pub grad_logits: Vec<Matrix>,
}

/// Each view's target supervises every other view's code:
/// L = -1/(B M (M-1)) sum_i sum_{m1} sum_{m2 != m1} o^(m1)_i . ln c^(m2)_i.
/// Targets are constants; the gradient flows only through the codes.
pub fn swav_loss(codes: &[Matrix], targets: &[Matrix]) -> Result<SwavOutput> {
    let m = codes.len();
    if m < 2 || targets.len() != m {
        return Err(Error::data(format!(
            "swapped prediction needs M >= 2 views with matching targets (got {} codes, {} targets)",
            m,
            targets.len()
        )));
    }
    let (b, k) = (codes[0].rows(), codes[0].cols());
    for view in codes.iter().chain(targets) {
        if view.rows() != b || view.cols() != k {
            return Err(Error::Shape {
                expected: format!("{b}x{k} per view"),
                actual: format!("{}x{}", view.rows(), view.cols()),
            });
        }
    }
    if b == 0 {
        return Err(Error::data("empty batch"));
    }
    let scale = 1.0 / (b * m * (m - 1)) as f64;
    let mut value = 0.0;
    for m1 in 0..m {
        for m2 in 0..m {
            if m1 == m2 {
                continue;
            }
            let o = &targets[m1];
            let c = &codes[m2];
            for i in 0..b {
                for j in 0..k {
                    let oj = o.get(i, j);
                    if oj != 0.0 {
                        value -= oj * c.get(i, j).max(LOG_FLOOR).ln();
                    }
                }
            }
        }
    }
    value *= scale;

    // softmax cross-entropy identity per supervising view: d/dlogits = c - o
    let mut grad_logits = Vec::with_capacity(m);
    for m2 in 0..m {
        let mut g = Matrix::zeros(b, k);
        for m1 in 0..m {
            if m1 == m2 {
                continue;
            }
            for i in 0..b {
                let o = targets[m1].row(i);
                let c = codes[m2].row(i);
                let row = g.row_mut(i);
                for j in 0..k {
                    row[j] += scale * (c[j] - o[j]);
                }
            }
        }
        grad_logits.push(g);
    }
    if !value.is_finite() {
        return Err(Error::numerical("swapped-prediction loss is not finite"));
    }
    Ok(SwavOutput { value, grad_logits })
}

/// FIFO store of recent projected vectors. Queue rows enlarge the
/// Sinkhorn problem once active but never receive gradient.
#[derive(Debug, Clone)]
pub struct AssignmentQueue {
    pub capacity: usize,
    pub active_from_epoch: usize,
    items: VecDeque<Vec<f64>>,
}

impl AssignmentQueue {
    pub fn new(capacity: usize, active_from_epoch: usize) -> Self {
        AssignmentQueue {
            capacity,
            active_from_epoch,
            items: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Append the rows of a batch, evicting the oldest beyond capacity.
    pub fn update(&mut self, u_batch: &Matrix) {
        for i in 0..u_batch.rows() {
            self.items.push_back(u_batch.row(i).to_vec());
            if self.items.len() > self.capacity {
                self.items.pop_front();
            }
        }
    }

    /// Queue contents as a matrix (oldest first), or None when empty.
    pub fn as_matrix(&self) -> Option<Matrix> {
        if self.items.is_empty() {
            return None;
        }
        let rows: Vec<Vec<f64>> = self.items.iter().cloned().collect();
        Some(Matrix::from_rows(&rows).expect("uniform queue row length"))
    }
}

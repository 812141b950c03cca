//! Acceptance gate: eight independently runnable criteria covering
//! gradient fidelity, assignment correctness, loss oracles, sampling,
//! metric arithmetic, end-to-end training quality, determinism, and
//! schedule contracts. Every tolerance is pinned in this file.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see one
//! PASS line per criterion.

use rand::Rng;
use sslkit::checkpoint::{hash_f64s, hash_file};
use sslkit::data::{
    balanced_epoch, default_n_c, generate_synthetic, longtail8_spec, marrow_longtail_spec,
    stratified_kfold, FoldPlan, LabeledDataset, SyntheticSpec,
};
use sslkit::encoder::EncoderConfig;
use sslkit::eval::{evaluate_model, f1_from_pr, per_class_metrics};
use sslkit::losses::{
    cross_entropy, sinkhorn_assign, supcon_loss, swav_loss, PrototypeBank,
};
use sslkit::numeric::{dot, finite_diff_check, l2_normalize, softmax_rows, Matrix};
use sslkit::rng;
use sslkit::training::{
    linear_probe, supervised_checkpoint, train_supcon, train_supervised,
    train_supervised_unbalanced, train_swav, ProbeConfig, Regime, TrainConfig,
};
use std::sync::OnceLock;
use std::time::Instant;

// ---------------------------------------------------------------- tolerances
const GRAD_MAX_REL_ERROR: f64 = 1e-5;
const GRAD_TIME_BUDGET_S: f64 = 30.0;
const SINKHORN_ROW_TOL: f64 = 1e-9;
const SINKHORN_COL_TOL: f64 = 1e-3;
const SINKHORN_ORACLE_TOL: f64 = 1e-10;
const SINKHORN_TIME_BUDGET_S: f64 = 5.0;
const LOSS_ORACLE_TOL: f64 = 1e-10;
const F1_REFERENCE: f64 = 0.9012;
const F1_REFERENCE_TOL: f64 = 5e-4;
const METRIC_COUNT_TOL: f64 = 1e-12;
const SUPERVISED_MACRO_F1_MIN: f64 = 0.90;
const PRETRAIN_PROBE_MACRO_F1_MIN: f64 = 0.85;
const LEG_TIME_BUDGET_S: f64 = 600.0;

fn random_matrix(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Matrix {
    let mut r = rng::stream(seed, &[7701]);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(lo..hi)).collect())
        .unwrap()
}

fn row_stochastic(rows: usize, cols: usize, seed: u64) -> Matrix {
    softmax_rows(&random_matrix(rows, cols, seed, -1.0, 1.0)).unwrap()
}

// ------------------------------------------------------------- criterion 1
#[test]
fn criterion_1_gradient_fidelity() {
    let start = Instant::now();
    let mut r = rng::stream(1001, &[]);

    // cross-entropy through softmax logits
    for trial in 0..20u64 {
        let b = r.random_range(2..=4);
        let c = r.random_range(2..=8);
        let logits = random_matrix(b, c, 10 + trial, -2.0, 2.0);
        let weights: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
        let mut targets = Matrix::zeros(b, c);
        for i in 0..b {
            targets.set(i, r.random_range(0..c), 1.0);
        }
        let out =
            cross_entropy(&softmax_rows(&logits).unwrap(), &targets, &weights).unwrap();
        let (t2, w2) = (targets.clone(), weights.clone());
        let f = move |x: &[f64]| {
            let m = Matrix::from_vec(b, c, x.to_vec())?;
            Ok(cross_entropy(&softmax_rows(&m)?, &t2, &w2)?.value)
        };
        let report = finite_diff_check(f, out.grad_logits.data(), logits.data(), 1e-5).unwrap();
        assert!(
            report.max_rel_error < GRAD_MAX_REL_ERROR,
            "cross-entropy trial {trial}: rel error {}",
            report.max_rel_error
        );
    }

    // swapped-prediction loss through the per-view code logits (M = 2)
    for trial in 0..20u64 {
        let b = r.random_range(2..=4);
        let k = r.random_range(2..=8);
        let logits: Vec<Matrix> = (0..2)
            .map(|v| random_matrix(b, k, 300 + 2 * trial + v, -1.5, 1.5))
            .collect();
        let targets: Vec<Matrix> = (0..2)
            .map(|v| {
                let scores = random_matrix(b, k, 500 + 2 * trial + v, -1.0, 1.0);
                sinkhorn_assign(&scores, 0.03, 3).unwrap()
            })
            .collect();
        let codes: Vec<Matrix> = logits.iter().map(|l| softmax_rows(l).unwrap()).collect();
        let out = swav_loss(&codes, &targets).unwrap();
        let flat: Vec<f64> = logits.iter().flat_map(|m| m.data().to_vec()).collect();
        let analytic: Vec<f64> = out
            .grad_logits
            .iter()
            .flat_map(|m| m.data().to_vec())
            .collect();
        let t2 = targets.clone();
        let f = move |x: &[f64]| {
            let per = b * k;
            let views: Vec<Matrix> = (0..2)
                .map(|v| {
                    let m = Matrix::from_vec(b, k, x[v * per..(v + 1) * per].to_vec())?;
                    softmax_rows(&m)
                })
                .collect::<sslkit::Result<Vec<_>>>()?;
            Ok(swav_loss(&views, &t2)?.value)
        };
        let report = finite_diff_check(f, &analytic, &flat, 1e-5).unwrap();
        assert!(
            report.max_rel_error < GRAD_MAX_REL_ERROR,
            "swapped-prediction trial {trial}: rel error {}",
            report.max_rel_error
        );
    }

    // supervised contrastive loss through the projected vectors
    for trial in 0..20u64 {
        let b = r.random_range(2..=4);
        let d = r.random_range(3..=16);
        let rows: Vec<Vec<f64>> = (0..2 * b)
            .map(|i| {
                let m = random_matrix(1, d, 900 + 64 * trial + i as u64, -1.0, 1.0);
                l2_normalize(m.row(0)).unwrap()
            })
            .collect();
        let u = Matrix::from_rows(&rows).unwrap();
        // two views per image: labels repeat across the two halves
        let labels: Vec<usize> = (0..2 * b).map(|i| i % b).collect();
        let tau = r.random_range(0.1..0.5);
        let out = supcon_loss(&u, &labels, tau).unwrap();
        let l2 = labels.clone();
        let f = move |x: &[f64]| {
            let m = Matrix::from_vec(2 * b, d, x.to_vec())?;
            Ok(supcon_loss(&m, &l2, tau)?.value)
        };
        let report = finite_diff_check(f, out.grad_u.data(), u.data(), 1e-5).unwrap();
        assert!(
            report.max_rel_error < GRAD_MAX_REL_ERROR,
            "contrastive trial {trial}: rel error {}",
            report.max_rel_error
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < GRAD_TIME_BUDGET_S, "took {elapsed:.1}s");
    println!("criterion 1 (gradient fidelity < {GRAD_MAX_REL_ERROR:.0e}, 3 losses x 20 instances, {elapsed:.1}s): PASS");
}

// ------------------------------------------------------------- criterion 2
/// Independent oracle: plain exponential-space alternating rescale with
/// the same operation order (columns to B/K, then rows to 1).
fn naive_sinkhorn(scores: &Matrix, epsilon: f64, iterations: usize) -> Vec<Vec<f64>> {
    let (b, k) = (scores.rows(), scores.cols());
    let mut q: Vec<Vec<f64>> = (0..b)
        .map(|i| scores.row(i).iter().map(|&s| (s / epsilon).exp()).collect())
        .collect();
    for _ in 0..iterations {
        for j in 0..k {
            let col_sum: f64 = (0..b).map(|i| q[i][j]).sum();
            let factor = (b as f64 / k as f64) / col_sum;
            for row in q.iter_mut() {
                row[j] *= factor;
            }
        }
        for row in q.iter_mut() {
            let row_sum: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= row_sum;
            }
        }
    }
    q
}

#[test]
fn criterion_2_sinkhorn_correctness() {
    let start = Instant::now();
    for trial in 0..20u64 {
        // score range mirrors cosine similarities of high-dimensional unit
        // vectors; alternating rescaling converges slowly on kernels more
        // peaked than exp(score/epsilon) ever gets in that regime
        let scores = random_matrix(8, 5, 2000 + trial, -0.25, 0.25);

        let q = sinkhorn_assign(&scores, 0.03, 3).unwrap();
        for i in 0..8 {
            let row_sum: f64 = q.row(i).iter().sum();
            assert!(
                (row_sum - 1.0).abs() < SINKHORN_ROW_TOL,
                "trial {trial} row {i}: {row_sum}"
            );
        }

        let converged = sinkhorn_assign(&scores, 0.03, 100).unwrap();
        for j in 0..5 {
            let col_sum: f64 = (0..8).map(|i| converged.get(i, j)).sum();
            assert!(
                (col_sum - 8.0 / 5.0).abs() < SINKHORN_COL_TOL,
                "trial {trial} column {j}: {col_sum}"
            );
        }

        for iterations in [1usize, 3, 7] {
            let fast = sinkhorn_assign(&scores, 0.03, iterations).unwrap();
            let oracle = naive_sinkhorn(&scores, 0.03, iterations);
            for i in 0..8 {
                for j in 0..5 {
                    assert!(
                        (fast.get(i, j) - oracle[i][j]).abs() < SINKHORN_ORACLE_TOL,
                        "trial {trial} iter {iterations} ({i},{j})"
                    );
                }
            }
        }
    }

    // equal scores: every row exactly uniform
    let equal = Matrix::from_vec(8, 5, vec![0.42; 40]).unwrap();
    let q = sinkhorn_assign(&equal, 0.03, 3).unwrap();
    for i in 0..8 {
        let first = q.get(i, 0);
        let row_sum: f64 = q.row(i).iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-12);
        for j in 0..5 {
            assert_eq!(q.get(i, j), first, "row {i} not uniform");
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < SINKHORN_TIME_BUDGET_S, "took {elapsed:.1}s");
    println!("criterion 2 (sinkhorn rows < {SINKHORN_ROW_TOL:.0e}, cols < {SINKHORN_COL_TOL:.0e}, oracle < {SINKHORN_ORACLE_TOL:.0e}, {elapsed:.2}s): PASS");
}

// ------------------------------------------------------------- criterion 3
/// Term-by-term contrastive reference with explicit nested loops.
fn supcon_quadruple_loop(u: &Matrix, labels: &[usize], tau: f64) -> f64 {
    let b = u.rows();
    let mut total = 0.0;
    for i in 0..b {
        let mut positives = 0usize;
        let mut anchor = 0.0;
        for j in 0..b {
            if j == i || labels[j] != labels[i] {
                continue;
            }
            positives += 1;
            let num = (dot(u.row(i), u.row(j)) / tau).exp();
            let mut den = 0.0;
            for k in 0..b {
                if k != i {
                    den += (dot(u.row(i), u.row(k)) / tau).exp();
                }
            }
            anchor += (num / den).ln();
        }
        total -= anchor / positives as f64;
    }
    total / b as f64
}

/// Direct evaluation of the swapped-prediction quadruple sum.
fn swav_quadruple_sum(codes: &[Matrix], targets: &[Matrix]) -> f64 {
    let m = codes.len();
    let (b, k) = (codes[0].rows(), codes[0].cols());
    let mut total = 0.0;
    for i in 0..b {
        for m1 in 0..m {
            for m2 in 0..m {
                if m2 == m1 {
                    continue;
                }
                for j in 0..k {
                    total -= targets[m1].get(i, j) * codes[m2].get(i, j).ln();
                }
            }
        }
    }
    total / (b * m * (m - 1)) as f64
}

#[test]
fn criterion_3_loss_oracle_equivalence() {
    let mut r = rng::stream(3001, &[]);
    for trial in 0..50u64 {
        // even batch so paired labels leave no anchor without a positive
        let b = 2 * r.random_range(2..=5);
        let d = r.random_range(3..=8);
        let rows: Vec<Vec<f64>> = (0..b)
            .map(|i| {
                let m = random_matrix(1, d, 3100 + 32 * trial + i as u64, -1.0, 1.0);
                l2_normalize(m.row(0)).unwrap()
            })
            .collect();
        let u = Matrix::from_rows(&rows).unwrap();
        let labels: Vec<usize> = (0..b).map(|i| i / 2).collect();
        let tau = r.random_range(0.1..0.8);
        let fast = supcon_loss(&u, &labels, tau).unwrap().value;
        let slow = supcon_quadruple_loop(&u, &labels, tau);
        assert!(
            (fast - slow).abs() < LOSS_ORACLE_TOL,
            "contrastive trial {trial}: {fast} vs {slow}"
        );
    }

    for trial in 0..50u64 {
        let b = r.random_range(2..=6);
        let k = r.random_range(2..=8);
        let m = r.random_range(2..=3);
        let codes: Vec<Matrix> = (0..m as u64)
            .map(|v| row_stochastic(b, k, 3300 + 8 * trial + v))
            .collect();
        let targets: Vec<Matrix> = (0..m as u64)
            .map(|v| row_stochastic(b, k, 3500 + 8 * trial + v))
            .collect();
        let fast = swav_loss(&codes, &targets).unwrap().value;
        let slow = swav_quadruple_sum(&codes, &targets);
        assert!(
            (fast - slow).abs() < LOSS_ORACLE_TOL,
            "swapped trial {trial}: {fast} vs {slow}"
        );
    }
    println!("criterion 3 (loss oracle equivalence < {LOSS_ORACLE_TOL:.0e}, 50 batches each): PASS");
}

// ------------------------------------------------------------- criterion 4
#[test]
fn criterion_4_balanced_sampling_and_folds() {
    // 21-class long-tail preset with 1/10-scaled supports
    let spec = marrow_longtail_spec(8);
    assert_eq!(spec.classes.len(), 21);
    let dataset = generate_synthetic(&spec, 0).unwrap();
    let counts = dataset.class_counts().to_vec();
    let by_name = |name: &str| {
        let idx = dataset.class_names().iter().position(|n| n == name).unwrap();
        counts[idx]
    };
    assert_eq!(by_name("NGS"), 2942, "head support scaled by 10");
    assert_eq!(by_name("ABE"), 8, "sub-10 supports kept as-is");

    let n_c = default_n_c(&counts);
    let epoch = balanced_epoch(&dataset, n_c, 4001).unwrap();
    let mut histogram = vec![0usize; 21];
    for &i in &epoch {
        histogram[dataset.label(i)] += 1;
    }
    assert!(
        histogram.iter().all(|&h| h == n_c),
        "balanced epoch histogram {histogram:?}, expected {n_c} everywhere"
    );

    let plan = stratified_kfold(&dataset, 5, 4002).unwrap();
    for class in 0..21 {
        let per_fold: Vec<usize> = (0..5)
            .map(|f| {
                plan.fold_indices(f)
                    .iter()
                    .filter(|&&i| dataset.label(i) == class)
                    .count()
            })
            .collect();
        let spread = per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap();
        assert!(spread <= 1, "class {class} fold counts {per_fold:?}");
    }
    println!("criterion 4 (balanced epoch exact N_c = {n_c}, 5-fold spread <= 1 over 21 classes): PASS");
}

// ------------------------------------------------------------- criterion 5
#[test]
fn criterion_5_metric_arithmetic() {
    let f1 = f1_from_pr(0.9158, 0.8871).unwrap();
    assert!(
        (f1 - F1_REFERENCE).abs() < F1_REFERENCE_TOL,
        "harmonic mean of (0.9158, 0.8871) = {f1}"
    );

    // confusion-derived metrics against a per-sample counting oracle
    let mut r = rng::stream(5001, &[]);
    let c = 5;
    let n = 400;
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
    let predictions: Vec<usize> = labels
        .iter()
        .map(|&l| if r.random_range(0.0..1.0) < 0.7 { l } else { r.random_range(0..c) })
        .collect();
    let confusion = sslkit::eval::confusion_matrix(&predictions, &labels, c).unwrap();
    let names: Vec<String> = (0..c).map(|i| format!("c{i}")).collect();
    let report = per_class_metrics(&confusion, &names).unwrap();

    for class in 0..c {
        let tp = (0..n).filter(|&i| labels[i] == class && predictions[i] == class).count();
        let fp = (0..n).filter(|&i| labels[i] != class && predictions[i] == class).count();
        let fal_n = (0..n).filter(|&i| labels[i] == class && predictions[i] != class).count();
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fal_n) as f64;
        let f1 = 2.0 * precision * recall / (precision + recall);
        assert!((report.per_class.precision[class].unwrap() - precision).abs() < METRIC_COUNT_TOL);
        assert!((report.per_class.recall[class].unwrap() - recall).abs() < METRIC_COUNT_TOL);
        assert!((report.per_class.f1[class].unwrap() - f1).abs() < METRIC_COUNT_TOL);
        assert_eq!(report.per_class.support[class], tp + fal_n);
    }
    println!("criterion 5 (F1(0.9158, 0.8871) = {f1:.4} within {F1_REFERENCE_TOL:.0e} of {F1_REFERENCE}; counting oracle < {METRIC_COUNT_TOL:.0e}): PASS");
}

// ------------------------------------------------------------- criterion 6
/// Shared long-tail benchmark: 8 classes, 2,000 images at 32x32 with
/// head:tail support ratio 100:1, plus a stratified 5-fold plan.
fn longtail_benchmark() -> &'static (LabeledDataset, FoldPlan) {
    static DATA: OnceLock<(LabeledDataset, FoldPlan)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dataset = generate_synthetic(&longtail8_spec(32), 0).unwrap();
        assert_eq!(dataset.len(), 2000);
        let plan = stratified_kfold(&dataset, 5, 0).unwrap();
        (dataset, plan)
    })
}

const TAIL_CLASS: usize = 7;

fn supervised_config() -> TrainConfig {
    TrainConfig {
        seed: 0,
        ..TrainConfig::preset("desk-supervised").unwrap()
    }
}

fn tail_recall(report: &sslkit::eval::MetricsReport) -> f64 {
    report.per_class.recall[TAIL_CLASS].unwrap_or(0.0)
}

#[test]
fn criterion_6_end_to_end_desk_scale() {
    let (dataset, plan) = longtail_benchmark();
    let fold = 0usize;
    let val = plan.fold_indices(fold);

    // (a) balanced weighted cross-entropy, 20 epochs
    let start = Instant::now();
    let config = supervised_config();
    assert_eq!(config.epochs, 20);
    let (model, history) =
        train_supervised(&config, dataset, Some((plan, fold)), None).unwrap();
    let report = evaluate_model(
        &model.encoder,
        &model.head,
        dataset,
        &val,
        (&model.stats.0, &model.stats.1),
    )
    .unwrap();
    let f1_a = report.macro_metrics.f1.unwrap();
    let secs_a = start.elapsed().as_secs_f64();
    assert!(secs_a < LEG_TIME_BUDGET_S, "(a) took {secs_a:.0}s");
    assert!(
        f1_a >= SUPERVISED_MACRO_F1_MIN,
        "(a) validation macro-F1 {f1_a:.4} < {SUPERVISED_MACRO_F1_MIN}"
    );
    assert!(history.final_loss_below_initial(5));

    // unbalanced-control arm used by (b): identical budget, no balancing
    let start_ctl = Instant::now();
    let (control, _) =
        train_supervised_unbalanced(&config, dataset, Some((plan, fold)), None).unwrap();
    let control_report = evaluate_model(
        &control.encoder,
        &control.head,
        dataset,
        &val,
        (&control.stats.0, &control.stats.1),
    )
    .unwrap();
    let control_tail = tail_recall(&control_report);
    let secs_ctl = start_ctl.elapsed().as_secs_f64();

    // (b) self-supervised pretraining (50 epochs, 64 prototypes, queue
    // capacity 256 active from epoch 15) + linear probe
    let start = Instant::now();
    let swav_config = TrainConfig {
        seed: 0,
        ..TrainConfig::preset("desk-swav").unwrap()
    };
    assert_eq!(swav_config.epochs, 50);
    assert_eq!(swav_config.prototype_count, 64);
    assert_eq!(swav_config.queue_capacity, 256);
    let (swav_model, swav_history) = train_swav(&swav_config, dataset, None).unwrap();
    assert!(swav_history.final_loss_below_initial(5));
    let probe = ProbeConfig::default();
    let (_, probe_report, _) =
        linear_probe(&swav_model.encoder, swav_model.stats, dataset, plan, fold, &probe).unwrap();
    let f1_b = probe_report.macro_metrics.f1.unwrap();
    let probe_tail = tail_recall(&probe_report);
    let secs_b = start.elapsed().as_secs_f64() + secs_ctl;
    assert!(secs_b < LEG_TIME_BUDGET_S, "(b) took {secs_b:.0}s");
    assert!(
        f1_b >= PRETRAIN_PROBE_MACRO_F1_MIN,
        "(b) probe macro-F1 {f1_b:.4} < {PRETRAIN_PROBE_MACRO_F1_MIN}"
    );
    assert!(
        probe_tail > control_tail,
        "(b) tail recall {probe_tail:.3} not above unbalanced control {control_tail:.3}"
    );

    // (c) supervised contrastive pretraining + linear probe
    let start = Instant::now();
    let supcon_config = TrainConfig {
        seed: 0,
        ..TrainConfig::preset("desk-supcon").unwrap()
    };
    let (supcon_model, supcon_history) = train_supcon(&supcon_config, dataset, None).unwrap();
    assert!(supcon_history.final_loss_below_initial(5));
    let (_, supcon_report, _) =
        linear_probe(&supcon_model.encoder, supcon_model.stats, dataset, plan, fold, &probe)
            .unwrap();
    let f1_c = supcon_report.macro_metrics.f1.unwrap();
    let secs_c = start.elapsed().as_secs_f64();
    assert!(secs_c < LEG_TIME_BUDGET_S, "(c) took {secs_c:.0}s");
    assert!(
        f1_c >= PRETRAIN_PROBE_MACRO_F1_MIN,
        "(c) probe macro-F1 {f1_c:.4} < {PRETRAIN_PROBE_MACRO_F1_MIN}"
    );

    println!(
        "criterion 6 (end-to-end: (a) CE macro-F1 {f1_a:.4} >= {SUPERVISED_MACRO_F1_MIN} in {secs_a:.0}s; \
         (b) pretrain+probe {f1_b:.4} >= {PRETRAIN_PROBE_MACRO_F1_MIN}, tail recall {probe_tail:.2} > control {control_tail:.2}, {secs_b:.0}s; \
         (c) contrastive+probe {f1_c:.4} >= {PRETRAIN_PROBE_MACRO_F1_MIN}, {secs_c:.0}s): PASS"
    );
}

// ------------------------------------------------------------- criterion 7
#[test]
fn criterion_7_determinism() {
    let (dataset, plan) = longtail_benchmark();
    let fold = 0usize;
    let config = supervised_config();

    let run = |dir: &std::path::Path| {
        let (model, _) =
            train_supervised(&config, dataset, Some((plan, fold)), Some(dir)).unwrap();
        let ckpt_path = dir.join("model.ckpt");
        supervised_checkpoint(&model).save(&ckpt_path).unwrap();
        let report = evaluate_model(
            &model.encoder,
            &model.head,
            dataset,
            &plan.fold_indices(fold),
            (&model.stats.0, &model.stats.1),
        )
        .unwrap();
        let metrics_path = dir.join("metrics.json");
        report.save_json(&metrics_path).unwrap();
        (
            hash_file(&ckpt_path).unwrap(),
            std::fs::read(&metrics_path).unwrap(),
            hash_file(&dir.join("checkpoints").join(format!("epoch_{}.ckpt", config.epochs - 1)))
                .unwrap(),
        )
    };

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (ckpt_a, metrics_a, last_a) = run(dir_a.path());
    let (ckpt_b, metrics_b, last_b) = run(dir_b.path());
    assert_eq!(ckpt_a, ckpt_b, "final checkpoints differ");
    assert_eq!(last_a, last_b, "last epoch checkpoints differ");
    assert_eq!(metrics_a, metrics_b, "metrics files differ");
    println!("criterion 7 (repeat run: checkpoint and metrics bit-identical): PASS");
}

// ------------------------------------------------------------- criterion 8
#[test]
fn criterion_8_schedule_contracts() {
    let dataset = generate_synthetic(&SyntheticSpec::small_two_class(20), 0).unwrap();
    let config = TrainConfig {
        regime: Regime::Swav,
        epochs: 5,
        batch_size: 8,
        prototype_count: 8,
        d_proj: 8,
        queue_capacity: 32,
        queue_start_epoch: 3,
        prototype_freeze_epochs: 2,
        encoder: EncoderConfig {
            input_height: 16,
            input_width: 16,
            conv1_channels: 4,
            conv2_channels: 8,
            d_emb: 16,
        },
        seed: 0,
        ..TrainConfig::default()
    };
    let (_, history) = train_swav(&config, &dataset, None).unwrap();
    let init_hash = hash_f64s(
        PrototypeBank::init(config.prototype_count, config.d_proj, config.seed)
            .unwrap()
            .vectors
            .data(),
    );

    // prototypes bit-identical through the freeze window, then updated
    for epoch in 0..config.prototype_freeze_epochs {
        assert_eq!(
            history.records[epoch].proto_hash.as_deref(),
            Some(init_hash.as_str()),
            "prototypes moved during freeze epoch {epoch}"
        );
    }
    assert_ne!(
        history.records[config.epochs - 1].proto_hash.as_deref(),
        Some(init_hash.as_str()),
        "prototypes never updated after the freeze window"
    );

    // queue provably unused before its start epoch (history counters)
    for epoch in 0..config.queue_start_epoch {
        assert_eq!(
            history.records[epoch].queue_rows, 0,
            "queue rows used in epoch {epoch} before activation"
        );
    }
    assert!(
        history.records[config.queue_start_epoch].queue_rows > 0,
        "queue unused at its start epoch"
    );
    println!("criterion 8 (prototype freeze + queue activation schedule contracts): PASS");
}

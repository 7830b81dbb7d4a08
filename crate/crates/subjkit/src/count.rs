//! Predicting how many subject headings a record should carry.
//!
//! A ridge regression over record embeddings is the default; a cosine kNN
//! over the training vectors is the alternative. Both share a model file
//! format and a clamped rounding rule at prediction time.

use std::io::{BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cholesky_solve, dot, Mat};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_COUNT_CAP: u32 = 10;
/// Grid searched by [`tune_lambda`].
pub const LAMBDA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Error)]
pub enum CountError {
    #[error("feature rows and targets disagree in shape")]
    ShapeMismatch,
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("normal equations are singular; regularize with a positive lambda")]
    SingularSystem,
    #[error("k must be in 1..={n}, got {k}")]
    KTooLarge { k: usize, n: usize },
    #[error("vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inputs contain non-finite values")]
    NonFinite,
    #[error("lambda must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Format(String),
}

/// Linear model with an unpenalized intercept: only the weights are shrunk
/// toward zero, never the bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RidgeModel {
    pub dim: usize,
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnRef {
    pub vector: Vec<f32>,
    pub count: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnModel {
    pub dim: usize,
    pub k: usize,
    pub refs: Vec<KnnRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CountModel {
    Ridge(RidgeModel),
    Knn(KnnModel),
}

impl CountModel {
    pub fn dim(&self) -> usize {
        match self {
            Self::Ridge(m) => m.dim,
            Self::Knn(m) => m.dim,
        }
    }
}

/// Fits ridge regression by solving the centered normal equations with
/// Cholesky. Centering keeps the intercept out of the penalty: weights solve
/// `(Xc'Xc + lambda I) w = Xc' yc` and the bias recovers the means.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel, CountError> {
    let n = x.len();
    if n != y.len() {
        return Err(CountError::ShapeMismatch);
    }
    if n < 2 {
        return Err(CountError::InsufficientSamples { need: 2, got: n });
    }
    if lambda < 0.0 {
        return Err(CountError::NegativeLambda(lambda));
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(CountError::ShapeMismatch);
    }
    if x.iter().flatten().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(CountError::NonFinite);
    }

    let mut x_mean = vec![0.0; dim];
    for row in x {
        for (m, v) in x_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut x_mean {
        *m /= n as f64;
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let mut a = Mat::zeros(dim, dim);
    let mut rhs = vec![0.0; dim];
    for (row, &yi) in x.iter().zip(y) {
        let centered: Vec<f64> = row.iter().zip(&x_mean).map(|(v, m)| v - m).collect();
        let yc = yi - y_mean;
        for i in 0..dim {
            rhs[i] += centered[i] * yc;
            for j in i..dim {
                a[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..dim {
        a[(i, i)] += lambda;
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }

    let weights = cholesky_solve(&a, &rhs).ok_or(CountError::SingularSystem)?;
    let bias = y_mean - dot(&x_mean, &weights);
    Ok(RidgeModel {
        dim,
        lambda,
        weights,
        bias,
    })
}

/// Stores the training set for cosine k-nearest-neighbor prediction.
pub fn fit_knn_count(x: &[Vec<f32>], y: &[f64], k: usize) -> Result<KnnModel, CountError> {
    let n = x.len();
    if n != y.len() {
        return Err(CountError::ShapeMismatch);
    }
    if k == 0 || k > n {
        return Err(CountError::KTooLarge { k, n });
    }
    let dim = x.first().map_or(0, Vec::len);
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(CountError::ShapeMismatch);
    }
    Ok(KnnModel {
        dim,
        k,
        refs: x
            .iter()
            .zip(y)
            .map(|(vector, &count)| KnnRef {
                vector: vector.clone(),
                count,
            })
            .collect(),
    })
}

fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += f64::from(x) * f64::from(y);
        na += f64::from(x) * f64::from(x);
        nb += f64::from(y) * f64::from(y);
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}

/// Raw (unclamped) model output for a single vector.
pub fn predict_raw(model: &CountModel, v: &[f32]) -> Result<f64, CountError> {
    if v.len() != model.dim() {
        return Err(CountError::DimensionMismatch {
            expected: model.dim(),
            got: v.len(),
        });
    }
    let raw = match model {
        CountModel::Ridge(m) => {
            m.bias
                + m.weights
                    .iter()
                    .zip(v)
                    .map(|(w, &x)| w * f64::from(x))
                    .sum::<f64>()
        }
        CountModel::Knn(m) => {
            // Ties break toward the lower reference index, so equal-distance
            // neighbors resolve the same way on every run.
            let mut dists: Vec<(f64, usize)> = m
                .refs
                .iter()
                .enumerate()
                .map(|(i, r)| (cosine_distance(v, &r.vector), i))
                .collect();
            dists.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            });
            dists[..m.k].iter().map(|&(_, i)| m.refs[i].count).sum::<f64>() / m.k as f64
        }
    };
    if !raw.is_finite() {
        return Err(CountError::NonFinite);
    }
    Ok(raw)
}

/// Predicts a heading count: model output rounded half-up and clamped to
/// `[1, cap]`.
pub fn predict_count(model: &CountModel, v: &[f32], cap: u32) -> Result<u32, CountError> {
    debug_assert!(cap >= 1);
    let raw = predict_raw(model, v)?;
    let rounded = (raw + 0.5).floor();
    Ok(rounded.clamp(1.0, f64::from(cap.max(1))) as u32)
}

/// Count-agreement metrics between predicted and gold heading counts.
#[derive(Debug, Clone, Serialize)]
pub struct CountMetrics {
    pub n: usize,
    pub avg_abs_diff: f64,
    pub rmse: f64,
    /// Pearson correlation; absent when either sequence is constant.
    pub pcc: Option<f64>,
}

pub fn evaluate_counts(pred: &[u32], gold: &[u32]) -> Result<CountMetrics, CountError> {
    if pred.len() != gold.len() {
        return Err(CountError::ShapeMismatch);
    }
    let n = pred.len();
    if n == 0 {
        return Err(CountError::InsufficientSamples { need: 1, got: 0 });
    }
    let nf = n as f64;
    let p: Vec<f64> = pred.iter().map(|&v| f64::from(v)).collect();
    let g: Vec<f64> = gold.iter().map(|&v| f64::from(v)).collect();

    let avg_abs_diff = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / nf;
    let rmse = (p.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / nf).sqrt();

    let pm = p.iter().sum::<f64>() / nf;
    let gm = g.iter().sum::<f64>() / nf;
    let cov = p.iter().zip(&g).map(|(a, b)| (a - pm) * (b - gm)).sum::<f64>() / nf;
    let var_p = p.iter().map(|a| (a - pm) * (a - pm)).sum::<f64>() / nf;
    let var_g = g.iter().map(|b| (b - gm) * (b - gm)).sum::<f64>() / nf;
    let pcc = if var_p == 0.0 || var_g == 0.0 {
        None
    } else {
        Some(cov / (var_p.sqrt() * var_g.sqrt()))
    };

    Ok(CountMetrics {
        n,
        avg_abs_diff,
        rmse,
        pcc,
    })
}

/// Picks the lambda with the lowest mean absolute validation error under
/// 5-fold cross-validation (folds are `index mod 5`, so the search is
/// deterministic). Returns the winner and the per-lambda scores.
pub fn tune_lambda(x: &[Vec<f64>], y: &[f64]) -> Result<(f64, Vec<(f64, f64)>), CountError> {
    const FOLDS: usize = 5;
    let n = x.len();
    if n != y.len() {
        return Err(CountError::ShapeMismatch);
    }
    if n < FOLDS + 1 {
        return Err(CountError::InsufficientSamples { need: FOLDS + 1, got: n });
    }

    let mut scores = Vec::with_capacity(LAMBDA_GRID.len());
    for &lambda in &LAMBDA_GRID {
        let mut fold_errors = Vec::with_capacity(FOLDS);
        for fold in 0..FOLDS {
            let mut train_x = Vec::new();
            let mut train_y = Vec::new();
            let mut val: Vec<usize> = Vec::new();
            for i in 0..n {
                if i % FOLDS == fold {
                    val.push(i);
                } else {
                    train_x.push(x[i].clone());
                    train_y.push(y[i]);
                }
            }
            if train_x.len() < 2 || val.is_empty() {
                continue;
            }
            let model = fit_ridge(&train_x, &train_y, lambda)?;
            let err = val
                .iter()
                .map(|&i| {
                    let pred = model.bias + dot(&model.weights, &x[i]);
                    (pred - y[i]).abs()
                })
                .sum::<f64>()
                / val.len() as f64;
            fold_errors.push(err);
        }
        let mean = fold_errors.iter().sum::<f64>() / fold_errors.len() as f64;
        scores.push((lambda, mean));
    }
    let best = scores
        .iter()
        .copied()
        .reduce(|best, cur| if cur.1 < best.1 { cur } else { best })
        .expect("grid is non-empty");
    Ok((best.0, scores))
}

pub fn save_count_model(path: &Path, model: &CountModel) -> Result<(), CountError> {
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, model)
        .map_err(|e| CountError::Format(e.to_string()))?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn load_count_model(path: &Path) -> Result<CountModel, CountError> {
    let file = std::fs::File::open(path)?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CountError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planted_data(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = rng.random_range(-1.0..1.0);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = x.iter().map(|row| dot(row, &w) + b).collect();
        (x, y, w, b)
    }

    #[test]
    fn ridge_recovers_a_planted_model_without_noise() {
        let (x, y, w, b) = planted_data(60, 5, 11);
        let model = fit_ridge(&x, &y, 0.0).unwrap();
        for (got, want) in model.weights.iter().zip(&w) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        assert!((model.bias - b).abs() < 1e-8);
    }

    #[test]
    fn larger_lambda_shrinks_the_weights() {
        let (x, y, _, _) = planted_data(60, 5, 13);
        let norm = |lambda: f64| {
            let m = fit_ridge(&x, &y, lambda).unwrap();
            dot(&m.weights, &m.weights).sqrt()
        };
        let norms = [norm(0.01), norm(1.0), norm(100.0)];
        assert!(norms[1] < norms[0], "{norms:?}");
        assert!(norms[2] < norms[1], "{norms:?}");
    }

    #[test]
    fn fitted_weights_minimize_the_penalized_objective() {
        let (x, y, _, _) = planted_data(30, 4, 17);
        let lambda = 0.5;
        let model = fit_ridge(&x, &y, lambda).unwrap();

        let objective = |w: &[f64], b: f64| -> f64 {
            let residuals: f64 = x
                .iter()
                .zip(&y)
                .map(|(row, target)| {
                    let r = dot(row, w) + b - target;
                    r * r
                })
                .sum();
            residuals + lambda * dot(w, w)
        };
        let at_fit = objective(&model.weights, model.bias);

        for eps in [1e-4, -1e-4] {
            for j in 0..model.weights.len() {
                let mut w = model.weights.clone();
                w[j] += eps;
                assert!(
                    objective(&w, model.bias) >= at_fit,
                    "perturbing weight {j} by {eps} improved the objective"
                );
            }
            assert!(
                objective(&model.weights, model.bias + eps) >= at_fit,
                "perturbing the bias by {eps} improved the objective"
            );
        }
    }

    #[test]
    fn duplicate_columns_without_lambda_are_singular() {
        let x: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let v = f64::from(i);
                vec![v, v, 1.0 - v]
            })
            .collect();
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        assert!(matches!(
            fit_ridge(&x, &y, 0.0),
            Err(CountError::SingularSystem)
        ));
        // The same system regularized is fine.
        assert!(fit_ridge(&x, &y, 1.0).is_ok());
    }

    #[test]
    fn fit_rejects_bad_shapes() {
        let x = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(matches!(
            fit_ridge(&x, &[1.0, 2.0], 1.0),
            Err(CountError::ShapeMismatch)
        ));
        assert!(matches!(
            fit_ridge(&[vec![1.0]], &[1.0], 1.0),
            Err(CountError::InsufficientSamples { .. })
        ));
        assert!(matches!(
            fit_ridge(&[vec![1.0], vec![2.0]], &[1.0, f64::NAN], 1.0),
            Err(CountError::NonFinite)
        ));
    }

    #[test]
    fn prediction_rounds_half_up_and_clamps() {
        let model = CountModel::Ridge(RidgeModel {
            dim: 1,
            lambda: 0.0,
            weights: vec![1.0],
            bias: 0.0,
        });
        let predict = |x: f32| predict_count(&model, &[x], 10).unwrap();
        assert_eq!(predict(2.5), 3);
        assert_eq!(predict(2.4), 2);
        assert_eq!(predict(-3.0), 1);
        assert_eq!(predict(0.2), 1);
        assert_eq!(predict(42.0), 10);
        assert_eq!(predict_count(&model, &[42.0], 6).unwrap(), 6);
    }

    #[test]
    fn prediction_checks_dimensions() {
        let model = CountModel::Ridge(RidgeModel {
            dim: 2,
            lambda: 0.0,
            weights: vec![1.0, 1.0],
            bias: 0.0,
        });
        assert!(matches!(
            predict_count(&model, &[1.0], 10),
            Err(CountError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    fn unit(angle_deg: f64) -> Vec<f32> {
        let r = angle_deg.to_radians();
        vec![r.cos() as f32, r.sin() as f32]
    }

    #[test]
    fn knn_averages_the_nearest_counts() {
        let refs = vec![unit(0.0), unit(10.0), unit(20.0), unit(90.0)];
        let counts = vec![2.0, 4.0, 6.0, 100.0];
        let model = CountModel::Knn(fit_knn_count(&refs, &counts, 3).unwrap());
        assert_eq!(predict_count(&model, &unit(10.0), 10).unwrap(), 4);
    }

    #[test]
    fn knn_ties_break_toward_the_lower_index() {
        let refs = vec![unit(45.0), unit(45.0)];
        let model = CountModel::Knn(fit_knn_count(&refs, &[7.0, 9.0], 1).unwrap());
        assert_eq!(predict_count(&model, &unit(45.0), 10).unwrap(), 7);
    }

    #[test]
    fn knn_rejects_out_of_range_k() {
        let refs = vec![unit(0.0)];
        assert!(matches!(
            fit_knn_count(&refs, &[1.0], 2),
            Err(CountError::KTooLarge { k: 2, n: 1 })
        ));
        assert!(matches!(
            fit_knn_count(&refs, &[1.0], 0),
            Err(CountError::KTooLarge { k: 0, n: 1 })
        ));
    }

    #[test]
    fn count_metrics_match_hand_computation() {
        let metrics = evaluate_counts(&[3, 5, 2], &[4, 5, 1]).unwrap();
        assert!((metrics.avg_abs_diff - 2.0 / 3.0).abs() < 1e-12);
        assert!((metrics.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let expected_pcc = 17.0 / 364.0f64.sqrt();
        assert!((metrics.pcc.unwrap() - expected_pcc).abs() < 1e-12);
    }

    #[test]
    fn constant_sequences_have_no_correlation() {
        let metrics = evaluate_counts(&[3, 3, 3], &[1, 2, 3]).unwrap();
        assert_eq!(metrics.pcc, None);
        assert!(evaluate_counts(&[1], &[1, 2]).is_err());
        assert!(evaluate_counts(&[], &[]).is_err());
    }

    #[test]
    fn pcc_survives_positive_affine_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let gold: Vec<u32> = (0..40).map(|_| rng.random_range(1..=10)).collect();
        let pred: Vec<u32> = gold
            .iter()
            .map(|&g| (g + rng.random_range(0..3)).min(10))
            .collect();
        let base = evaluate_counts(&pred, &gold).unwrap().pcc.unwrap();

        for (a, c) in [(2u32, 0u32), (3, 1), (7, 9), (1, 5)] {
            let scaled: Vec<u32> = pred.iter().map(|&p| a * p + c).collect();
            let pcc = evaluate_counts(&scaled, &gold).unwrap().pcc.unwrap();
            assert!(
                (pcc - base).abs() <= 1e-12,
                "pcc moved from {base} to {pcc} under pred*{a}+{c}"
            );
        }
    }

    #[test]
    fn tuning_scores_every_lambda_on_the_grid() {
        let (x, y, _, _) = planted_data(50, 4, 17);
        let (best, scores) = tune_lambda(&x, &y).unwrap();
        assert_eq!(scores.len(), LAMBDA_GRID.len());
        assert!(LAMBDA_GRID.contains(&best));
        // Noise-free planted data wants the lightest penalty.
        assert_eq!(best, 0.01);
    }

    #[test]
    fn model_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = CountModel::Ridge(RidgeModel {
            dim: 3,
            lambda: 1.0,
            weights: vec![0.5, -0.25, 0.125],
            bias: 2.0,
        });
        save_count_model(&path, &model).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"kind\": \"ridge\""));
        let back = load_count_model(&path).unwrap();
        match back {
            CountModel::Ridge(m) => {
                assert_eq!(m.weights, vec![0.5, -0.25, 0.125]);
                assert_eq!(m.bias, 2.0);
            }
            CountModel::Knn(_) => panic!("wrong kind"),
        }
    }
}

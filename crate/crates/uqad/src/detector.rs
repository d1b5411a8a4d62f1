//! Linear logistic anomaly detector with stratified cross-validated
//! regularization and exact rank-based ROC-AUC.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Trained detector: linear logistic model over z-scored features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
}

impl DetectorModel {
    /// Anomaly score (logit) for one feature row.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut s = self.b;
        for i in 0..self.w.len() {
            s += self.w[i] * (x[i] - self.feature_means[i]) / self.feature_stds[i];
        }
        s
    }

    pub fn scores(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| self.score(r.as_slice().expect("standard layout")))
            .collect()
    }
}

/// AUC with positive/negative counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocResult {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// ROC AUC by the rank (Mann-Whitney) statistic; tied scores contribute 1/2.
/// Labels are binary with 1 = positive (anomaly).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateData(
            "roc_auc needs both classes present".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric {
            name: "scores".into(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Average ranks within tie groups (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(RocResult {
        auc: u / (n_pos as f64 * n_neg as f64),
        n_pos,
        n_neg,
    })
}

/// Fit the L2-regularized logistic detector by Newton's method with
/// backtracking, to gradient norm < 1e-8. Features are z-scored with
/// training-set statistics; constant features get their std clamped to 1.
pub fn fit_logistic(x: &Array2<f64>, y: &[u8], lambda: f64) -> Result<DetectorModel> {
    let (model, _trace) = fit_logistic_traced(x, y, lambda)?;
    Ok(model)
}

/// Same as [`fit_logistic`] but also returns the per-iteration loss trace
/// (non-increasing by construction).
pub fn fit_logistic_traced(
    x: &Array2<f64>,
    y: &[u8],
    lambda: f64,
) -> Result<(DetectorModel, Vec<f64>)> {
    let n = x.nrows();
    let d = x.ncols();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows vs {} labels", y.len())));
    }
    if lambda <= 0.0 {
        return Err(Error::Contract(format!("lambda must be > 0, got {lambda}")));
    }
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::DegenerateData(
            "logistic fit needs both classes present".into(),
        ));
    }

    // Standardization statistics from the training set only.
    let mut means = vec![0.0; d];
    let mut stds = vec![0.0; d];
    for j in 0..d {
        let col = x.column(j);
        let m = col.sum() / n as f64;
        let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        means[j] = m;
        stds[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let mut z = x.clone();
    for j in 0..d {
        let (m, s) = (means[j], stds[j]);
        z.column_mut(j).mapv_inplace(|v| (v - m) / s);
    }

    // theta = (w_0..w_{d-1}, b); bias unregularized.
    let mut theta = vec![0.0; d + 1];
    let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
        let mut loss = 0.0;
        let mut grad = vec![0.0; d + 1];
        for i in 0..n {
            let mut m = theta[d];
            for j in 0..d {
                m += theta[j] * z[[i, j]];
            }
            // ln(1 + e^m) - y m, computed stably.
            loss += if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
            loss -= y[i] as f64 * m;
            let p = 1.0 / (1.0 + (-m).exp());
            let r = p - y[i] as f64;
            for j in 0..d {
                grad[j] += r * z[[i, j]];
            }
            grad[d] += r;
        }
        loss /= n as f64;
        for g in grad.iter_mut() {
            *g /= n as f64;
        }
        for j in 0..d {
            loss += lambda * theta[j] * theta[j] / 2.0;
            grad[j] += lambda * theta[j];
        }
        (loss, grad)
    };

    let mut trace = Vec::new();
    let (mut loss, mut grad) = objective(&theta);
    trace.push(loss);
    for _iter in 0..200 {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-8 {
            break;
        }
        // Hessian: (1/n) Z^T D Z + lambda I (no reg on the bias entry).
        let dim = d + 1;
        let mut h = vec![0.0; dim * dim];
        for i in 0..n {
            let mut m = theta[d];
            for j in 0..d {
                m += theta[j] * z[[i, j]];
            }
            let p = 1.0 / (1.0 + (-m).exp());
            let wgt = (p * (1.0 - p)).max(1e-12) / n as f64;
            for a in 0..dim {
                let za = if a < d { z[[i, a]] } else { 1.0 };
                for b in a..dim {
                    let zb = if b < d { z[[i, b]] } else { 1.0 };
                    h[a * dim + b] += wgt * za * zb;
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                h[a * dim + b] = h[b * dim + a];
            }
        }
        for j in 0..d {
            h[j * dim + j] += lambda;
        }
        let step = solve_sym(&mut h, &grad, dim)?;
        // Backtracking line search keeps the loss non-increasing.
        let mut alpha = 1.0;
        loop {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(t, s)| t - alpha * s)
                .collect();
            let (cl, cg) = objective(&cand);
            if cl <= loss + 1e-15 {
                theta = cand;
                loss = cl;
                grad = cg;
                trace.push(loss);
                break;
            }
            alpha /= 2.0;
            if alpha < 1e-12 {
                trace.push(loss);
                break;
            }
        }
    }

    Ok((
        DetectorModel {
            w: theta[..d].to_vec(),
            b: theta[d],
            lambda,
            feature_means: means,
            feature_stds: stds,
        },
        trace,
    ))
}

/// Gaussian elimination with partial pivoting for the small Newton system.
fn solve_sym(a: &mut [f64], rhs: &[f64], dim: usize) -> Result<Vec<f64>> {
    let mut b = rhs.to_vec();
    for col in 0..dim {
        let mut piv = col;
        for r in col + 1..dim {
            if a[r * dim + col].abs() > a[piv * dim + col].abs() {
                piv = r;
            }
        }
        if a[piv * dim + col].abs() < 1e-300 {
            return Err(Error::Numeric {
                name: "newton system".into(),
            });
        }
        if piv != col {
            for c in 0..dim {
                a.swap(col * dim + c, piv * dim + c);
            }
            b.swap(col, piv);
        }
        for r in col + 1..dim {
            let f = a[r * dim + col] / a[col * dim + col];
            for c in col..dim {
                a[r * dim + c] -= f * a[col * dim + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; dim];
    for r in (0..dim).rev() {
        let mut s = b[r];
        for c in r + 1..dim {
            s -= a[r * dim + c] * x[c];
        }
        x[r] = s / a[r * dim + r];
    }
    Ok(x)
}

/// Stratified k-fold assignment: per class, shuffled round-robin. Returns a
/// fold id per sample.
pub fn stratified_folds(y: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Contract("need at least 2 folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0usize; y.len()];
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if idx.len() < k {
            return Err(Error::Stratification(format!(
                "class {class} has {} samples, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

/// Pick the regularization strength maximizing mean validation AUC over k
/// stratified folds; ties break toward the larger lambda.
pub fn select_lambda(
    x: &Array2<f64>,
    y: &[u8],
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Contract("empty lambda grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let fold = stratified_folds(y, k, seed)?;
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &lambda in &grid {
        let mut mean_auc = 0.0;
        for f in 0..k {
            let train_idx: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
            let val_idx: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == f).collect();
            let xt = select_rows(x, &train_idx);
            let yt: Vec<u8> = train_idx.iter().map(|&i| y[i]).collect();
            let xv = select_rows(x, &val_idx);
            let yv: Vec<u8> = val_idx.iter().map(|&i| y[i]).collect();
            if yv.iter().all(|&l| l == yv[0]) {
                return Err(Error::Stratification(
                    "validation fold lost a class".into(),
                ));
            }
            let model = fit_logistic(&xt, &yt, lambda)?;
            mean_auc += roc_auc(&model.scores(&xv), &yv)?.auc;
        }
        mean_auc /= k as f64;
        if mean_auc >= best.0 {
            best = (mean_auc, lambda);
        }
    }
    Ok(best.1)
}

/// The default grid and fold count used by the pipeline.
pub const LAMBDA_GRID: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];
pub const CV_FOLDS: usize = 5;

fn select_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).assign(&m.row(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn pair_counting_example() {
        // pos {0.9, 0.4}, neg {0.6, 0.2}: 3 of 4 pairs correctly ordered.
        let r = roc_auc(&[0.9, 0.4, 0.6, 0.2], &[1, 1, 0, 0]).unwrap();
        assert_abs_diff_eq!(r.auc, 0.75, epsilon = 1e-15);
        assert_eq!((r.n_pos, r.n_neg), (2, 2));
    }

    #[test]
    fn all_ties_give_half() {
        let r = roc_auc(&[0.5; 6], &[1, 0, 1, 0, 1, 0]).unwrap();
        assert_abs_diff_eq!(r.auc, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn perfect_ordering_gives_one() {
        let r = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(r.auc, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::DegenerateData(_))
        ));
    }

    /// Exhaustive O(n_pos * n_neg) pair-counting reference.
    pub fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn rank_auc_matches_pair_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let n = rng.gen_range(2..200);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            // Quantized scores so ties actually occur.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0..20) as f64) / 20.0)
                .collect();
            let r = roc_auc(&scores, &labels).unwrap();
            assert_abs_diff_eq!(r.auc, auc_oracle(&scores, &labels), epsilon = 1e-12);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform_and_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.gen_range(4..80);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let a = roc_auc(&scores, &labels).unwrap().auc;
            let transformed: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
            assert_abs_diff_eq!(a, roc_auc(&transformed, &labels).unwrap().auc, epsilon = 1e-12);
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            assert_abs_diff_eq!(
                a + roc_auc(&negated, &labels).unwrap().auc,
                1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn separable_feature_reaches_training_auc_one() {
        let x = array![[2.0], [3.0], [4.0], [0.1], [0.5], [0.9]];
        let y = [1, 1, 1, 0, 0, 0];
        let m = fit_logistic(&x, &y, 1e-3).unwrap();
        let r = roc_auc(&m.scores(&x), &y).unwrap();
        assert_abs_diff_eq!(r.auc, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn flipping_labels_negates_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_simple_fn((60, 3), || rng.sample::<f64, _>(StandardNormal));
        let y: Vec<u8> = (0..60)
            .map(|i| if x[[i, 0]] + 0.3 * x[[i, 2]] > 0.1 { 1 } else { 0 })
            .collect();
        let flipped: Vec<u8> = y.iter().map(|&l| 1 - l).collect();
        let a = fit_logistic(&x, &y, 0.1).unwrap();
        let b = fit_logistic(&x, &flipped, 0.1).unwrap();
        for (wa, wb) in a.w.iter().zip(&b.w) {
            assert_abs_diff_eq!(wa, &-wb, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(a.b, -b.b, epsilon = 1e-6);
    }

    #[test]
    fn huge_lambda_shrinks_weights() {
        let x = array![[2.0], [3.0], [4.0], [0.1], [0.5], [0.9]];
        let y = [1, 1, 1, 0, 0, 0];
        let m = fit_logistic(&x, &y, 1e6).unwrap();
        let norm = m.w.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }

    #[test]
    fn loss_trace_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_simple_fn((80, 4), || rng.sample::<f64, _>(StandardNormal));
        let y: Vec<u8> = (0..80).map(|i| (x[[i, 1]] > 0.0) as u8).collect();
        let (_, trace) = fit_logistic_traced(&x, &y, 0.01).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn single_grid_value_is_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_simple_fn((40, 2), || rng.sample::<f64, _>(StandardNormal));
        let y: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        assert_eq!(select_lambda(&x, &y, &[0.37], 4, 0).unwrap(), 0.37);
    }

    #[test]
    fn folds_are_stratified_within_one_sample() {
        let y: Vec<u8> = (0..103).map(|i| (i % 3 == 0) as u8).collect();
        let k = 5;
        let fold = stratified_folds(&y, k, 1).unwrap();
        let n_pos_total = y.iter().filter(|&&l| l == 1).count();
        for f in 0..k {
            let pos = (0..y.len()).filter(|&i| fold[i] == f && y[i] == 1).count();
            let expected = n_pos_total as f64 / k as f64;
            assert!((pos as f64 - expected).abs() <= 1.0);
        }
    }

    #[test]
    fn cross_validated_detector_separates_two_gaussians() {
        // 4 sigma separation on one informative feature.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 800;
        let mut x = Array2::zeros((n, 2));
        let mut y = vec![0u8; n];
        for i in 0..n {
            let pos = i % 2 == 1;
            y[i] = pos as u8;
            let center = if pos { 4.0 } else { 0.0 };
            x[[i, 0]] = center + rng.sample::<f64, _>(StandardNormal);
            x[[i, 1]] = rng.sample::<f64, _>(StandardNormal);
        }
        let train: Vec<usize> = (0..n / 2).collect();
        let test: Vec<usize> = (n / 2..n).collect();
        let xt = select_rows(&x, &train);
        let yt: Vec<u8> = train.iter().map(|&i| y[i]).collect();
        let lambda = select_lambda(&xt, &yt, &LAMBDA_GRID, CV_FOLDS, 0).unwrap();
        let model = fit_logistic(&xt, &yt, lambda).unwrap();
        let xv = select_rows(&x, &test);
        let yv: Vec<u8> = test.iter().map(|&i| y[i]).collect();
        let r = roc_auc(&model.scores(&xv), &yv).unwrap();
        assert!(r.auc >= 0.99, "held-out AUC {}", r.auc);
    }
}

//! Monte-Carlo prediction samples and the uncertainty feature vector.

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::bayes::mc_dropout_predict;
use crate::candidates::{ModelParams, TrainedCandidate, Variant};
use crate::nn::{softmax, DropoutMode};
use crate::{Error, Result};

/// T x K matrix of probability rows for one input (T Monte-Carlo passes).
#[derive(Debug, Clone)]
pub struct PredictionSamples {
    pub probs: Array2<f64>,
}

impl PredictionSamples {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (i, row) in probs.rows().into_iter().enumerate() {
            if (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "sample row {i} sums to {}, expected 1",
                    row.sum()
                )));
            }
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Contract(format!("sample row {i} outside [0, 1]")));
            }
        }
        Ok(Self { probs })
    }

    pub fn num_samples(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }
}

/// Uncertainty features in fixed order: ML carries only the prediction
/// entropy; Bayesian variants carry
/// (mean_entropy, std_entropy, entropy_of_mean, mean_class_std).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Shannon entropy in nats, with 0 ln 0 = 0. The vector must be a
/// probability distribution (entries >= 0, sum 1 within 1e-9).
pub fn entropy(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "probability vector sums to {sum}, expected 1"
        )));
    }
    if p.iter().any(|&v| v < 0.0) {
        return Err(Error::Contract("negative probability entry".into()));
    }
    Ok(p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum())
}

/// Draw T prediction samples per example of `x`.
///
/// ML: one deterministic pass, duplicated T times so the downstream interface
/// is uniform. BD: T stochastic dropout passes. OSBA/SV: T passes, each with
/// a fresh full-network weight draw.
pub fn predict_samples_batch(
    candidate: &TrainedCandidate,
    x: &Array2<f64>,
    t: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PredictionSamples>> {
    if t == 0 {
        return Err(Error::Contract("need at least one MC sample".into()));
    }
    let n = x.nrows();
    let k = crate::candidates::NUM_IN_CLASSES;
    let mut per_example: Vec<Array2<f64>> = vec![Array2::zeros((t, k)); n];
    match (&candidate.variant, &candidate.model) {
        (Variant::Ml, ModelParams::Deterministic(_)) => {
            let probs = candidate.predict_deterministic(x)?;
            for (i, m) in per_example.iter_mut().enumerate() {
                for mut row in m.rows_mut() {
                    row.assign(&probs.row(i));
                }
            }
        }
        (Variant::Bd, ModelParams::Deterministic(net)) => {
            for s in 0..t {
                let probs = mc_dropout_predict(net, x, rng)?;
                for i in 0..n {
                    per_example[i].row_mut(s).assign(&probs.row(i));
                }
            }
        }
        (Variant::Osba | Variant::Sv, ModelParams::Variational(net)) => {
            for s in 0..t {
                let sampled = net.sample_network(rng);
                let dense: Vec<_> = sampled.into_iter().map(|l| l.layer).collect();
                let (logits, _) = crate::nn::forward_layers(
                    &dense,
                    crate::nn::DropoutSpec::off(),
                    x,
                    DropoutMode::Off,
                    None,
                )?;
                let probs = softmax(&logits);
                for i in 0..n {
                    per_example[i].row_mut(s).assign(&probs.row(i));
                }
            }
        }
        (v, _) => {
            return Err(Error::Variant(format!(
                "variant {v} does not match its stored model family"
            )))
        }
    }
    per_example.into_iter().map(PredictionSamples::new).collect()
}

/// Single-input convenience wrapper around [`predict_samples_batch`].
pub fn predict_samples(
    candidate: &TrainedCandidate,
    x: &Array2<f64>,
    t: usize,
    rng: &mut impl Rng,
) -> Result<PredictionSamples> {
    if x.nrows() != 1 {
        return Err(Error::Dimension(format!(
            "predict_samples expects one input row, got {}",
            x.nrows()
        )));
    }
    Ok(predict_samples_batch(candidate, x, t, rng)?
        .pop()
        .expect("one example in, one sample set out"))
}

/// Reduce a sample set to the detector's feature vector.
///
/// Standard deviations use the population convention (divisor T), so a
/// sample set of identical rows has exactly zero spread.
pub fn extract_features(samples: &PredictionSamples, variant: Variant) -> Result<FeatureVector> {
    let t = samples.num_samples() as f64;
    let first_entropy = entropy(samples.probs.row(0).as_slice().unwrap())?;
    if variant == Variant::Ml {
        return Ok(FeatureVector {
            values: vec![first_entropy],
        });
    }
    let entropies: Vec<f64> = samples
        .probs
        .rows()
        .into_iter()
        .map(|r| entropy(r.as_slice().unwrap()))
        .collect::<Result<_>>()?;
    let mean_entropy = entropies.iter().sum::<f64>() / t;
    let std_entropy = (entropies
        .iter()
        .map(|e| (e - mean_entropy) * (e - mean_entropy))
        .sum::<f64>()
        / t)
        .sqrt();
    let mean_row = samples.probs.mean_axis(Axis(0)).expect("nonempty");
    let entropy_of_mean = entropy(mean_row.as_slice().unwrap())?;
    let mut class_std_sum = 0.0;
    for k in 0..samples.num_classes() {
        let col = samples.probs.column(k);
        let m = col.sum() / t;
        let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / t;
        class_std_sum += var.sqrt();
    }
    let mean_class_std = class_std_sum / samples.num_classes() as f64;
    Ok(FeatureVector {
        values: vec![mean_entropy, std_entropy, entropy_of_mean, mean_class_std],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_reference_points() {
        assert_abs_diff_eq!(
            entropy(&[0.25, 0.25, 0.25, 0.25]).unwrap(),
            4.0_f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(entropy(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap(),
            2.0_f64.ln(),
            epsilon = 1e-12
        );
        assert!(entropy(&[0.7, 0.7]).is_err());
        assert!(entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn identical_rows_have_zero_spread() {
        let p = array![[0.7, 0.1, 0.1, 0.1], [0.7, 0.1, 0.1, 0.1]];
        let s = PredictionSamples::new(p).unwrap();
        let f = extract_features(&s, Variant::Bd).unwrap();
        let h = entropy(&[0.7, 0.1, 0.1, 0.1]).unwrap();
        assert_abs_diff_eq!(f.values[0], h, epsilon = 1e-12);
        assert_abs_diff_eq!(f.values[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.values[2], h, epsilon = 1e-12);
        assert_abs_diff_eq!(f.values[3], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn hand_computed_two_sample_case() {
        let p = array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        let s = PredictionSamples::new(p).unwrap();
        let f = extract_features(&s, Variant::Osba).unwrap();
        assert_abs_diff_eq!(f.values[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.values[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.values[2], 2.0_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(f.values[3], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn ml_features_have_length_one() {
        let p = array![[0.4, 0.3, 0.2, 0.1]];
        let s = PredictionSamples::new(p).unwrap();
        let f = extract_features(&s, Variant::Ml).unwrap();
        assert_eq!(f.values.len(), 1);
        assert_abs_diff_eq!(
            f.values[0],
            entropy(&[0.4, 0.3, 0.2, 0.1]).unwrap(),
            epsilon = 1e-12
        );
    }

    /// Naive double-loop reference for the full 4-feature computation.
    fn naive_features(probs: &Array2<f64>) -> [f64; 4] {
        let t = probs.nrows();
        let k = probs.ncols();
        let mut hs = vec![0.0; t];
        for i in 0..t {
            for j in 0..k {
                let v = probs[[i, j]];
                if v > 0.0 {
                    hs[i] -= v * v.ln();
                }
            }
        }
        let mh = hs.iter().sum::<f64>() / t as f64;
        let sh = (hs.iter().map(|h| (h - mh).powi(2)).sum::<f64>() / t as f64).sqrt();
        let mut mean = vec![0.0; k];
        for j in 0..k {
            for i in 0..t {
                mean[j] += probs[[i, j]];
            }
            mean[j] /= t as f64;
        }
        let mut hm = 0.0;
        for j in 0..k {
            if mean[j] > 0.0 {
                hm -= mean[j] * mean[j].ln();
            }
        }
        let mut mcs = 0.0;
        for j in 0..k {
            let mut var = 0.0;
            for i in 0..t {
                var += (probs[[i, j]] - mean[j]).powi(2);
            }
            mcs += (var / t as f64).sqrt();
        }
        mcs /= k as f64;
        [mh, sh, hm, mcs]
    }

    fn random_samples(rng: &mut impl Rng, t: usize, k: usize) -> PredictionSamples {
        let mut probs = Array2::zeros((t, k));
        for mut row in probs.rows_mut() {
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = rng.gen_range(0.0..1.0f64);
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        PredictionSamples::new(probs).unwrap()
    }

    #[test]
    fn features_match_naive_oracle_and_jensen_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let s = random_samples(&mut rng, 100, 4);
            let f = extract_features(&s, Variant::Sv).unwrap();
            let oracle = naive_features(&s.probs);
            for (a, b) in f.values.iter().zip(oracle.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
            // Concavity of entropy.
            assert!(f.values[2] >= f.values[0] - 1e-12);
            // Bounds.
            assert!(f.values[0] >= 0.0 && f.values[0] <= 4.0_f64.ln() + 1e-12);
            assert!(f.values[2] >= 0.0 && f.values[2] <= 4.0_f64.ln() + 1e-12);
            assert!(f.values[1] >= 0.0 && f.values[3] >= 0.0);
        }
    }
}

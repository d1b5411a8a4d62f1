//! Assembly and training of the four candidate classifiers.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{elbo_loss, mc_dropout_predict, SamplingStrategy, VarMlp};
use crate::data::{Protocol, SplitSet};
use crate::nn::{softmax, softmax_cross_entropy, Adam, AdamParams, DropoutMode, Mlp};
use crate::{Error, Result};

/// Number of candidate classes (4 In classes).
pub const NUM_IN_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "BD")]
    Bd,
    #[serde(rename = "OSBA")]
    Osba,
    #[serde(rename = "SV")]
    Sv,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ml, Variant::Bd, Variant::Osba, Variant::Sv];
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Ml => "ML",
            Variant::Bd => "BD",
            Variant::Osba => "OSBA",
            Variant::Sv => "SV",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ML" => Ok(Variant::Ml),
            "BD" => Ok(Variant::Bd),
            "OSBA" => Ok(Variant::Osba),
            "SV" => Ok(Variant::Sv),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Everything needed to train one candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub variant: Variant,
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub prior_sigma: f64,
    pub rho_init: f64,
    pub seed: u64,
}

impl CandidateSpec {
    /// Architecture and optimizer defaults shared by all variants:
    /// 784 -> 512 -> 512 -> 4, dropout 0.5, batch 100, ADAM at 1e-3.
    pub fn defaults(variant: Variant, seed: u64) -> Self {
        Self {
            variant,
            hidden: vec![512, 512],
            dropout_rate: 0.5,
            epochs: 20,
            batch: 100,
            lr: 1e-3,
            prior_sigma: 1.0,
            rho_init: -5.0,
            seed,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![crate::data::IMAGE_PIXELS];
        s.extend_from_slice(&self.hidden);
        s.push(NUM_IN_CLASSES);
        s
    }
}

/// Trained weights, per family.
#[derive(Debug, Clone)]
pub enum ModelParams {
    Deterministic(Mlp),
    Variational(VarMlp),
}

#[derive(Debug, Clone)]
pub struct TrainedCandidate {
    pub variant: Variant,
    pub model: ModelParams,
    pub protocol: Protocol,
    pub seed: u64,
    pub accuracy: f64,
    pub epochs_run: usize,
    pub epoch_wall_ms: Vec<f64>,
    pub epoch_loss: Vec<f64>,
}

impl TrainedCandidate {
    pub fn train_wall_ms(&self) -> f64 {
        self.epoch_wall_ms.iter().sum()
    }

    /// One stochastic dropout prediction; only meaningful for the BD variant.
    pub fn mc_dropout_predict(
        &self,
        x: &Array2<f64>,
        rng: &mut impl rand::Rng,
    ) -> Result<Array2<f64>> {
        if self.variant != Variant::Bd {
            return Err(Error::Variant(format!(
                "mc_dropout_predict requires the BD variant, got {}",
                self.variant
            )));
        }
        match &self.model {
            ModelParams::Deterministic(net) => mc_dropout_predict(net, x, rng),
            ModelParams::Variational(_) => Err(Error::Variant(
                "BD candidate carries variational weights".into(),
            )),
        }
    }

    /// Deterministic class probabilities: dropout off, variational mean weights.
    pub fn predict_deterministic(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let logits = match &self.model {
            ModelParams::Deterministic(net) => net.forward(x, DropoutMode::Off, None)?.0,
            ModelParams::Variational(net) => {
                net.mean_network().forward(x, DropoutMode::Off, None)?.0
            }
        };
        Ok(softmax(&logits))
    }
}

/// Per-sample training targets: one-hot rows for In samples, uniform 1/K rows
/// for Unknown-flagged samples (Calibrated protocol).
pub fn calibrated_targets(labels: &[u8], uniform_flags: &[bool], k: usize) -> Result<Array2<f64>> {
    if labels.len() != uniform_flags.len() {
        return Err(Error::Dimension(format!(
            "{} labels vs {} flags",
            labels.len(),
            uniform_flags.len()
        )));
    }
    let mut t = Array2::zeros((labels.len(), k));
    for (i, (&l, &uniform)) in labels.iter().zip(uniform_flags).enumerate() {
        if uniform {
            t.row_mut(i).fill(1.0 / k as f64);
        } else {
            if l as usize >= k {
                return Err(Error::Contract(format!(
                    "label {l} out of range 0..{k} at row {i}"
                )));
            }
            t[[i, l as usize]] = 1.0;
        }
    }
    Ok(t)
}

/// Train one candidate on the replication's splits and evaluate its task
/// accuracy on the candidate test set (deterministic forward).
pub fn train_candidate(
    spec: &CandidateSpec,
    splits: &SplitSet,
    protocol: Protocol,
) -> Result<TrainedCandidate> {
    let has_unknown = splits.candidate_train.uniform_target.iter().any(|&f| f);
    if (protocol == Protocol::Calibrated) != has_unknown {
        return Err(Error::Contract(format!(
            "{protocol} protocol but splits {} Unknown samples",
            if has_unknown { "contain" } else { "lack" }
        )));
    }
    let train = &splits.candidate_train;
    let n = train.images.len();
    let targets = calibrated_targets(
        &train.images.labels,
        &train.uniform_target,
        NUM_IN_CLASSES,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hp = AdamParams {
        lr: spec.lr,
        ..AdamParams::default()
    };
    let batches_per_epoch = n.div_ceil(spec.batch);
    // Uniform ELBO weighting, KL / batches relative to the summed batch NLL.
    // elbo_loss uses the mean per-example NLL, so the batch size divides out
    // here as well.
    let kl_weight = 1.0 / (batches_per_epoch * spec.batch) as f64;

    enum Trainee {
        Det(Mlp),
        Var(VarMlp, SamplingStrategy),
    }
    let mut trainee = match spec.variant {
        Variant::Ml | Variant::Bd => Trainee::Det(Mlp::new(
            &spec.sizes(),
            spec.dropout_rate,
            &mut rng,
        )?),
        Variant::Osba => Trainee::Var(
            VarMlp::new(&spec.sizes(), spec.rho_init, spec.prior_sigma, &mut rng)?,
            SamplingStrategy::PerMinibatch,
        ),
        Variant::Sv => Trainee::Var(
            VarMlp::new(&spec.sizes(), spec.rho_init, spec.prior_sigma, &mut rng)?,
            SamplingStrategy::PerExample,
        ),
    };
    let mut adam = match &trainee {
        Trainee::Det(net) => {
            let layout = net.param_layout();
            let reg: Vec<(&str, usize)> = layout.iter().map(|(n, l)| (n.as_str(), *l)).collect();
            Adam::new(hp, &reg)
        }
        Trainee::Var(net, _) => {
            let layout = net.param_layout();
            let reg: Vec<(&str, usize)> = layout.iter().map(|(n, l)| (n.as_str(), *l)).collect();
            Adam::new(hp, &reg)
        }
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_wall_ms = Vec::with_capacity(spec.epochs);
    let mut epoch_loss = Vec::with_capacity(spec.epochs);
    let mut step = 0usize;
    for _epoch in 0..spec.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(spec.batch) {
            let x = train.images.select(chunk).pixels;
            let t = select_rows(&targets, chunk);
            let loss = match &mut trainee {
                Trainee::Det(net) => {
                    let (logits, tape) =
                        net.forward(&x, DropoutMode::Stochastic, Some(&mut rng))?;
                    let (loss, dlogits) = softmax_cross_entropy(&logits, &t)?;
                    let grads = net.backward(&tape, &dlogits);
                    adam.step(&mut net.param_slices_mut(), &grads.slices())?;
                    loss
                }
                Trainee::Var(net, strategy) => {
                    let (loss, grads) = elbo_loss(net, &x, &t, *strategy, kl_weight, &mut rng)?;
                    adam.step(&mut net.param_slices_mut(), &grads.slices())?;
                    loss
                }
            };
            if !loss.is_finite() {
                return Err(Error::Training { step });
            }
            loss_sum += loss;
            step += 1;
        }
        epoch_wall_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        epoch_loss.push(loss_sum / batches_per_epoch as f64);
    }

    let model = match trainee {
        Trainee::Det(net) => ModelParams::Deterministic(net),
        Trainee::Var(net, _) => ModelParams::Variational(net),
    };
    let mut candidate = TrainedCandidate {
        variant: spec.variant,
        model,
        protocol,
        seed: spec.seed,
        accuracy: 0.0,
        epochs_run: spec.epochs,
        epoch_wall_ms,
        epoch_loss,
    };
    candidate.accuracy = evaluate_accuracy(&candidate, splits)?;
    Ok(candidate)
}

fn evaluate_accuracy(candidate: &TrainedCandidate, splits: &SplitSet) -> Result<f64> {
    let test = &splits.candidate_test.images;
    let mut correct = 0usize;
    // Chunked to bound the activation memory for large test sets.
    let chunk = 1000;
    let mut i = 0;
    while i < test.len() {
        let hi = (i + chunk).min(test.len());
        let rows: Vec<usize> = (i..hi).collect();
        let x = test.select(&rows).pixels;
        let probs = candidate.predict_deterministic(&x)?;
        for (r, row) in probs.rows().into_iter().enumerate() {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred as u8 == test.labels[i + r] {
                correct += 1;
            }
        }
        i = hi;
    }
    Ok(correct as f64 / test.len() as f64)
}

fn select_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).assign(&m.row(r));
    }
    out
}

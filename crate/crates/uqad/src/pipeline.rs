//! End-to-end experiment orchestration and result persistence.
//!
//! Every replication row is reproducible in isolation from the config, the
//! master seed, and its replication id. Results live in an append-only CSV;
//! completed rows are skipped on restart.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{train_candidate, CandidateSpec, TrainedCandidate, Variant};
use crate::config::ExperimentConfig;
use crate::data::{load_idx, make_plan, DetectorSet, LabeledImages, PlanEntry, Protocol};
use crate::detector::{fit_logistic, roc_auc, select_lambda};
use crate::uncertainty::{extract_features, predict_samples_batch};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One persisted replication outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    /// "{protocol}-{plan index}", unique within a run.
    pub replication_id: String,
    pub protocol: Protocol,
    pub variant: Variant,
    /// Class lists joined with ';'.
    pub in_classes: String,
    pub out_classes: String,
    pub unknown_classes: String,
    pub seed: u64,
    pub status: RowStatus,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub train_wall_ms: Option<f64>,
    pub feature_wall_ms: Option<f64>,
    pub lambda: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

impl ResultRow {
    pub fn key(&self) -> (Protocol, String, Variant) {
        (self.protocol, self.replication_id.clone(), self.variant)
    }
}

/// Counts from one `run_experiment` invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub total: usize,
    pub completed: usize,
    pub failed: usize,
    pub skipped: usize,
    pub results_path: PathBuf,
}

pub fn results_path(config: &ExperimentConfig) -> PathBuf {
    config.out_dir.join("results.csv")
}

/// Parse a results file; any malformed row is an error.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::Results(format!("{}: {e}", path.display()))
    })?;
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        let row: ResultRow =
            rec.map_err(|e| Error::Results(format!("{}: {e}", path.display())))?;
        if row.schema_version != SCHEMA_VERSION {
            return Err(Error::Results(format!(
                "unsupported schema version {}",
                row.schema_version
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Latest successful row per (protocol, replication, variant) key; reporting
/// is order-independent, so reruns after failures simply shadow old rows.
pub fn successful_rows(rows: &[ResultRow]) -> Vec<&ResultRow> {
    let mut latest: Vec<&ResultRow> = Vec::new();
    for row in rows {
        if row.status != RowStatus::Ok {
            continue;
        }
        if let Some(slot) = latest.iter_mut().find(|r| r.key() == row.key()) {
            *slot = row;
        } else {
            latest.push(row);
        }
    }
    latest
}

fn join_classes(classes: &[u8]) -> String {
    classes
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Deterministic per-(entry, variant) seed (splitmix64 finalizer).
pub fn row_seed(entry_seed: u64, variant: Variant) -> u64 {
    let idx = Variant::ALL.iter().position(|&v| v == variant).unwrap() as u64;
    let mut z = entry_seed ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// MC-sample a detector set and reduce to the feature matrix.
pub fn detector_features(
    candidate: &TrainedCandidate,
    set: &DetectorSet,
    mc_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let samples = predict_samples_batch(candidate, &set.images.pixels, mc_samples, rng)?;
    let first = extract_features(&samples[0], candidate.variant)?;
    let mut features = Array2::zeros((samples.len(), first.values.len()));
    for (i, s) in samples.iter().enumerate() {
        let f = extract_features(s, candidate.variant)?;
        for (j, v) in f.values.iter().enumerate() {
            features[[i, j]] = *v;
        }
    }
    Ok(features)
}

/// Train one candidate and score its uncertainty features with the detector.
pub fn run_replication(
    config: &ExperimentConfig,
    entry: &PlanEntry,
    protocol: Protocol,
    variant: Variant,
    train: &LabeledImages,
    test: &LabeledImages,
) -> Result<(f64, f64, f64, f64, f64)> {
    let splits = crate::data::build_splits(
        &entry.partition,
        train,
        test,
        protocol,
        entry.seed,
        &config.split.to_options(),
    )?;
    let seed = row_seed(entry.seed, variant);
    let t = &config.training;
    let spec = CandidateSpec {
        variant,
        hidden: t.hidden.clone(),
        dropout_rate: t.dropout_rate,
        epochs: t.epochs,
        batch: t.batch,
        lr: t.lr,
        prior_sigma: t.prior_sigma,
        rho_init: t.rho_init,
        seed,
    };
    let candidate = train_candidate(&spec, &splits, protocol)?;

    let feature_start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D_F00D_F00D_F00D);
    let train_features =
        detector_features(&candidate, &splits.detector_train, t.mc_samples, &mut rng)?;
    let test_features =
        detector_features(&candidate, &splits.detector_test, t.mc_samples, &mut rng)?;
    let feature_wall_ms = feature_start.elapsed().as_secs_f64() * 1e3;

    let train_labels = &splits.detector_train.images.labels;
    let lambda = select_lambda(
        &train_features,
        train_labels,
        &config.detector.lambda_grid,
        config.detector.folds,
        seed,
    )?;
    let model = fit_logistic(&train_features, train_labels, lambda)?;
    let scores = model.scores(&test_features);
    let auc = roc_auc(&scores, &splits.detector_test.images.labels)?.auc;

    Ok((
        auc,
        candidate.accuracy,
        candidate.train_wall_ms(),
        feature_wall_ms,
        lambda,
    ))
}

/// Run (or resume) the full experiment described by the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(&config.out_dir, e))?;
    let path = results_path(config);

    let mut done: HashSet<(Protocol, String, Variant)> = HashSet::new();
    let file_exists = path.exists();
    if file_exists {
        for row in read_results(&path)? {
            if row.status == RowStatus::Ok {
                done.insert(row.key());
            }
        }
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(!file_exists)
        .from_writer(file);

    let train = load_idx(
        &config.data_dir.join("train-images-idx3-ubyte"),
        &config.data_dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        &config.data_dir.join("t10k-images-idx3-ubyte"),
        &config.data_dir.join("t10k-labels-idx1-ubyte"),
    )?;

    let mut summary = RunSummary {
        total: 0,
        completed: 0,
        failed: 0,
        skipped: 0,
        results_path: path.clone(),
    };
    for &protocol in &config.protocols {
        let plan = make_plan(
            config.master_seed,
            protocol,
            config.n_partitions,
            config.repetitions,
        );
        for (i, entry) in plan.entries.iter().enumerate() {
            let replication_id = format!("{protocol}-{i}");
            for &variant in &config.variants {
                summary.total += 1;
                let key = (protocol, replication_id.clone(), variant);
                if done.contains(&key) {
                    summary.skipped += 1;
                    continue;
                }
                let outcome =
                    run_replication(config, entry, protocol, variant, &train, &test);
                let mut row = ResultRow {
                    schema_version: SCHEMA_VERSION,
                    replication_id: replication_id.clone(),
                    protocol,
                    variant,
                    in_classes: join_classes(&entry.partition.in_classes),
                    out_classes: join_classes(&entry.partition.out_classes),
                    unknown_classes: join_classes(&entry.partition.unknown_classes),
                    seed: row_seed(entry.seed, variant),
                    status: RowStatus::Failed,
                    auc: None,
                    accuracy: None,
                    train_wall_ms: None,
                    feature_wall_ms: None,
                    lambda: None,
                    error: None,
                };
                match outcome {
                    Ok((auc, accuracy, train_ms, feature_ms, lambda)) => {
                        row.status = RowStatus::Ok;
                        row.auc = Some(auc);
                        row.accuracy = Some(accuracy);
                        row.train_wall_ms = Some(train_ms);
                        row.feature_wall_ms = Some(feature_ms);
                        row.lambda = Some(lambda);
                        summary.completed += 1;
                    }
                    Err(e) => {
                        row.error = Some(e.to_string());
                        summary.failed += 1;
                    }
                }
                writer
                    .serialize(&row)
                    .and_then(|_| writer.flush().map_err(csv::Error::from))
                    .map_err(|e| Error::Results(format!("write {}: {e}", path.display())))?;
                eprintln!(
                    "[{}] {} {} -> {}",
                    replication_id,
                    variant,
                    protocol,
                    match row.status {
                        RowStatus::Ok => format!("auc {:.4}", row.auc.unwrap()),
                        RowStatus::Failed => format!("failed: {}", row.error.as_deref().unwrap_or("")),
                    }
                );
            }
        }
    }
    Ok(summary)
}

/// Build the ANOVA input from successful result rows.
pub fn results_to_anova(rows: &[ResultRow]) -> Result<crate::anova::AnovaData> {
    let ok = successful_rows(rows);
    if ok.is_empty() {
        return Err(Error::DegenerateData("no successful rows".into()));
    }
    let mut protocol_names: Vec<String> = Vec::new();
    let mut model_names: Vec<String> = Vec::new();
    for &p in &[Protocol::Blind, Protocol::Calibrated] {
        if ok.iter().any(|r| r.protocol == p) {
            protocol_names.push(p.to_string());
        }
    }
    for &v in Variant::ALL.iter() {
        if ok.iter().any(|r| r.variant == v) {
            model_names.push(v.to_string());
        }
    }
    let mut auc = Vec::new();
    let mut protocol = Vec::new();
    let mut model = Vec::new();
    for r in ok {
        auc.push(r.auc.ok_or_else(|| {
            Error::Results(format!("row {} marked ok without auc", r.replication_id))
        })?);
        protocol.push(
            protocol_names
                .iter()
                .position(|p| *p == r.protocol.to_string())
                .unwrap(),
        );
        model.push(
            model_names
                .iter()
                .position(|m| *m == r.variant.to_string())
                .unwrap(),
        );
    }
    crate::anova::AnovaData::new(auc, protocol, model, protocol_names, model_names)
}

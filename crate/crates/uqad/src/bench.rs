//! Per-epoch training cost measurement across variants.

use std::path::PathBuf;

use serde::Serialize;

use crate::candidates::{train_candidate, CandidateSpec, Variant};
use crate::config::ExperimentConfig;
use crate::data::{load_idx, make_plan, Protocol};
use crate::{Error, Result};

/// Timing for one variant, normalized to ML.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub variant: Variant,
    pub epochs_measured: usize,
    pub mean_epoch_ms: f64,
    pub ratio_to_ml: f64,
}

/// Mean per-epoch times to ML-normalized rows, preserving variant order.
pub fn ratios_from_times(times: &[(Variant, usize, f64)]) -> Result<Vec<BenchRow>> {
    let ml = times
        .iter()
        .find(|(v, _, _)| *v == Variant::Ml)
        .ok_or_else(|| Error::Contract("bench requires an ML baseline".into()))?
        .2;
    if ml <= 0.0 {
        return Err(Error::Numeric {
            name: "ML epoch time".into(),
        });
    }
    Ok(times
        .iter()
        .map(|&(variant, epochs_measured, mean_epoch_ms)| BenchRow {
            variant,
            epochs_measured,
            mean_epoch_ms,
            ratio_to_ml: mean_epoch_ms / ml,
        })
        .collect())
}

/// Train every requested variant for `warmup + measured` epochs on one Blind
/// split and report mean per-epoch wall time after the warm-up.
pub fn bench(config: &ExperimentConfig, warmup: usize, measured: usize) -> Result<Vec<BenchRow>> {
    if measured < 3 {
        return Err(Error::Contract(
            "bench needs at least 3 measured epochs".into(),
        ));
    }
    config.validate()?;
    let train = load_idx(
        &config.data_dir.join("train-images-idx3-ubyte"),
        &config.data_dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        &config.data_dir.join("t10k-images-idx3-ubyte"),
        &config.data_dir.join("t10k-labels-idx1-ubyte"),
    )?;
    let plan = make_plan(config.master_seed, Protocol::Blind, 1, 1);
    let entry = &plan.entries[0];
    let splits = crate::data::build_splits(
        &entry.partition,
        &train,
        &test,
        Protocol::Blind,
        entry.seed,
        &config.split.to_options(),
    )?;

    let mut variants: Vec<Variant> = Variant::ALL.to_vec();
    variants.retain(|v| config.variants.contains(v) || *v == Variant::Ml);
    let mut times = Vec::new();
    for &variant in &variants {
        let t = &config.training;
        let spec = CandidateSpec {
            variant,
            hidden: t.hidden.clone(),
            dropout_rate: t.dropout_rate,
            epochs: warmup + measured,
            batch: t.batch,
            lr: t.lr,
            prior_sigma: t.prior_sigma,
            rho_init: t.rho_init,
            seed: entry.seed,
        };
        let candidate = train_candidate(&spec, &splits, Protocol::Blind)?;
        let tail = &candidate.epoch_wall_ms[warmup..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        times.push((variant, tail.len(), mean));
        eprintln!("bench {variant}: {mean:.1} ms/epoch");
    }
    ratios_from_times(&times)
}

pub fn write_bench_csv(out_dir: &std::path::Path, rows: &[BenchRow]) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("bench.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Error::Results(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Results(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ratios_normalize_to_ml() {
        let rows = ratios_from_times(&[
            (Variant::Ml, 3, 10.0),
            (Variant::Bd, 3, 11.0),
            (Variant::Osba, 3, 30.0),
            (Variant::Sv, 3, 300.0),
        ])
        .unwrap();
        assert_abs_diff_eq!(rows[0].ratio_to_ml, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rows[1].ratio_to_ml, 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(rows[3].ratio_to_ml / rows[2].ratio_to_ml, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_ml_baseline_is_an_error() {
        assert!(ratios_from_times(&[(Variant::Bd, 3, 11.0)]).is_err());
    }
}

//! Leak-free data splits for one replication.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::idx::LabeledImages;
use super::partition::{ClassPartition, Protocol};
use crate::{Error, Result};

/// Offset added to test-file sample ids so they never collide with train-file ids.
pub const TEST_ID_OFFSET: u32 = 10_000_000;

/// Candidate-network data: labels remapped to contiguous 0..3 for In classes;
/// Unknown samples (Calibrated protocol) carry `uniform_target = true` and a
/// placeholder label of 0.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub images: LabeledImages,
    pub uniform_target: Vec<bool>,
}

/// Anomaly-detector data: binary labels, In = 0, Out = 1.
#[derive(Debug, Clone)]
pub struct DetectorSet {
    pub images: LabeledImages,
}

#[derive(Debug, Clone)]
pub struct SplitSet {
    pub candidate_train: CandidateSet,
    pub candidate_test: CandidateSet,
    pub detector_train: DetectorSet,
    pub detector_test: DetectorSet,
}

/// Sizing knobs for one replication's splits.
#[derive(Debug, Clone)]
pub struct SplitOptions {
    /// Fraction of each In class's training samples reserved for the detector pools.
    pub detector_in_fraction: f64,
    /// Cap on candidate training samples (after the detector reservation).
    pub max_candidate_train: Option<usize>,
    /// Cap on detector pool samples per class (before the 50/50 train/test split).
    pub max_detector_per_class: Option<usize>,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            detector_in_fraction: 0.3,
            max_candidate_train: None,
            max_detector_per_class: None,
        }
    }
}

/// Build the four splits for one replication.
///
/// In-class training samples are split per class into a candidate-training part
/// and a detector reservation; detector train/test pools draw only from the
/// reservation and the Out classes, so no detector sample was ever seen by the
/// candidate network. Detector pools are balanced per class (equal count for
/// every In and Out class) and split 50/50 into train and test.
pub fn build_splits(
    partition: &ClassPartition,
    train: &LabeledImages,
    test: &LabeledImages,
    protocol: Protocol,
    seed: u64,
    opts: &SplitOptions,
) -> Result<SplitSet> {
    if protocol == Protocol::Blind && !partition.unknown_classes.is_empty() {
        return Err(Error::Partition(
            "Blind protocol must not carry Unknown classes".into(),
        ));
    }
    if protocol == Protocol::Calibrated && partition.unknown_classes.len() != 2 {
        return Err(Error::Partition(
            "Calibrated protocol needs 2 Unknown classes".into(),
        ));
    }
    if !(0.0..1.0).contains(&opts.detector_in_fraction) || opts.detector_in_fraction <= 0.0 {
        return Err(Error::Config(format!(
            "detector_in_fraction must be in (0, 1), got {}",
            opts.detector_in_fraction
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Per-class index lists over the training file, shuffled for unbiased draws.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, &l) in train.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    for needed in partition
        .in_classes
        .iter()
        .chain(&partition.out_classes)
        .chain(&partition.unknown_classes)
    {
        if by_class[*needed as usize].is_empty() {
            return Err(Error::Partition(format!(
                "class {needed} absent from training data"
            )));
        }
    }
    for list in by_class.iter_mut() {
        list.shuffle(&mut rng);
    }

    // In classes: reserve a fraction per class for the detector pools.
    let mut candidate_idx: Vec<usize> = Vec::new();
    let mut candidate_remap: Vec<u8> = Vec::new();
    let mut candidate_uniform: Vec<bool> = Vec::new();
    let mut detector_pool: Vec<Vec<usize>> = Vec::new(); // one pool per In then Out class

    for &c in &partition.in_classes {
        let list = &by_class[c as usize];
        let reserve = ((list.len() as f64) * opts.detector_in_fraction).floor() as usize;
        let reserve = reserve.max(2).min(list.len().saturating_sub(1));
        detector_pool.push(list[..reserve].to_vec());
        for &i in &list[reserve..] {
            candidate_idx.push(i);
            candidate_remap.push(partition.remap_in(train.labels[i]).unwrap());
            candidate_uniform.push(false);
        }
    }
    for &c in &partition.out_classes {
        detector_pool.push(by_class[c as usize].clone());
    }

    if protocol == Protocol::Calibrated {
        for &c in &partition.unknown_classes {
            for &i in &by_class[c as usize] {
                candidate_idx.push(i);
                candidate_remap.push(0);
                candidate_uniform.push(true);
            }
        }
    }

    // Shuffle candidate training jointly, then apply the size cap.
    let mut order: Vec<usize> = (0..candidate_idx.len()).collect();
    order.shuffle(&mut rng);
    if let Some(cap) = opts.max_candidate_train {
        order.truncate(cap);
    }
    let cand_rows: Vec<usize> = order.iter().map(|&k| candidate_idx[k]).collect();
    let mut cand_images = train.select(&cand_rows);
    cand_images.labels = order.iter().map(|&k| candidate_remap[k]).collect();
    let cand_flags: Vec<bool> = order.iter().map(|&k| candidate_uniform[k]).collect();

    // Detector pools: equal count per class, then 50/50 stratified split.
    let mut per_class = detector_pool.iter().map(Vec::len).min().unwrap();
    if let Some(cap) = opts.max_detector_per_class {
        per_class = per_class.min(cap);
    }
    if per_class < 2 {
        return Err(Error::SampleSize(
            "detector pools need at least 2 samples per class".into(),
        ));
    }
    let mut det_train_rows = Vec::new();
    let mut det_train_labels = Vec::new();
    let mut det_test_rows = Vec::new();
    let mut det_test_labels = Vec::new();
    for (g, pool) in detector_pool.iter().enumerate() {
        let group_label = if g < partition.in_classes.len() { 0 } else { 1 };
        let half = per_class / 2;
        for &i in &pool[..half] {
            det_train_rows.push(i);
            det_train_labels.push(group_label);
        }
        for &i in &pool[half..per_class] {
            det_test_rows.push(i);
            det_test_labels.push(group_label);
        }
    }
    let mut det_train_images = train.select(&det_train_rows);
    det_train_images.labels = det_train_labels;
    let mut det_test_images = train.select(&det_test_rows);
    det_test_images.labels = det_test_labels;

    // Candidate test: the standard test split restricted to In classes,
    // with ids offset into their own range.
    let test_rows: Vec<usize> = (0..test.len())
        .filter(|&i| partition.remap_in(test.labels[i]).is_some())
        .collect();
    if test_rows.is_empty() {
        return Err(Error::Partition(
            "no In-class samples in the test data".into(),
        ));
    }
    let mut cand_test_images = test.select(&test_rows);
    cand_test_images.labels = cand_test_images
        .labels
        .iter()
        .map(|&l| partition.remap_in(l).unwrap())
        .collect();
    for id in cand_test_images.ids.iter_mut() {
        *id += TEST_ID_OFFSET;
    }
    let n_test = cand_test_images.len();

    let split = SplitSet {
        candidate_train: CandidateSet {
            images: cand_images,
            uniform_target: cand_flags,
        },
        candidate_test: CandidateSet {
            images: cand_test_images,
            uniform_target: vec![false; n_test],
        },
        detector_train: DetectorSet {
            images: det_train_images,
        },
        detector_test: DetectorSet {
            images: det_test_images,
        },
    };
    debug_assert!(split.check_disjoint().is_ok());
    Ok(split)
}

impl SplitSet {
    /// Verify the leak-freedom invariants: detector_test shares no sample with
    /// detector_train nor with candidate_train.
    pub fn check_disjoint(&self) -> Result<()> {
        use std::collections::HashSet;
        let test_ids: HashSet<u32> = self.detector_test.images.ids.iter().copied().collect();
        if self
            .detector_train
            .images
            .ids
            .iter()
            .any(|id| test_ids.contains(id))
        {
            return Err(Error::Consistency(
                "detector_test overlaps detector_train".into(),
            ));
        }
        if self
            .candidate_train
            .images
            .ids
            .iter()
            .any(|id| test_ids.contains(id))
        {
            return Err(Error::Consistency(
                "detector_test overlaps candidate_train".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::collections::HashSet;

    fn toy_data(per_class: usize) -> LabeledImages {
        let n = per_class * 10;
        let pixels = Array2::from_elem((n, 784), 0.5);
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let ids = (0..n as u32).collect();
        LabeledImages::new(pixels, labels, ids).unwrap()
    }

    fn partition_blind() -> ClassPartition {
        ClassPartition::new(vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![]).unwrap()
    }

    #[test]
    fn blind_split_remaps_identity() {
        let train = toy_data(40);
        let test = toy_data(10);
        let s = build_splits(
            &partition_blind(),
            &train,
            &test,
            Protocol::Blind,
            1,
            &SplitOptions::default(),
        )
        .unwrap();
        let labels: HashSet<u8> = s.candidate_train.images.labels.iter().copied().collect();
        assert!(labels.iter().all(|&l| l < 4));
        assert!(s.candidate_train.uniform_target.iter().all(|&f| !f));
        s.check_disjoint().unwrap();
    }

    #[test]
    fn calibrated_split_flags_unknown() {
        let train = toy_data(40);
        let test = toy_data(10);
        let p = ClassPartition::new(vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9]).unwrap();
        let s = build_splits(
            &p,
            &train,
            &test,
            Protocol::Calibrated,
            1,
            &SplitOptions::default(),
        )
        .unwrap();
        let n_unknown = s.candidate_train.uniform_target.iter().filter(|&&f| f).count();
        assert!(n_unknown > 0);
        // Unknown samples come only from classes 8 and 9 of the source data.
        for (i, &flag) in s.candidate_train.uniform_target.iter().enumerate() {
            if flag {
                let id = s.candidate_train.images.ids[i] as usize;
                assert!(train.labels[id] >= 8);
            }
        }
    }

    #[test]
    fn detector_sets_are_balanced_and_disjoint() {
        let train = toy_data(50);
        let test = toy_data(10);
        let s = build_splits(
            &partition_blind(),
            &train,
            &test,
            Protocol::Blind,
            9,
            &SplitOptions::default(),
        )
        .unwrap();
        let n_in = s
            .detector_train
            .images
            .labels
            .iter()
            .filter(|&&l| l == 0)
            .count();
        let n_out = s
            .detector_train
            .images
            .labels
            .iter()
            .filter(|&&l| l == 1)
            .count();
        assert_eq!(n_in, n_out);
        s.check_disjoint().unwrap();
    }

    #[test]
    fn missing_class_is_an_error() {
        let train = {
            // Only classes 0..8 present.
            let n = 80;
            let pixels = Array2::from_elem((n, 784), 0.1);
            let labels: Vec<u8> = (0..n).map(|i| (i % 8) as u8).collect();
            LabeledImages::new(pixels, labels, (0..n as u32).collect()).unwrap()
        };
        let test = toy_data(5);
        let p = ClassPartition::new(vec![0, 1, 2, 9], vec![3, 4, 5, 6], vec![]).unwrap();
        assert!(matches!(
            build_splits(&p, &train, &test, Protocol::Blind, 1, &SplitOptions::default()),
            Err(Error::Partition(_))
        ));
    }

    #[test]
    fn splits_are_deterministic() {
        let train = toy_data(30);
        let test = toy_data(5);
        let a = build_splits(
            &partition_blind(),
            &train,
            &test,
            Protocol::Blind,
            77,
            &SplitOptions::default(),
        )
        .unwrap();
        let b = build_splits(
            &partition_blind(),
            &train,
            &test,
            Protocol::Blind,
            77,
            &SplitOptions::default(),
        )
        .unwrap();
        assert_eq!(a.candidate_train.images.ids, b.candidate_train.images.ids);
        assert_eq!(a.detector_test.images.ids, b.detector_test.images.ids);
    }
}

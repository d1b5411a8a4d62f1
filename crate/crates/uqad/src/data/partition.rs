//! Class partitions and the replication plan.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idx::NUM_CLASSES;
use crate::{Error, Result};

/// Experimental protocol: whether candidates see auxiliary Unknown classes
/// trained against uniform targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Blind,
    Calibrated,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Protocol::Blind => write!(f, "blind"),
            Protocol::Calibrated => write!(f, "calibrated"),
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blind" => Ok(Protocol::Blind),
            "calibrated" => Ok(Protocol::Calibrated),
            other => Err(Error::Config(format!("unknown protocol '{other}'"))),
        }
    }
}

/// Disjoint assignment of the 10 source classes into In (candidate training),
/// Out (anomalies), and optionally Unknown (calibration) groups.
/// Class lists are kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassPartition {
    pub in_classes: Vec<u8>,
    pub out_classes: Vec<u8>,
    pub unknown_classes: Vec<u8>,
}

impl ClassPartition {
    pub fn new(
        mut in_classes: Vec<u8>,
        mut out_classes: Vec<u8>,
        mut unknown_classes: Vec<u8>,
    ) -> Result<Self> {
        in_classes.sort_unstable();
        out_classes.sort_unstable();
        unknown_classes.sort_unstable();
        if in_classes.len() != 4 || out_classes.len() != 4 {
            return Err(Error::Partition(format!(
                "need 4 In and 4 Out classes, got {} and {}",
                in_classes.len(),
                out_classes.len()
            )));
        }
        if !matches!(unknown_classes.len(), 0 | 2) {
            return Err(Error::Partition(format!(
                "need 0 or 2 Unknown classes, got {}",
                unknown_classes.len()
            )));
        }
        let all: Vec<u8> = in_classes
            .iter()
            .chain(&out_classes)
            .chain(&unknown_classes)
            .copied()
            .collect();
        let mut dedup = all.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != all.len() {
            return Err(Error::Partition("class groups are not disjoint".into()));
        }
        if let Some(bad) = all.iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(Error::Partition(format!("class {bad} out of range 0..9")));
        }
        Ok(Self {
            in_classes,
            out_classes,
            unknown_classes,
        })
    }

    /// Number of candidate classes (always 4 here).
    pub fn num_in(&self) -> usize {
        self.in_classes.len()
    }

    /// Map an original In-class label to its contiguous 0..3 id.
    pub fn remap_in(&self, label: u8) -> Option<u8> {
        self.in_classes
            .iter()
            .position(|&c| c == label)
            .map(|p| p as u8)
    }
}

/// One cell of the replication design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub partition: ClassPartition,
    pub repetition: u8,
    pub seed: u64,
}

/// The full replication design: distinct partitions crossed with repetitions,
/// each with its own derived seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationPlan {
    pub entries: Vec<PlanEntry>,
}

/// Full-scale plan: 20 distinct partitions x 5 repetitions.
pub fn make_replication_plan(master_seed: u64, protocol: Protocol) -> ReplicationPlan {
    make_plan(master_seed, protocol, 20, 5)
}

/// General plan builder. Partitions are drawn uniformly among valid disjoint
/// assignments (rejecting duplicates); everything is a pure function of
/// `master_seed`.
pub fn make_plan(
    master_seed: u64,
    protocol: Protocol,
    n_partitions: usize,
    repetitions: usize,
) -> ReplicationPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut partitions: Vec<ClassPartition> = Vec::with_capacity(n_partitions);
    while partitions.len() < n_partitions {
        let p = draw_partition(&mut rng, protocol);
        if !partitions.contains(&p) {
            partitions.push(p);
        }
    }
    let mut entries = Vec::with_capacity(n_partitions * repetitions);
    for partition in partitions {
        for repetition in 0..repetitions {
            entries.push(PlanEntry {
                partition: partition.clone(),
                repetition: repetition as u8,
                seed: rng.gen(),
            });
        }
    }
    ReplicationPlan { entries }
}

fn draw_partition(rng: &mut ChaCha8Rng, protocol: Protocol) -> ClassPartition {
    let mut classes: Vec<u8> = (0..NUM_CLASSES as u8).collect();
    classes.shuffle(rng);
    let unknown = match protocol {
        Protocol::Blind => vec![],
        Protocol::Calibrated => classes[8..10].to_vec(),
    };
    ClassPartition::new(classes[0..4].to_vec(), classes[4..8].to_vec(), unknown)
        .expect("shuffled groups are disjoint by construction")
}

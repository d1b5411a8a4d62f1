//! Dataset ingestion, class partitions, replication plans, and leak-free splits.

mod idx;
mod partition;
mod splits;

pub use idx::{load_idx, LabeledImages, IMAGE_PIXELS, NUM_CLASSES};
pub use partition::{
    make_plan, make_replication_plan, ClassPartition, PlanEntry, Protocol, ReplicationPlan,
};
pub use splits::{build_splits, CandidateSet, DetectorSet, SplitOptions, SplitSet};

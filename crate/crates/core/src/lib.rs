//! Neuro-fuzzy TSK regression with learnable attribute and rule importance,
//! automatic structural adaptation, and interpretability metrics.

// Indexed loops stay: the math walks several same-shaped grids at once.
#![allow(clippy::needless_range_loop)]
//!
//! The model is a Gaussian-membership Takagi-Sugeno system whose firing path
//! is gated by sigmoid-activated importance weights at both the attribute and
//! the rule level. Training couples Adam on exact analytic gradients with a
//! structural schedule: persistently unimportant attributes are masked out,
//! persistently unimportant rules are deleted, new rules grow from high-error
//! samples when validation stagnates, and every edit is rolled back if it
//! degrades validation beyond tolerance.

pub mod data;
pub mod error;
pub mod init;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod structure;
pub mod train;

pub use data::{load_csv, split, standardize, synthesize, CsvSchema, Dataset, MissingPolicy, SyntheticKind};
pub use error::{Error, Result};
pub use init::{init_rulebase, kmeans, KMeansResult};
pub use metrics::{fsp_index, overlap_index, pairwise_overlap, rmse, structural_counts, MetricsReport};
pub use model::{membership, normalized_activations, sigmoid, InferenceTrace, RuleBase};
pub use structure::{grow_rule, prune_attributes, prune_rules, EventKind, StructuralEvent};
pub use train::{
    adam_step, evaluate_rollback, finite_diff_gradients, fit, gradients, loss,
    loss_and_gradients, max_rel_error, write_event_log, EpochRecord, Gradients, RollbackDecision,
    TrainConfig, TrainReport, TrainState,
};

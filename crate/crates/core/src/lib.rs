//! Convex polytope trees.
//!
//! Oblique decision trees whose branch nodes split on a noisy-OR committee of
//! weighted linear experts. The low-probability side of every split is a
//! convex region bounded by one facet per expert. Split parameters are fit
//! jointly by minibatch gradient descent on a soft-routing objective
//! (conditional label entropy for classification, within-leaf squared error
//! for regression) plus a truncated gamma-process shrinkage penalty that
//! switches off unneeded experts; the tree structure comes from a greedy
//! stump-by-stump grower.
//!
//! Batch objectives and evaluation run data-parallel with rayon when the
//! `parallel` feature is on (the default). Sequential and parallel execution
//! produce bit-identical results.

pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod numeric;
pub mod objective;
pub mod pipeline;
pub mod topology;
pub mod train;
pub mod tree;

pub use data::{Dataset, Labels, Standardizer};
pub use error::{CptError, Result};
pub use exec::Execution;
pub use metrics::{evaluate, MetricKind, MetricReport, TreeStats};
pub use objective::{BatchObjective, PriorConfig};
pub use pipeline::{train_model, PipelineConfig, TrainedModel};
pub use topology::{grow_tree, retune_thresholds, select_threshold, GrowthConfig, ThresholdChoice};
pub use train::{
    finalize_leaves, fit_parameters, AdamConfig, AnnealSchedule, EpochRecord, FitOutcome, Growth, OptimizerState,
    TrainConfig,
};
pub use tree::{Branch, Expert, Leaf, LeafValue, Node, NodeId, Prediction, Task, TreeModel};

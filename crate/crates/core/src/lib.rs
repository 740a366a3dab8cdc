//! Approximate k-nearest-neighbor search with forests of randomized
//! space-partitioning trees, and a tuner that picks the number of trees,
//! tree depth and vote threshold from a single oversized index build.

pub mod autotune;
pub mod bench;
pub mod dataset;
pub mod error;
pub mod fixture;
pub mod search;
pub mod timemodel;
pub mod trees;

pub use autotune::{
    generate_index_auto, select_parameters, subset_index, SelectedParams, Target, TuningLimits, TuningResult,
};
pub use dataset::{exact_knn, DataMatrix, GroundTruth, QueryEvaluation, VectorFormat};
pub use error::{Error, Result};
pub use trees::{grow_forest, grow_tree, Direction, Forest, SplitRule, Tree, TreeKind};
pub use search::{SearchParams, Searcher, Strategy};
pub use timemodel::{fit_time_model, Calibration, TimeModel};

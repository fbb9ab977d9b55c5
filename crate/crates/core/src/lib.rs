//! Numerical geometry of higher-rank Sol-type groups.

pub mod boxpath;
pub mod distortion;
pub mod group;
pub mod harness;
pub mod hsv_pipeline;
pub mod linalg;
pub mod metric;
pub mod path;
pub mod qi_maps;
pub mod surgery;
mod serde_vec;

pub use group::{validate, GroupElement, GroupError, GroupSpec, NilpotentFactor, SolTypeGroup};
pub use metric::{change_of_metric, delta_distance, MetricError, MetricSpec, SplitMetric};
pub use path::PiecewisePath;

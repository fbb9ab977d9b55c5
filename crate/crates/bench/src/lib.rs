//! Fixtures shared by the benchmarks.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use soltype_core::{validate, GroupElement, GroupSpec, MetricSpec, SolTypeGroup, SplitMetric};

pub fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Group and metric from two files in `configs/`.
pub fn load(group: &str, metric: &str) -> (SolTypeGroup, SplitMetric) {
    let g = validate(&GroupSpec::load(configs().join(group)).expect("group file")).expect("valid group").0;
    let m = SplitMetric::from_spec(&g, &MetricSpec::load(configs().join(metric)).expect("metric file")).expect("valid metric");
    (g, m)
}

/// Element with one-dimensional nil coordinates `nil` and base `base`.
pub fn element(nil: &[f64], base: &[f64]) -> GroupElement {
    GroupElement::new(nil.iter().map(|h| DVector::from_element(1, *h)).collect(), DVector::from_row_slice(base))
}

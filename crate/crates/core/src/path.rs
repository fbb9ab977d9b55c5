//! Discretized paths in `G`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::group::{GroupElement, SolTypeGroup};

/// Ordered samples of a path; consecutive nodes are joined by straight
/// segments in exponential/base coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePath {
    pub nodes: Vec<GroupElement>,
}

impl PiecewisePath {
    pub fn new(nodes: Vec<GroupElement>) -> Self {
        Self { nodes }
    }

    /// Coordinate-linear path from `a` to `b` with `segments` pieces.
    pub fn straight(a: &GroupElement, b: &GroupElement, segments: usize) -> Self {
        let segments = segments.max(1);
        let nodes = (0..=segments)
            .map(|k| {
                let t = k as f64 / segments as f64;
                lerp(a, b, t)
            })
            .collect();
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn start(&self) -> Option<&GroupElement> {
        self.nodes.first()
    }

    pub fn end(&self) -> Option<&GroupElement> {
        self.nodes.last()
    }

    /// Base coordinates of every node.
    pub fn base_polyline(&self) -> Vec<DVector<f64>> {
        self.nodes.iter().map(|g| g.base.clone()).collect()
    }

    /// Left translate every node by `x`.
    pub fn translated(&self, group: &SolTypeGroup, x: &GroupElement) -> Self {
        Self {
            nodes: self.nodes.iter().map(|g| group.mul(x, g)).collect(),
        }
    }

    /// Insert the coordinate midpoint of every segment.
    pub fn subdivided(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len());
        for w in self.nodes.windows(2) {
            nodes.push(w[0].clone());
            nodes.push(lerp(&w[0], &w[1], 0.5));
        }
        if let Some(last) = self.nodes.last() {
            nodes.push(last.clone());
        }
        Self { nodes }
    }
}

/// Coordinatewise interpolation `(1 − t)a + t b`.
pub fn lerp(a: &GroupElement, b: &GroupElement, t: f64) -> GroupElement {
    GroupElement {
        nil: a.nil.iter().zip(&b.nil).map(|(x, y)| x + (y - x) * t).collect(),
        base: &a.base + (&b.base - &a.base) * t,
    }
}

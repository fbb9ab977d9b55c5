use std::path::Path;

use serde::{Deserialize, Serialize};

use super::QiError;
use crate::group::GroupElement;

/// `h ↦ A h + b` on the exponential coordinates of one factor. `linear` is
/// row-major `dim × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineSpec {
    pub linear: Vec<f64>,
    pub offset: Vec<f64>,
}

/// Factor `i` is sent to factor `permutation[i]` through `nil_maps[i]`, and
/// the base through `base_matrix` (row-major, acting on column vectors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySpec {
    pub permutation: Vec<usize>,
    pub base_matrix: Vec<f64>,
    pub nil_maps: Vec<Vec<f64>>,
}

/// Additive constants the map is claimed to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Declared {
    pub k: f64,
    pub c: f64,
}

/// Product quasi-isometry as stored on disk. Missing parts default to the
/// identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QiSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<GroupElement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_maps: Option<Vec<AffineSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetry: Option<SymmetrySpec>,
    #[serde(default)]
    pub declared: Declared,
}

impl QiSpec {
    pub fn identity() -> Self {
        Self {
            name: None,
            translation: None,
            factor_maps: None,
            symmetry: None,
            declared: Declared::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, QiError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("qi spec serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, QiError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), QiError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

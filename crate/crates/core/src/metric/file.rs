use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::MetricError;

/// Gram matrix over the basis `(𝔫₁, …, 𝔫ₙ, e₁, …, e_k)`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dim: usize,
    pub gram: Vec<f64>,
}

impl MetricSpec {
    pub fn from_matrix(gram: &DMatrix<f64>) -> Self {
        Self {
            name: None,
            dim: gram.nrows(),
            gram: gram.transpose().as_slice().to_vec(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_matrix(&DMatrix::identity(dim, dim))
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>, MetricError> {
        if self.gram.len() != self.dim * self.dim {
            return Err(MetricError::Shape(format!(
                "gram has {} entries, expected {}",
                self.gram.len(),
                self.dim * self.dim
            )));
        }
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &self.gram))
    }

    pub fn from_json(text: &str) -> Result<Self, MetricError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metric spec serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MetricError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

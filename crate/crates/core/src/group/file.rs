use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GroupError;

/// One nilpotent factor as stored on disk.
///
/// `derivation` is row-major `dim × dim`. `structure_constants` lists
/// `[i, j, k, c]` meaning `[e_i, e_j] = c·e_k`; the antisymmetric partner is
/// implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub dim: usize,
    pub derivation: Vec<f64>,
    pub root: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure_constants: Option<Vec<(usize, usize, usize, f64)>>,
}

/// Raw group definition, exactly as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub rank: usize,
    pub factors: Vec<FactorSpec>,
}

impl GroupSpec {
    pub fn from_json(text: &str) -> Result<Self, GroupError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("group spec serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GroupError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GroupError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = GroupSpec {
            name: Some("test".into()),
            rank: 2,
            factors: vec![FactorSpec {
                dim: 3,
                derivation: vec![1.0, 0.0, 0.0, 0.0, 0.1 + 0.2, 0.0, 0.0, 0.0, 1.3],
                root: vec![std::f64::consts::PI, -1e-300],
                structure_constants: Some(vec![(0, 1, 2, 1.0 / 3.0)]),
            }],
        };
        let text = spec.to_json();
        let back = GroupSpec::from_json(&text).unwrap();
        assert_eq!(back, spec);
        for (a, b) in back.factors[0].derivation.iter().zip(&spec.factors[0].derivation) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.to_json(), text);
    }
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CostModel, InitialState, Problem, SystemModel, SYMMETRY_TOL};
use crate::error::{Error, Result};
use crate::linalg::{inf_norm, Vector};
use crate::serde_mat::{from_rows, to_rows};

/// On-disk problem schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub noise: NoiseSpec,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "Gamma")]
    pub gamma: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_moment: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deterministic: Option<bool>,
}

/// `C` is a list of noise matrices; a bare matrix is read as one channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Channels(Vec<Vec<Vec<f64>>>),
    Single(Vec<Vec<f64>>),
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<Problem> {
        let a = from_rows(&self.a, "A")?;
        let b = from_rows(&self.b, "b")?;
        let noise = match &self.noise {
            NoiseSpec::Channels(cs) => cs
                .iter()
                .enumerate()
                .map(|(j, c)| from_rows(c, &format!("C[{j}]")))
                .collect::<Result<Vec<_>>>()?,
            NoiseSpec::Single(c) => vec![from_rows(c, "C")?],
        };
        let system = SystemModel::new(a, b, noise)?;
        let cost = CostModel::new(from_rows(&self.g, "G")?, from_rows(&self.gamma, "Gamma")?)?;
        let mean = Vector::from_vec(self.mean);
        let init = match (self.second_moment, self.deterministic) {
            (None, Some(false)) => {
                return Err(Error::Invariant(
                    "deterministic = false requires an explicit second_moment".into(),
                ))
            }
            (None, _) => InitialState::deterministic(mean)?,
            (Some(sm), Some(true)) => {
                let sm = from_rows(&sm, "second_moment")?;
                if sm.nrows() != mean.len() || sm.ncols() != mean.len() {
                    return Err(Error::Dimension(format!(
                        "second_moment is {}×{}, expected {n}×{n}",
                        sm.nrows(),
                        sm.ncols(),
                        n = mean.len()
                    )));
                }
                let outer = &mean * mean.transpose();
                if inf_norm(&(&sm - &outer)) > SYMMETRY_TOL * (1.0 + inf_norm(&outer)) {
                    return Err(Error::Invariant(
                        "deterministic = true but second_moment differs from mean·meanᵀ".into(),
                    ));
                }
                InitialState::deterministic(mean)?
            }
            (Some(sm), _) => InitialState::from_moments(mean, from_rows(&sm, "second_moment")?)?,
        };
        Problem::new(system, cost, init)
    }

    pub fn from_problem(p: &Problem) -> Self {
        Self {
            a: to_rows(p.system.a()),
            b: to_rows(p.system.b()),
            noise: NoiseSpec::Channels(p.system.noise().iter().map(to_rows).collect()),
            g: to_rows(p.cost.g()),
            gamma: to_rows(p.cost.gamma()),
            mean: p.init.mean().as_slice().to_vec(),
            second_moment: Some(to_rows(p.init.second_moment())),
            deterministic: Some(p.init.is_deterministic()),
        }
    }
}

/// Parses and validates a problem from JSON text.
pub fn parse_problem(text: &str) -> Result<Problem> {
    let file: ProblemFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_problem()
}

/// Reads, parses and validates a problem file.
pub fn load_problem(path: &Path) -> Result<Problem> {
    let text = fs::read_to_string(path)?;
    parse_problem(&text)
}

pub fn to_json_string(p: &Problem) -> String {
    serde_json::to_string_pretty(&ProblemFile::from_problem(p)).expect("problem serializes")
}

pub fn save_problem(p: &Problem, path: &Path) -> Result<()> {
    fs::write(path, to_json_string(p))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{"A":[[-1]],"b":[[1]],"C":[[[1]]],"G":[[1]],"Gamma":[[1]],"mean":[1],"deterministic":true}"#;

    #[test]
    fn scalar_example_loads() {
        let p = parse_problem(SCALAR).unwrap();
        assert_eq!((p.system.n(), p.system.m(), p.system.d()), (1, 1, 1));
        assert!(p.init.is_deterministic());
        assert_eq!(p.init.second_moment()[(0, 0)], 1.0);
    }

    #[test]
    fn bare_matrix_noise_is_one_channel() {
        let text = SCALAR.replace(r#""C":[[[1]]]"#, r#""C":[[1]]"#);
        let p = parse_problem(&text).unwrap();
        assert_eq!(p.system.d(), 1);
    }

    #[test]
    fn shape_mismatch() {
        let text = r#"{"A":[[-1,0,0],[0,-1,0],[0,0,-1]],"b":[[1],[1]],"C":[[[0,0,0],[0,0,0],[0,0,0]]],
            "G":[[1,0,0],[0,1,0],[0,0,1]],"Gamma":[[1]],"mean":[0,0,0]}"#;
        assert!(matches!(parse_problem(text), Err(Error::Dimension(_))));
    }

    #[test]
    fn ragged_rows() {
        let text = SCALAR.replace(r#""A":[[-1]]"#, r#""A":[[-1, 0],[0]]"#);
        assert!(matches!(parse_problem(&text), Err(Error::Dimension(_))));
    }

    #[test]
    fn covariance_not_psd() {
        let text = r#"{"A":[[-1]],"b":[[1]],"C":[[[1]]],"G":[[1]],"Gamma":[[1]],"mean":[1],"second_moment":[[0]]}"#;
        assert!(matches!(parse_problem(text), Err(Error::Invariant(_))));
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(parse_problem("{\"A\": [[1]"), Err(Error::Parse(_))));
    }

    #[test]
    fn deterministic_false_without_moment() {
        let text = SCALAR.replace("\"deterministic\":true", "\"deterministic\":false");
        assert!(matches!(parse_problem(&text), Err(Error::Invariant(_))));
    }
}

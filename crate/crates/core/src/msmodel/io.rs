use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FitResult, MsTModel};
use crate::error::{Error, Result};
use crate::tdist::MvtParams;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeDocument {
    pub mu: Vec<f64>,
    /// Row-major `p x p`.
    pub sigma: Vec<f64>,
    pub nu: f64,
}

/// JSON form of a fitted model. Floats are written in shortest round-trip
/// form, so a write/read cycle reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    #[serde(rename = "L")]
    pub n_states: usize,
    pub p: usize,
    pub regimes: Vec<RegimeDocument>,
    /// Row-major, rows = from-state.
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    pub delta: Vec<f64>,
    /// Series names, in column order.
    pub labels: Vec<String>,
    pub loglik: Option<f64>,
    pub k: usize,
    #[serde(rename = "T")]
    pub n_obs: Option<usize>,
}

impl ModelDocument {
    pub fn from_model(model: &MsTModel, labels: &[String]) -> Self {
        let l = model.n_states();
        let regimes = model
            .regimes()
            .iter()
            .map(|r| RegimeDocument {
                mu: r.mu().iter().copied().collect(),
                sigma: row_major(r.sigma()),
                nu: r.nu(),
            })
            .collect();
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            n_states: l,
            p: model.dim(),
            regimes,
            q: row_major(model.transition()),
            delta: model.initial().to_vec(),
            labels: labels.to_vec(),
            loglik: None,
            k: model.parameter_count(),
            n_obs: None,
        }
    }

    pub fn from_fit(fit: &FitResult, labels: &[String]) -> Self {
        Self {
            loglik: Some(fit.loglik),
            n_obs: Some(fit.n_obs),
            ..Self::from_model(&fit.model, labels)
        }
    }

    pub fn to_model(&self) -> Result<MsTModel> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model schema version {}",
                self.schema_version
            )));
        }
        let l = self.n_states;
        let p = self.p;
        if self.regimes.len() != l || self.q.len() != l * l {
            return Err(Error::invalid("model document shape does not match L"));
        }
        if !self.labels.is_empty() && self.labels.len() != p {
            return Err(Error::invalid("label count does not match p"));
        }
        let regimes = self
            .regimes
            .iter()
            .map(|r| {
                if r.mu.len() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        found: r.mu.len(),
                    });
                }
                MvtParams::from_slices(&r.mu, &r.sigma, r.nu)
            })
            .collect::<Result<Vec<_>>>()?;
        MsTModel::new(regimes, DMatrix::from_row_slice(l, l, &self.q), self.delta.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

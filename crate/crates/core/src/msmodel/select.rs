use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::em::{fit_restarts_with, EmOptions};
use super::FitResult;
use crate::error::{Error, Result};
use crate::ingest::ReturnPanel;

/// Free parameters of an `l`-state, `p`-variate model: per regime a location,
/// a symmetric scale and a degrees-of-freedom value, plus `l(l-1)` transition
/// and `l-1` initial probabilities.
pub fn parameter_count(l: usize, p: usize) -> usize {
    l * (p + p * (p + 1) / 2 + 1) + l * (l - 1) + (l - 1)
}

/// `(AIC, BIC) = (-2 ll + 2k, -2 ll + k ln T)`.
pub fn information_criteria(loglik: f64, k: usize, n_obs: usize) -> (f64, f64) {
    let k = k as f64;
    (
        -2.0 * loglik + 2.0 * k,
        -2.0 * loglik + k * (n_obs as f64).ln(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Aic,
    Bic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRow {
    pub l: usize,
    pub k: usize,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    /// `T <= k`: more parameters than observations.
    pub underdetermined: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SelectionTable {
    pub rows: Vec<SelectionRow>,
    pub criterion: Criterion,
    pub chosen: Option<usize>,
    /// Best fit per successful row, aligned with `rows`.
    pub fits: Vec<Option<FitResult>>,
}

impl SelectionTable {
    pub fn chosen_fit(&self) -> Option<&FitResult> {
        let l = self.chosen?;
        self.rows
            .iter()
            .position(|r| r.l == l)
            .and_then(|i| self.fits[i].as_ref())
    }
}

/// Fits every state count in `l_values` (with restarts) and picks the one
/// minimizing `criterion`. A failing state count is recorded in its row and
/// does not abort the sweep.
pub fn select_l(
    panel: &ReturnPanel,
    l_values: &[usize],
    criterion: Criterion,
    n_restarts: usize,
    seed: u64,
) -> Result<SelectionTable> {
    select_l_with(panel, l_values, criterion, n_restarts, seed, &EmOptions::default())
}

pub(crate) fn select_l_with(
    panel: &ReturnPanel,
    l_values: &[usize],
    criterion: Criterion,
    n_restarts: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<SelectionTable> {
    if l_values.is_empty() {
        return Err(Error::invalid("empty state-count range"));
    }
    let p = panel.dim();
    let n = panel.len();
    let fits: Vec<Result<FitResult>> = l_values
        .par_iter()
        .map(|&l| fit_restarts_with(panel, l, n_restarts, seed, opts))
        .collect();
    let mut rows = Vec::with_capacity(l_values.len());
    let mut kept = Vec::with_capacity(l_values.len());
    for (&l, fit) in l_values.iter().zip(fits) {
        let k = parameter_count(l, p);
        match fit {
            Ok(f) => {
                let (aic, bic) = information_criteria(f.loglik, k, n);
                rows.push(SelectionRow {
                    l,
                    k,
                    loglik: Some(f.loglik),
                    aic: Some(aic),
                    bic: Some(bic),
                    underdetermined: n <= k,
                    error: None,
                });
                kept.push(Some(f));
            }
            Err(e) => {
                rows.push(SelectionRow {
                    l,
                    k,
                    loglik: None,
                    aic: None,
                    bic: None,
                    underdetermined: n <= k,
                    error: Some(e.to_string()),
                });
                kept.push(None);
            }
        }
    }
    let score = |r: &SelectionRow| match criterion {
        Criterion::Aic => r.aic,
        Criterion::Bic => r.bic,
    };
    let chosen = rows
        .iter()
        .filter_map(|r| score(r).map(|s| (r.l, s)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(l, _)| l);
    Ok(SelectionTable {
        rows,
        criterion,
        chosen,
        fits: kept,
    })
}

/// Splits a scale matrix as `Sigma = Lambda Omega Lambda` with `Lambda` the
/// diagonal of standard deviations and `Omega` a correlation matrix.
pub fn decompose_sigma(sigma: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let sd: Vec<f64> = (0..sigma.nrows()).map(|i| sigma[(i, i)].sqrt()).collect();
    let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&sd));
    let omega = DMatrix::from_fn(sigma.nrows(), sigma.ncols(), |i, j| {
        if i == j {
            1.0
        } else {
            sigma[(i, j)] / (sd[i] * sd[j])
        }
    });
    (lambda, omega)
}

//! Markov-switching multivariate Student-t model: parameters, filtering and
//! smoothing, EM estimation, and model selection over the number of states.
//!
//! Transition matrices are row-stochastic with rows indexing the state at
//! `t - 1` and columns the state at `t`: `q[(j, l)] = P(S_t = l | S_{t-1} = j)`.
//! Predictive weights are therefore `pi' = filtered' Q^h`.

mod em;
mod filter;
mod io;
mod select;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ingest::ReturnPanel;
use crate::tdist::MvtParams;

pub use em::{em_fit, fit_restarts, initial_model, EmOptions, InitSpec};
pub use filter::{emission_logliks, forward_loglik, smooth, Smoothed};
pub use io::ModelDocument;
pub use select::{
    decompose_sigma, information_criteria, parameter_count, select_l, Criterion, SelectionRow,
    SelectionTable,
};

/// Smallest degrees of freedom a fitted regime may take.
pub const NU_MIN: f64 = 2.1;
/// Largest degrees of freedom a fitted regime may take (near-Gaussian).
pub const NU_MAX: f64 = 200.0;

/// `L` Student-t regimes, a row-stochastic transition matrix and an initial
/// state distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MsTModel {
    regimes: Vec<MvtParams>,
    q: DMatrix<f64>,
    delta: Vec<f64>,
}

impl MsTModel {
    pub fn new(regimes: Vec<MvtParams>, q: DMatrix<f64>, delta: Vec<f64>) -> Result<Self> {
        let l = regimes.len();
        if l == 0 {
            return Err(Error::invalid("model needs at least one regime"));
        }
        let p = regimes[0].dim();
        if let Some(r) = regimes.iter().find(|r| r.dim() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: r.dim(),
            });
        }
        if let Some(r) = regimes.iter().find(|r| r.nu() < NU_MIN) {
            return Err(Error::invalid(format!(
                "regime degrees of freedom {} below {NU_MIN}",
                r.nu()
            )));
        }
        if q.nrows() != l || q.ncols() != l {
            return Err(Error::DimensionMismatch {
                expected: l,
                found: q.nrows(),
            });
        }
        if q.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("transition probabilities must lie in [0, 1]"));
        }
        for (j, row) in q.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("transition row {j} sums to {s}")));
            }
        }
        if delta.len() != l {
            return Err(Error::DimensionMismatch {
                expected: l,
                found: delta.len(),
            });
        }
        let ds: f64 = delta.iter().sum();
        if delta.iter().any(|v| !(*v >= 0.0)) || (ds - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("initial distribution must lie on the simplex"));
        }
        Ok(Self { regimes, q, delta })
    }

    /// Single-regime model (`L = 1`).
    pub fn single(params: MvtParams) -> Result<Self> {
        Self::new(vec![params], DMatrix::from_element(1, 1, 1.0), vec![1.0])
    }

    pub fn n_states(&self) -> usize {
        self.regimes.len()
    }

    pub fn dim(&self) -> usize {
        self.regimes[0].dim()
    }

    pub fn regimes(&self) -> &[MvtParams] {
        &self.regimes
    }

    pub fn regime(&self, l: usize) -> &MvtParams {
        &self.regimes[l]
    }

    /// Transition matrix, rows = from-state, columns = to-state.
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn initial(&self) -> &[f64] {
        &self.delta
    }

    pub fn nus(&self) -> Vec<f64> {
        self.regimes.iter().map(MvtParams::nu).collect()
    }

    /// Free-parameter count `L(p + p(p+1)/2 + 1) + L(L-1) + (L-1)`.
    pub fn parameter_count(&self) -> usize {
        parameter_count(self.n_states(), self.dim())
    }

    /// Relabels states: new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let l = self.n_states();
        if perm.len() != l {
            return Err(Error::DimensionMismatch {
                expected: l,
                found: perm.len(),
            });
        }
        let regimes = perm.iter().map(|&i| self.regimes[i].clone()).collect();
        let q = DMatrix::from_fn(l, l, |i, j| self.q[(perm[i], perm[j])]);
        let delta = perm.iter().map(|&i| self.delta[i]).collect();
        Self::new(regimes, q, delta)
    }

    /// Permutation that sorts states by the location of the first series,
    /// descending.
    pub fn reporting_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_states()).collect();
        order.sort_by(|&a, &b| self.regimes[b].mu()[0].total_cmp(&self.regimes[a].mu()[0]));
        order
    }

    fn check_panel(&self, panel: &ReturnPanel) -> Result<()> {
        if panel.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: panel.dim(),
            });
        }
        Ok(())
    }
}

/// Outcome of an EM run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MsTModel,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `T x L` matrix of `P(S_t = l | I_T)`.
    pub smoothed: DMatrix<f64>,
    /// `T x L` matrix of `P(S_t = l | I_t)`.
    pub filtered: DMatrix<f64>,
    /// Log-likelihood at every E-step, in order.
    pub loglik_trace: Vec<f64>,
    /// Number of observations the model was fitted on.
    pub n_obs: usize,
}

impl FitResult {
    /// Wraps a known model: runs the smoother on `panel` without estimation.
    pub fn from_model(model: MsTModel, panel: &ReturnPanel) -> Result<Self> {
        let s = smooth(&model, panel)?;
        Ok(Self {
            model,
            loglik: s.loglik,
            iterations: 0,
            converged: true,
            smoothed: s.smoothed,
            filtered: s.filtered,
            loglik_trace: vec![s.loglik],
            n_obs: panel.len(),
        })
    }

    /// Largest one-step loglik decrease along the EM trace (0 if monotone).
    pub fn max_loglik_decrease(&self) -> f64 {
        self.loglik_trace
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }

    pub fn aic(&self) -> f64 {
        information_criteria(self.loglik, self.model.parameter_count(), self.n_obs).0
    }

    pub fn bic(&self) -> f64 {
        information_criteria(self.loglik, self.model.parameter_count(), self.n_obs).1
    }
}

//! Predictive mixtures: regime emissions weighted by the propagated chain.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::matrix_power;
use crate::msmodel::{FitResult, MsTModel};
use crate::tdist::MvtParams;

/// Which state probabilities seed the chain propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbFlavor {
    /// `P(S_t | I_t)`.
    #[default]
    Filtered,
    /// `P(S_t | I_T)`; uses information past `t`.
    Smoothed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveMixture {
    weights: Vec<f64>,
    components: Vec<MvtParams>,
    horizon: usize,
    as_of: usize,
}

impl PredictiveMixture {
    pub fn new(weights: Vec<f64>, components: Vec<MvtParams>, horizon: usize, as_of: usize) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                found: weights.len(),
            });
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        check_simplex(&weights, 1e-12)?;
        let p = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: c.dim(),
            });
        }
        Ok(Self {
            weights,
            components,
            horizon,
            as_of,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[MvtParams] {
        &self.components
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn as_of(&self) -> usize {
        self.as_of
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn mean(&self) -> Option<Vec<f64>> {
        if self.components.iter().any(|c| c.nu() <= 1.0) {
            return None;
        }
        let mut m = vec![0.0; self.dim()];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for (mi, ci) in m.iter_mut().zip(c.mu().iter()) {
                *mi += w * ci;
            }
        }
        Some(m)
    }

    pub fn logpdf(&self, y: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| if *w > 0.0 { w.ln() + c.logpdf(y) } else { f64::NEG_INFINITY })
            .collect();
        crate::linalg::log_sum_exp(&terms)
    }

    /// Same mixture with every coordinate mapped `y -> scale * y + shift`.
    pub fn affine(&self, scale: f64, shift: &[f64]) -> Result<Self> {
        let components = self
            .components
            .iter()
            .map(|c| c.affine(scale, shift))
            .collect::<Result<_>>()?;
        Ok(Self {
            components,
            ..self.clone()
        })
    }
}

fn check_simplex(w: &[f64], tol: f64) -> Result<()> {
    if w.iter().any(|v| !(*v >= -tol) || !v.is_finite()) {
        return Err(Error::invalid("probabilities must be nonnegative"));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// `pi_l = sum_j (Q^h)_{j,l} P(S_t = j | .)`, rows of `Q` being the
/// from-state.
pub fn predictive_weights(probs: &[f64], q: &DMatrix<f64>, h: usize) -> Result<Vec<f64>> {
    if h == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let l = probs.len();
    if q.nrows() != l || q.ncols() != l {
        return Err(Error::DimensionMismatch {
            expected: l,
            found: q.nrows(),
        });
    }
    check_simplex(probs, 1e-10)?;
    let qh = matrix_power(q, h as u64);
    let mut out: Vec<f64> = (0..l)
        .map(|c| (0..l).map(|j| probs[j] * qh[(j, c)]).sum::<f64>().max(0.0))
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Predictive mixture for `y_{t+h}` given information at index `t`.
pub fn build_predictive(fit: &FitResult, t: usize, h: usize, flavor: ProbFlavor) -> Result<PredictiveMixture> {
    let probs = match flavor {
        ProbFlavor::Filtered => &fit.filtered,
        ProbFlavor::Smoothed => &fit.smoothed,
    };
    predictive_from_probs(&fit.model, probs, t, h)
}

pub(crate) fn predictive_from_probs(
    model: &MsTModel,
    probs: &DMatrix<f64>,
    t: usize,
    h: usize,
) -> Result<PredictiveMixture> {
    if t >= probs.nrows() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: probs.nrows(),
        });
    }
    let row: Vec<f64> = probs.row(t).iter().copied().collect();
    let weights = predictive_weights(&row, model.transition(), h)?;
    PredictiveMixture::new(weights, model.regimes().to_vec(), h, t)
}

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use super::UniT;
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_lower, forward_solve_in_place, log_det_from_cholesky, sub_matrix, sub_vector,
    symmetrize,
};

/// Multivariate Student-t parameters: location, positive-definite scale
/// matrix and degrees of freedom. The Cholesky factor is computed once at
/// construction.
#[derive(Debug, Clone)]
pub struct MvtParams {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    nu: f64,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl PartialEq for MvtParams {
    fn eq(&self, other: &Self) -> bool {
        self.mu == other.mu && self.sigma == other.sigma && self.nu == other.nu
    }
}

impl MvtParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, nu: f64) -> Result<Self> {
        let k = mu.len();
        if k == 0 {
            return Err(Error::invalid("empty location vector"));
        }
        if sigma.nrows() != k || sigma.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: sigma.nrows(),
            });
        }
        if !(nu > 0.0) || nu.is_nan() {
            return Err(Error::invalid(format!("degrees of freedom {nu} must be positive")));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite location or scale entry"));
        }
        let tol = 1e-12 * sigma.abs().max().max(1.0);
        for i in 0..k {
            for j in (i + 1)..k {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > tol {
                    return Err(Error::NotPositiveDefinite(format!(
                        "scale matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let chol = cholesky_lower(&sigma)?;
        let log_det = log_det_from_cholesky(&chol);
        Ok(Self {
            mu,
            sigma,
            nu,
            chol,
            log_det,
        })
    }

    /// Convenience constructor from row-major slices.
    pub fn from_slices(mu: &[f64], sigma_row_major: &[f64], nu: f64) -> Result<Self> {
        let k = mu.len();
        if sigma_row_major.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                found: sigma_row_major.len(),
            });
        }
        Self::new(
            DVector::from_column_slice(mu),
            DMatrix::from_row_slice(k, k, sigma_row_major),
            nu,
        )
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Squared Mahalanobis distance `(x - mu)' Sigma^{-1} (x - mu)`.
    pub fn mahalanobis(&self, x: &[f64]) -> f64 {
        let mut z: Vec<f64> = x.iter().zip(self.mu.iter()).map(|(a, m)| a - m).collect();
        forward_solve_in_place(&self.chol, &mut z);
        z.iter().map(|v| v * v).sum()
    }

    /// Density normalizing constant in log space, shared across points.
    pub fn log_norm_const(&self) -> f64 {
        let k = self.dim() as f64;
        ln_gamma((self.nu + k) / 2.0)
            - ln_gamma(self.nu / 2.0)
            - 0.5 * k * (self.nu * PI).ln()
            - 0.5 * self.log_det
    }

    /// Log-density given a precomputed squared Mahalanobis distance.
    pub fn logpdf_from_mahalanobis(&self, m: f64) -> f64 {
        let k = self.dim() as f64;
        self.log_norm_const() - 0.5 * (self.nu + k) * (m / self.nu).ln_1p()
    }

    /// Log-density; panics on dimension mismatch (see [`mvt_logpdf`]).
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        self.logpdf_from_mahalanobis(self.mahalanobis(x))
    }

    /// Univariate view of coordinate `i`.
    pub fn coordinate(&self, i: usize) -> UniT {
        UniT::new(self.mu[i], self.sigma[(i, i)].sqrt(), self.nu)
    }

    /// Same distribution after `y -> scale * y + shift` applied to every
    /// coordinate (`shift` per coordinate).
    pub fn affine(&self, scale: f64, shift: &[f64]) -> Result<Self> {
        let mu = DVector::from_iterator(
            self.dim(),
            self.mu.iter().zip(shift).map(|(m, s)| scale * m + s),
        );
        Self::new(mu, &self.sigma * (scale * scale), self.nu)
    }
}

/// Log-density of the multivariate Student-t at `x`.
pub fn mvt_logpdf(x: &[f64], params: &MvtParams) -> Result<f64> {
    if x.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: x.len(),
        });
    }
    Ok(params.logpdf(x))
}

/// Distribution of the free coordinates given the conditioning coordinates,
/// itself a Student-t with `nu + d` degrees of freedom.
#[derive(Debug, Clone)]
pub struct ConditionalT {
    /// Original indices of the free coordinates, ascending.
    pub free_idx: Vec<usize>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub nu: f64,
    /// Size of the conditioning set.
    pub d: usize,
    /// Squared Mahalanobis distance of the conditioning values under the
    /// conditioning block's own scale.
    pub mahalanobis: f64,
}

impl ConditionalT {
    pub fn to_params(&self) -> Result<MvtParams> {
        MvtParams::new(self.mu.clone(), self.sigma.clone(), self.nu)
    }

    /// Univariate law when exactly one coordinate is free.
    pub fn univariate(&self) -> Option<UniT> {
        (self.mu.len() == 1).then(|| UniT::new(self.mu[0], self.sigma[(0, 0)].sqrt(), self.nu))
    }
}

fn check_index_set(idx: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    for &i in idx {
        if i >= k {
            return Err(Error::IndexOutOfRange { index: i, len: k });
        }
        if seen[i] {
            return Err(Error::invalid(format!("index {i} repeated")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Conditions `params` on `Y[cond_idx] = cond_values`.
///
/// With `q` the squared Mahalanobis distance of the conditioning values
/// under their marginal scale and `d = |cond_idx|`:
/// location `mu1 + S12 S22^{-1} (y2 - mu2)`, scale
/// `(nu + q) / (nu + d) * (S11 - S12 S22^{-1} S21)`, `nu + d` degrees of
/// freedom.
pub fn condition_mvt(
    params: &MvtParams,
    cond_idx: &[usize],
    cond_values: &[f64],
) -> Result<ConditionalT> {
    let k = params.dim();
    check_index_set(cond_idx, k)?;
    if cond_idx.is_empty() || cond_idx.len() >= k {
        return Err(Error::invalid(
            "conditioning set must be a proper nonempty subset of the coordinates",
        ));
    }
    if cond_values.len() != cond_idx.len() {
        return Err(Error::DimensionMismatch {
            expected: cond_idx.len(),
            found: cond_values.len(),
        });
    }
    let free_idx: Vec<usize> = (0..k).filter(|i| !cond_idx.contains(i)).collect();
    let d = cond_idx.len();
    let s22 = sub_matrix(params.sigma(), cond_idx, cond_idx);
    let l22 = cholesky_lower(&s22)
        .map_err(|e| Error::NotPositiveDefinite(format!("singular conditioning block: {e}")))?;

    // w = L22^{-1} (y2 - mu2), so q = |w|^2 and S12 S22^{-1} (y2 - mu2) = V' w
    let mut w: Vec<f64> = cond_idx
        .iter()
        .zip(cond_values)
        .map(|(&j, y)| y - params.mu()[j])
        .collect();
    forward_solve_in_place(&l22, &mut w);
    let q: f64 = w.iter().map(|v| v * v).sum();

    // V = L22^{-1} S21, column by column
    let s21 = sub_matrix(params.sigma(), cond_idx, &free_idx);
    let mut v = s21.clone();
    for c in 0..v.ncols() {
        let mut col: Vec<f64> = v.column(c).iter().copied().collect();
        forward_solve_in_place(&l22, &mut col);
        v.column_mut(c).copy_from_slice(&col);
    }
    let wv = DVector::from_column_slice(&w);
    let mu1 = sub_vector(params.mu(), &free_idx);
    let mu = mu1 + v.transpose() * wv;
    let s11 = sub_matrix(params.sigma(), &free_idx, &free_idx);
    let mut schur = s11 - v.transpose() * &v;
    symmetrize(&mut schur);
    let nu = params.nu();
    let factor = (nu + q) / (nu + d as f64);
    Ok(ConditionalT {
        free_idx,
        mu,
        sigma: schur * factor,
        nu: nu + d as f64,
        d,
        mahalanobis: q,
    })
}

/// Marginal law of the coordinates in `keep_idx` (in the given order).
pub fn marginal_mvt(params: &MvtParams, keep_idx: &[usize]) -> Result<MvtParams> {
    if keep_idx.is_empty() {
        return Err(Error::invalid("empty index set"));
    }
    check_index_set(keep_idx, params.dim())?;
    MvtParams::new(
        sub_vector(params.mu(), keep_idx),
        sub_matrix(params.sigma(), keep_idx, keep_idx),
        params.nu(),
    )
}

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::digamma;

use super::filter::forward_backward;
use super::{FitResult, MsTModel, NU_MAX, NU_MIN};
use crate::error::{Error, Result};
use crate::ingest::ReturnPanel;
use crate::linalg::{cholesky_lower, forward_solve_in_place, symmetrize};
use crate::tdist::MvtParams;

/// Starting point for an EM run.
#[derive(Debug, Clone)]
pub enum InitSpec {
    /// Blocks of observations cut at the empirical quantiles of the first
    /// principal component's scores.
    Quantile,
    /// Nearest-center partition around `L` randomly drawn observations.
    Random { seed: u64 },
    /// Start from given parameters.
    Model(MsTModel),
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    /// Relative log-likelihood change that stops the iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial degrees of freedom for generated starts.
    pub nu_init: f64,
    /// Diagonal of the initial transition matrix.
    pub stay_prob: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 2000,
            nu_init: 8.0,
            stay_prob: 0.9,
        }
    }
}

const COND_LIMIT: f64 = 1e12;

fn sample_moments(rows: &[&[f64]]) -> (DVector<f64>, DMatrix<f64>) {
    let p = rows[0].len();
    let total = rows.len() as f64;
    let mut mean = DVector::zeros(p);
    for r in rows {
        for j in 0..p {
            mean[j] += r[j];
        }
    }
    mean /= total;
    let mut cov = DMatrix::zeros(p, p);
    for r in rows {
        for a in 0..p {
            let da = r[a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    cov /= total;
    (mean, cov)
}

/// Adds `1e-8 * trace / p` to the diagonal when the condition number
/// exceeds `1e12` (or the matrix is not numerically positive definite).
fn regularize(sigma: &mut DMatrix<f64>) {
    let p = sigma.nrows();
    let eig = SymmetricEigen::new(sigma.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || max / min > COND_LIMIT {
        let ridge = 1e-8 * sigma.trace() / p as f64;
        let ridge = if ridge > 0.0 { ridge } else { 1e-12 };
        for i in 0..p {
            sigma[(i, i)] += ridge;
        }
        // still degenerate: lift the spectrum floor explicitly
        let eig = SymmetricEigen::new(sigma.clone());
        if eig.eigenvalues.min() <= 0.0 || eig.eigenvalues.max() / eig.eigenvalues.min() > COND_LIMIT
        {
            let floor = eig.eigenvalues.max() / COND_LIMIT;
            let vals = eig.eigenvalues.map(|v| v.max(floor));
            *sigma = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            symmetrize(sigma);
        }
    }
}

fn block_params(rows: &[&[f64]], nu: f64, fallback: &(DVector<f64>, DMatrix<f64>)) -> Result<MvtParams> {
    let p = fallback.0.len();
    let (mu, mut cov) = if rows.len() >= p + 2 {
        sample_moments(rows)
    } else {
        fallback.clone()
    };
    // scale so the implied covariance nu/(nu-2) * Sigma matches the block's
    cov *= (nu - 2.0) / nu;
    regularize(&mut cov);
    MvtParams::new(mu, cov, nu)
}

fn chain_init(l: usize, stay: f64) -> (DMatrix<f64>, Vec<f64>) {
    let q = if l == 1 {
        DMatrix::from_element(1, 1, 1.0)
    } else {
        let off = (1.0 - stay) / (l - 1) as f64;
        DMatrix::from_fn(l, l, |i, j| if i == j { stay } else { off })
    };
    (q, vec![1.0 / l as f64; l])
}

/// Builds the starting model described by `init`.
pub fn initial_model(panel: &ReturnPanel, l: usize, init: &InitSpec, opts: &EmOptions) -> Result<MsTModel> {
    if let InitSpec::Model(m) = init {
        if m.n_states() != l || m.dim() != panel.dim() {
            return Err(Error::invalid("initial model does not match state count or panel"));
        }
        return Ok(m.clone());
    }
    let t_len = panel.len();
    let p = panel.dim();
    let data: Vec<Vec<f64>> = (0..t_len).map(|t| panel.row(t)).collect();
    let all: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let global = sample_moments(&all);
    let nu = opts.nu_init;

    let labels: Vec<usize> = match init {
        InitSpec::Quantile => {
            let eig = SymmetricEigen::new(global.1.clone());
            let top = eig.eigenvalues.imax();
            let mut v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
            // fix the sign so the largest-magnitude loading is positive
            let lead = v
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(1.0);
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            let scores: Vec<f64> = data
                .iter()
                .map(|r| r.iter().zip(&v).zip(global.0.iter()).map(|((y, w), m)| (y - m) * w).sum())
                .collect();
            let mut order: Vec<usize> = (0..t_len).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let mut labels = vec![0; t_len];
            for (rank, &t) in order.iter().enumerate() {
                labels[t] = (rank * l / t_len).min(l - 1);
            }
            labels
        }
        InitSpec::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let chol = cholesky_lower(&{
                let mut c = global.1.clone();
                regularize(&mut c);
                c
            })?;
            let mut centers = Vec::with_capacity(l);
            while centers.len() < l.min(t_len) {
                let c = rng.random_range(0..t_len);
                if !centers.contains(&c) {
                    centers.push(c);
                }
            }
            let dist = |a: &[f64], b: &[f64]| {
                let mut z: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                forward_solve_in_place(&chol, &mut z);
                z.iter().map(|v| v * v).sum::<f64>()
            };
            data.iter()
                .map(|r| {
                    (0..l)
                        .min_by(|&a, &b| {
                            dist(r, &data[centers[a]]).total_cmp(&dist(r, &data[centers[b]]))
                        })
                        .unwrap_or(0)
                })
                .collect()
        }
        InitSpec::Model(_) => unreachable!(),
    };

    let mut rng = match init {
        InitSpec::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9))),
        _ => None,
    };
    let mut regimes = Vec::with_capacity(l);
    for s in 0..l {
        let rows: Vec<&[f64]> = data
            .iter()
            .zip(&labels)
            .filter(|(_, &lab)| lab == s)
            .map(|(r, _)| r.as_slice())
            .collect();
        let mut fallback = global.clone();
        if rows.len() < p + 2 {
            if let Some(rng) = rng.as_mut() {
                for j in 0..p {
                    let shift: f64 = rng.random_range(-0.5..0.5);
                    fallback.0[j] += shift * global.1[(j, j)].sqrt();
                }
            }
        }
        regimes.push(block_params(&rows, nu, &fallback)?);
    }
    let (q, delta) = chain_init(l, opts.stay_prob);
    MsTModel::new(regimes, q, delta)
}

/// Root of the degrees-of-freedom stationarity equation
/// `ln(nu/2) - digamma(nu/2) + 1 + c = 0` on `[NU_MIN, NU_MAX]`, clipped at
/// the bounds. The left side decreases in `nu`.
fn solve_nu(c: f64) -> f64 {
    let g = |nu: f64| (nu / 2.0).ln() - digamma(nu / 2.0) + 1.0 + c;
    let (mut lo, mut hi) = (NU_MIN, NU_MAX);
    let (g_lo, g_hi) = (g(lo), g(hi));
    if g_lo <= 0.0 {
        return lo;
    }
    if g_hi >= 0.0 {
        return hi;
    }
    // bisection on ln(nu): the function is smooth and monotone, 60 halvings
    // of a factor-100 interval reach ~1e-16 relative width
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
    }
    (lo * hi).sqrt()
}

struct EStep {
    loglik: f64,
    smoothed: DMatrix<f64>,
    filtered: DMatrix<f64>,
    transitions: DMatrix<f64>,
    /// `T x L` squared Mahalanobis distances.
    maha: DMatrix<f64>,
}

fn e_step(model: &MsTModel, data: &[Vec<f64>]) -> Result<EStep> {
    let t_len = data.len();
    let l = model.n_states();
    let p = model.dim() as f64;
    let mut log_emis = DMatrix::zeros(t_len, l);
    let mut maha = DMatrix::zeros(t_len, l);
    for (s, reg) in model.regimes().iter().enumerate() {
        let c = reg.log_norm_const();
        for (t, y) in data.iter().enumerate() {
            let m = reg.mahalanobis(y);
            maha[(t, s)] = m;
            log_emis[(t, s)] = c - 0.5 * (reg.nu() + p) * (m / reg.nu()).ln_1p();
        }
    }
    let post = forward_backward(&log_emis, model.transition(), model.initial(), false)?;
    Ok(EStep {
        loglik: post.loglik,
        smoothed: post.smoothed,
        filtered: post.filtered,
        transitions: post.transitions,
        maha,
    })
}

fn m_step(model: &MsTModel, data: &[Vec<f64>], e: &EStep) -> Result<MsTModel> {
    let l = model.n_states();
    let p = model.dim();
    let pf = p as f64;
    let mut regimes = Vec::with_capacity(l);
    for s in 0..l {
        let reg = model.regime(s);
        let nu = reg.nu();
        let gamma: Vec<f64> = e.smoothed.column(s).iter().copied().collect();
        let mass: f64 = gamma.iter().sum();
        if mass < (p + 2) as f64 {
            return Err(Error::RegimeCollapse {
                regime: s,
                mass,
                required: p + 2,
            });
        }
        let u: Vec<f64> = (0..data.len())
            .map(|t| (nu + pf) / (nu + e.maha[(t, s)]))
            .collect();
        let gu: Vec<f64> = gamma.iter().zip(&u).map(|(g, u)| g * u).collect();
        let gu_sum: f64 = gu.iter().sum();
        let mut mu = DVector::zeros(p);
        for (t, y) in data.iter().enumerate() {
            for j in 0..p {
                mu[j] += gu[t] * y[j];
            }
        }
        mu /= gu_sum;
        let mut sigma = DMatrix::zeros(p, p);
        for (t, y) in data.iter().enumerate() {
            for a in 0..p {
                let da = y[a] - mu[a];
                for b in 0..=a {
                    sigma[(a, b)] += gu[t] * da * (y[b] - mu[b]);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                sigma[(b, a)] = sigma[(a, b)];
            }
        }
        sigma /= mass;
        regularize(&mut sigma);

        let weighted: f64 = gamma
            .iter()
            .zip(&u)
            .map(|(g, u)| g * (u.ln() - u))
            .sum::<f64>()
            / mass;
        let c = weighted + digamma((nu + pf) / 2.0) - ((nu + pf) / 2.0).ln();
        let nu_new = solve_nu(c);
        regimes.push(MvtParams::new(mu, sigma, nu_new)?);
    }

    let mut q = model.transition().clone();
    for j in 0..l {
        let row_sum: f64 = e.transitions.row(j).sum();
        if row_sum > 0.0 {
            for s in 0..l {
                q[(j, s)] = e.transitions[(j, s)] / row_sum;
            }
        }
    }
    // exact stochasticity after division round-off
    for j in 0..l {
        let s: f64 = q.row(j).sum();
        for v in q.row_mut(j).iter_mut() {
            *v /= s;
        }
    }
    let d_sum: f64 = e.smoothed.row(0).sum();
    let delta: Vec<f64> = e.smoothed.row(0).iter().map(|v| v / d_sum).collect();
    MsTModel::new(regimes, q, delta)
}

/// Fits an `L`-state model by ECM.
///
/// Each iteration runs an exact forward-backward E-step, then updates
/// locations and scales from posterior-times-gamma-weight moments, the chain
/// from expected transition counts, and each regime's degrees of freedom by a
/// bounded one-dimensional root solve. Stops when the relative change of the
/// log-likelihood drops below `tol`; hitting `max_iter` returns the last
/// iterate with `converged = false`. States are relabelled by descending
/// location of the first series.
pub fn em_fit(panel: &ReturnPanel, l: usize, init: &InitSpec, tol: f64, max_iter: usize) -> Result<FitResult> {
    let opts = EmOptions {
        tol,
        max_iter,
        ..EmOptions::default()
    };
    em_fit_with(panel, l, init, &opts)
}

pub(crate) fn em_fit_with(panel: &ReturnPanel, l: usize, init: &InitSpec, opts: &EmOptions) -> Result<FitResult> {
    if l == 0 {
        return Err(Error::invalid("state count must be at least 1"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let p = panel.dim();
    if l > panel.len() {
        return Err(Error::invalid("more states than observations"));
    }
    if panel.len() < 10 * p {
        return Err(Error::invalid(format!(
            "panel too short for fitting: T = {} < 10 p = {}",
            panel.len(),
            10 * p
        )));
    }
    let data: Vec<Vec<f64>> = (0..panel.len()).map(|t| panel.row(t)).collect();
    let mut model = initial_model(panel, l, init, opts)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut e = e_step(&model, &data)?;
    trace.push(e.loglik);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = m_step(&model, &data, &e)?;
        let e_next = e_step(&next, &data)?;
        iterations += 1;
        let prev = e.loglik;
        trace.push(e_next.loglik);
        model = next;
        e = e_next;
        if ((e.loglik - prev) / prev.abs().max(1.0)).abs() < opts.tol {
            converged = true;
            break;
        }
    }

    let order = model.reporting_order();
    let model = model.permuted(&order)?;
    let reorder = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |t, s| m[(t, order[s])]);
    Ok(FitResult {
        smoothed: reorder(&e.smoothed),
        filtered: reorder(&e.filtered),
        model,
        loglik: e.loglik,
        iterations,
        converged,
        loglik_trace: trace,
        n_obs: panel.len(),
    })
}

/// Seed of restart `r` derived from the base seed.
fn restart_seed(seed: u64, r: usize) -> u64 {
    let mut z = seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initialization used by restart `r`: the quantile start first, then
/// seeded random partitions.
pub(crate) fn restart_init(seed: u64, r: usize) -> InitSpec {
    if r == 0 {
        InitSpec::Quantile
    } else {
        InitSpec::Random {
            seed: restart_seed(seed, r),
        }
    }
}

/// Runs `n_restarts` EM fits and keeps the best log-likelihood.
///
/// Restart 0 uses the quantile initialization and restart `r > 0` a random
/// partition seeded from `(seed, r)`; fits run in parallel and the winner is
/// the highest log-likelihood, ties going to the lowest restart index.
pub fn fit_restarts(panel: &ReturnPanel, l: usize, n_restarts: usize, seed: u64) -> Result<FitResult> {
    fit_restarts_with(panel, l, n_restarts, seed, &EmOptions::default())
}

pub(crate) fn fit_restarts_with(
    panel: &ReturnPanel,
    l: usize,
    n_restarts: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<FitResult> {
    if n_restarts == 0 {
        return Err(Error::invalid("at least one restart is required"));
    }
    let results: Vec<Result<FitResult>> = (0..n_restarts)
        .into_par_iter()
        .map(|r| em_fit_with(panel, l, &restart_init(seed, r), opts))
        .collect();
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for res in results {
        match res {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        Error::AllRestartsFailed(
            n_restarts,
            Box::new(last_err.unwrap_or_else(|| Error::invalid("no fits"))),
        )
    })
}

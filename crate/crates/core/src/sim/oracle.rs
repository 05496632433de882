use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::ingest::ReturnPanel;
use crate::msmodel::MsTModel;
use crate::tdist::MvtParams;

/// Student-t density evaluated through an LU decomposition, kept apart from
/// the Cholesky path in `tdist`.
struct LuDensity {
    mu: DVector<f64>,
    inv: DMatrix<f64>,
    nu: f64,
    log_const: f64,
}

impl LuDensity {
    fn new(mu: DVector<f64>, sigma: &DMatrix<f64>, nu: f64) -> Result<Self> {
        let k = mu.len() as f64;
        let lu = sigma.clone().lu();
        let det = lu.determinant();
        if !(det > 0.0) {
            return Err(Error::NotPositiveDefinite("oracle: non-positive determinant".into()));
        }
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("oracle: singular scale".into()))?;
        let log_const =
            ln_gamma((nu + k) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * k * (nu * PI).ln() - 0.5 * det.ln();
        Ok(Self {
            mu,
            inv,
            nu,
            log_const,
        })
    }

    fn from_params(p: &MvtParams) -> Result<Self> {
        Self::new(p.mu().clone(), p.sigma(), p.nu())
    }

    fn logpdf(&self, x: &[f64]) -> f64 {
        let k = self.mu.len();
        let mut q = 0.0;
        for i in 0..k {
            let di = x[i] - self.mu[i];
            for j in 0..k {
                q += di * self.inv[(i, j)] * (x[j] - self.mu[j]);
            }
        }
        self.log_const - 0.5 * (self.nu + k as f64) * (1.0 + q / self.nu).ln()
    }
}

fn lse_push(acc: &mut f64, v: f64) {
    if v == f64::NEG_INFINITY {
        return;
    }
    if *acc == f64::NEG_INFINITY {
        *acc = v;
    } else if v > *acc {
        *acc = v + (*acc - v).exp().ln_1p();
    } else {
        *acc += (v - *acc).exp().ln_1p();
    }
}

fn ln_prob(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn emissions(model: &MsTModel, panel: &ReturnPanel) -> Result<Vec<Vec<f64>>> {
    if panel.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: panel.dim(),
        });
    }
    let dens: Vec<LuDensity> = model
        .regimes()
        .iter()
        .map(LuDensity::from_params)
        .collect::<Result<_>>()?;
    Ok((0..panel.len())
        .map(|t| {
            let y = panel.row(t);
            dens.iter().map(|d| d.logpdf(&y)).collect()
        })
        .collect())
}

fn check_size(l: usize, t: usize) -> Result<usize> {
    let mut paths: usize = 1;
    for _ in 0..t {
        paths = paths.saturating_mul(l);
        if paths > 1_000_000 {
            return Err(Error::TooLarge(format!("{l}^{t} state paths exceed 1e6")));
        }
    }
    Ok(paths)
}

/// Visits every state path with its joint log-weight
/// `log P(path) + sum_t log f(y_t | s_t)`.
fn for_each_path(model: &MsTModel, panel: &ReturnPanel, mut visit: impl FnMut(&[usize], f64)) -> Result<()> {
    let l = model.n_states();
    let t_len = panel.len();
    let n_paths = check_size(l, t_len)?;
    let emis = emissions(model, panel)?;
    let q = model.transition();
    let mut path = vec![0usize; t_len];
    for code in 0..n_paths {
        let mut c = code;
        for s in path.iter_mut() {
            *s = c % l;
            c /= l;
        }
        let mut w = ln_prob(model.initial()[path[0]]) + emis[0][path[0]];
        for t in 1..t_len {
            w += ln_prob(q[(path[t - 1], path[t])]) + emis[t][path[t]];
        }
        visit(&path, w);
    }
    Ok(())
}

/// Log-likelihood by summing over all `L^T` state paths (`L^T <= 1e6`).
pub fn brute_force_loglik(model: &MsTModel, panel: &ReturnPanel) -> Result<f64> {
    let mut acc = f64::NEG_INFINITY;
    for_each_path(model, panel, |_, w| lse_push(&mut acc, w))?;
    Ok(acc)
}

#[derive(Debug, Clone)]
pub struct BruteForcePosteriors {
    pub loglik: f64,
    /// `T x L` marginal posteriors.
    pub smoothed: DMatrix<f64>,
    /// `T x L` filtered probabilities, each from enumerating paths over
    /// `1..=t` only.
    pub filtered: DMatrix<f64>,
    /// `(T-1)` pairwise posteriors.
    pub pairwise: Vec<DMatrix<f64>>,
}

/// Posterior state marginals by path enumeration.
pub fn brute_force_posteriors(model: &MsTModel, panel: &ReturnPanel) -> Result<BruteForcePosteriors> {
    let l = model.n_states();
    let t_len = panel.len();
    let mut weights = Vec::new();
    let mut paths = Vec::new();
    let mut total = f64::NEG_INFINITY;
    for_each_path(model, panel, |path, w| {
        weights.push(w);
        paths.push(path.to_vec());
        lse_push(&mut total, w);
    })?;
    let mut smoothed = DMatrix::zeros(t_len, l);
    let mut pairwise = vec![DMatrix::zeros(l, l); t_len.saturating_sub(1)];
    for (path, w) in paths.iter().zip(&weights) {
        let prob = (w - total).exp();
        for t in 0..t_len {
            smoothed[(t, path[t])] += prob;
            if t + 1 < t_len {
                pairwise[t][(path[t], path[t + 1])] += prob;
            }
        }
    }
    let mut filtered = DMatrix::zeros(t_len, l);
    for t in 0..t_len {
        let rows: Vec<Vec<f64>> = (0..=t).map(|i| panel.row(i)).collect();
        let head = ReturnPanel::from_rows(&rows)?;
        let mut acc = vec![f64::NEG_INFINITY; l];
        let mut tot = f64::NEG_INFINITY;
        for_each_path(model, &head, |path, w| {
            lse_push(&mut acc[path[t]], w);
            lse_push(&mut tot, w);
        })?;
        for s in 0..l {
            filtered[(t, s)] = (acc[s] - tot).exp();
        }
    }
    Ok(BruteForcePosteriors {
        loglik: total,
        smoothed,
        filtered,
        pairwise,
    })
}

/// One weighted component of the joint law on which a grid oracle slices.
#[derive(Debug, Clone)]
pub struct GridComponent {
    pub weight: f64,
    pub params: MvtParams,
}

struct Slice {
    xs: Vec<f64>,
    dens: Vec<f64>,
    cum: Vec<f64>,
}

impl Slice {
    fn total(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    /// Inverts the trapezoid CDF, treating the density as linear per cell.
    fn invert(&self, tau: f64) -> f64 {
        let target = tau * self.total();
        let k = match self.cum.iter().position(|&c| c >= target) {
            Some(0) => return self.xs[0],
            Some(k) => k - 1,
            None => return *self.xs.last().unwrap_or(&f64::NAN),
        };
        let h = self.xs[k + 1] - self.xs[k];
        let (f0, f1) = (self.dens[k], self.dens[k + 1]);
        let need = target - self.cum[k];
        // f0 d + (f1 - f0) d^2 / (2h) = need
        let a = (f1 - f0) / (2.0 * h);
        let d = if a.abs() < 1e-300 {
            need / f0
        } else {
            let disc = (f0 * f0 + 4.0 * a * need).max(0.0);
            2.0 * need / (f0 + disc.sqrt())
        };
        self.xs[k] + d.clamp(0.0, h)
    }

    /// `E[X | X <= threshold]` by trapezoid integration of `x f(x)`.
    fn tail_mean(&self, threshold: f64) -> f64 {
        let mut mass = 0.0;
        let mut first = 0.0;
        for k in 0..self.xs.len() - 1 {
            let (x0, x1) = (self.xs[k], self.xs[k + 1]);
            if x0 >= threshold {
                break;
            }
            let (f0, f1) = (self.dens[k], self.dens[k + 1]);
            let hi = x1.min(threshold);
            let f_hi = f0 + (f1 - f0) * (hi - x0) / (x1 - x0);
            let h = hi - x0;
            mass += 0.5 * h * (f0 + f_hi);
            // exact integral of x times the linear interpolant
            first += h / 6.0 * (f0 * (2.0 * x0 + hi) + f_hi * (x0 + 2.0 * hi));
        }
        first / mass
    }
}

/// Weighted component densities, the window's lower and upper ends, the
/// smallest conditional scale, and the analytic marginal density of the
/// conditioners.
type SliceSetup = (Vec<(f64, LuDensity)>, f64, f64, f64, f64);

fn slice_setup(
    comps: &[GridComponent],
    target: usize,
    cond_idx: &[usize],
    cond_values: &[f64],
) -> Result<SliceSetup> {
    if comps.is_empty() {
        return Err(Error::GridFailure("no components".into()));
    }
    if cond_idx.contains(&target) || cond_idx.len() != cond_values.len() {
        return Err(Error::GridFailure("target must be outside the conditioning set".into()));
    }
    let k = comps[0].params.dim();
    if target >= k || cond_idx.iter().any(|&i| i >= k) {
        return Err(Error::GridFailure("index out of range".into()));
    }
    // joint over (target, cond...) by plain sub-block extraction
    let idx: Vec<usize> = std::iter::once(target).chain(cond_idx.iter().copied()).collect();
    let mut joint = Vec::with_capacity(comps.len());
    let mut marginal_density = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut min_scale = f64::INFINITY;
    for c in comps {
        let p = &c.params;
        let mu = DVector::from_iterator(idx.len(), idx.iter().map(|&i| p.mu()[i]));
        let sig = DMatrix::from_fn(idx.len(), idx.len(), |a, b| p.sigma()[(idx[a], idx[b])]);
        let nu = p.nu();
        let d = cond_idx.len();

        // crude conditional location/scale through an explicit inverse, only
        // to size the grid
        let s22 = sig.view((1, 1), (d, d)).into_owned();
        let s12 = sig.view((0, 1), (1, d)).into_owned();
        let inv22 = s22
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::GridFailure("singular conditioning block".into()))?;
        let diff = DVector::from_iterator(d, (0..d).map(|j| cond_values[j] - mu[1 + j]));
        let q = (diff.transpose() * &inv22 * &diff)[(0, 0)];
        let loc = mu[0] + (&s12 * &inv22 * &diff)[(0, 0)];
        let schur = sig[(0, 0)] - (&s12 * &inv22 * s12.transpose())[(0, 0)];
        let scale = (schur * (nu + q) / (nu + d as f64)).max(0.0).sqrt();
        lo = lo.min(loc - 60.0 * scale);
        hi = hi.max(loc + 60.0 * scale);
        min_scale = min_scale.min(scale);

        let marg = LuDensity::new(
            DVector::from_column_slice(&mu.as_slice()[1..]),
            &s22,
            nu,
        )?;
        marginal_density += c.weight * marg.logpdf(cond_values).exp();
        joint.push((c.weight, LuDensity::new(mu, &sig, nu)?));
    }
    Ok((joint, lo, hi, min_scale, marginal_density))
}

fn build_slice(
    joint: &[(f64, LuDensity)],
    cond_values: &[f64],
    lo: f64,
    hi: f64,
    nodes: usize,
) -> Slice {
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut point = vec![0.0; 1 + cond_values.len()];
    point[1..].copy_from_slice(cond_values);
    let xs: Vec<f64> = (0..nodes).map(|i| lo + h * i as f64).collect();
    let dens: Vec<f64> = xs
        .iter()
        .map(|&x| {
            point[0] = x;
            joint.iter().map(|(w, d)| w * d.logpdf(&point).exp()).sum()
        })
        .collect();
    let mut cum = vec![0.0; nodes];
    for i in 1..nodes {
        cum[i] = cum[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
    }
    Slice { xs, dens, cum }
}

fn grid_slice(
    comps: &[GridComponent],
    target: usize,
    cond_idx: &[usize],
    cond_values: &[f64],
) -> Result<Slice> {
    let (joint, mut lo, mut hi, min_scale, marginal) =
        slice_setup(comps, target, cond_idx, cond_values)?;
    for _ in 0..=3 {
        let spacing = min_scale / 200.0;
        let nodes = (((hi - lo) / spacing).ceil() as usize + 1).clamp(20_001, 4_000_001);
        let slice = build_slice(&joint, cond_values, lo, hi, nodes);
        if slice.total() >= (1.0 - 1e-6) * marginal {
            return Ok(slice);
        }
        let mid = 0.5 * (lo + hi);
        let half = hi - lo;
        lo = mid - half;
        hi = mid + half;
    }
    Err(Error::GridFailure(
        "slice mass below 1 - 1e-6 after 3 expansions".into(),
    ))
}

/// `tau`-quantile of coordinate `target` given `Y[cond_idx] = cond_values`,
/// by normalizing and integrating the joint density along a fine 1-D grid.
pub fn grid_conditional_quantile(
    comps: &[GridComponent],
    target: usize,
    cond_idx: &[usize],
    cond_values: &[f64],
    tau: f64,
) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidLevel(tau));
    }
    Ok(grid_slice(comps, target, cond_idx, cond_values)?.invert(tau))
}

/// Conditional expected shortfall: mean of the sliced law below its own
/// `tau`-quantile.
pub fn grid_conditional_es(
    comps: &[GridComponent],
    target: usize,
    cond_idx: &[usize],
    cond_values: &[f64],
    tau: f64,
) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidLevel(tau));
    }
    let slice = grid_slice(comps, target, cond_idx, cond_values)?;
    let q = slice.invert(tau);
    Ok(slice.tail_mean(q))
}

use super::UniT;
use crate::error::{Error, Result};

fn check_mixture(weights: &[f64], comps: &[UniT]) -> Result<()> {
    if weights.is_empty() || weights.len() != comps.len() {
        return Err(Error::DimensionMismatch {
            expected: comps.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("mixture weights must be nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
    }
    for c in comps {
        if !(c.scale > 0.0) || !(c.nu > 0.0) || !c.loc.is_finite() || !c.scale.is_finite() {
            return Err(Error::invalid(format!("invalid mixture component {c:?}")));
        }
    }
    Ok(())
}

pub fn mixture_cdf(weights: &[f64], comps: &[UniT], x: f64) -> f64 {
    weights.iter().zip(comps).map(|(w, c)| w * c.cdf(x)).sum()
}

pub fn mixture_pdf(weights: &[f64], comps: &[UniT], x: f64) -> f64 {
    weights.iter().zip(comps).map(|(w, c)| w * c.pdf(x)).sum()
}

/// `tau`-quantile of a finite mixture of univariate Student-t laws.
///
/// The root of `F(x) = tau` is bracketed starting from
/// `[min loc - 50 s, max loc + 50 s]` with `s` the largest component scale,
/// widened geometrically when needed, then refined by Newton steps that fall
/// back to bisection whenever they leave the bracket.
pub fn mixture_quantile(weights: &[f64], comps: &[UniT], tau: f64) -> Result<f64> {
    check_mixture(weights, comps)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidLevel(tau));
    }
    if comps.len() == 1 {
        return comps[0].quantile(tau);
    }
    let max_scale = comps.iter().map(|c| c.scale).fold(0.0, f64::max);
    let min_scale = comps.iter().map(|c| c.scale).fold(f64::INFINITY, f64::min);
    let min_loc = comps.iter().map(|c| c.loc).fold(f64::INFINITY, f64::min);
    let max_loc = comps.iter().map(|c| c.loc).fold(f64::NEG_INFINITY, f64::max);
    let f = |x: f64| mixture_cdf(weights, comps, x) - tau;

    let mut width = 50.0 * max_scale;
    let mut lo = min_loc - width;
    let mut hi = max_loc + width;
    let mut expansions = 0;
    while f(lo) > 0.0 || f(hi) < 0.0 {
        expansions += 1;
        if expansions > 1000 || !width.is_finite() {
            return Err(Error::BracketFailure { level: tau });
        }
        width *= 2.0;
        if f(lo) > 0.0 {
            lo = min_loc - width;
        }
        if f(hi) < 0.0 {
            hi = max_loc + width;
        }
    }

    let tol = 1e-15 * min_scale;
    let mut x = weights
        .iter()
        .zip(comps)
        .map(|(w, c)| w * c.loc)
        .sum::<f64>()
        .clamp(lo, hi);
    for _ in 0..500 {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = mixture_pdf(weights, comps, x);
        let mut next = x - fx / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= tol.max(2.0 * f64::EPSILON * x.abs()) || hi - lo <= 2.0 * f64::EPSILON * x.abs()
        {
            break;
        }
    }
    if f(x).abs() > 1e-10 {
        return Err(Error::BracketFailure { level: tau });
    }
    Ok(x)
}

fn check_es(comps: &[UniT]) -> Result<()> {
    match comps.iter().find(|c| !(c.nu > 1.0)) {
        Some(c) => Err(Error::EsUndefined(c.nu)),
        None => Ok(()),
    }
}

/// Lower-tail expected shortfall of the mixture at level `tau`:
/// `(1/tau) * sum_l w_l E[Y_l; Y_l <= q]` with `q` the mixture quantile.
pub fn mixture_es(weights: &[f64], comps: &[UniT], tau: f64) -> Result<f64> {
    check_es(comps)?;
    let q = mixture_quantile(weights, comps, tau)?;
    let partial: f64 = weights
        .iter()
        .zip(comps)
        .map(|(w, c)| w * c.partial_expectation(q))
        .sum();
    Ok(partial / tau)
}

/// `E[Y | Y <= threshold]` under the mixture.
pub fn mixture_tail_mean(weights: &[f64], comps: &[UniT], threshold: f64) -> Result<f64> {
    check_mixture(weights, comps)?;
    check_es(comps)?;
    let mass = mixture_cdf(weights, comps, threshold);
    if !(mass > 0.0) {
        return Err(Error::invalid(format!(
            "no probability mass below threshold {threshold}"
        )));
    }
    let partial: f64 = weights
        .iter()
        .zip(comps)
        .map(|(w, c)| w * c.partial_expectation(threshold))
        .sum();
    Ok(partial / mass)
}

use std::f64::consts::PI;

use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Log-density of the standard Student-t with `nu` degrees of freedom.
pub fn t_logpdf(z: f64, nu: f64) -> f64 {
    ln_gamma((nu + 1.0) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * (nu * PI).ln()
        - (nu + 1.0) / 2.0 * (z * z / nu).ln_1p()
}

pub fn t_pdf(z: f64, nu: f64) -> f64 {
    t_logpdf(z, nu).exp()
}

/// CDF of the standard Student-t.
pub fn t_cdf(z: f64, nu: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == 0.0 {
        return 0.5;
    }
    let x = nu / (nu + z * z);
    let tail = 0.5 * beta_reg(nu / 2.0, 0.5, x);
    if z < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Quantile of the standard Student-t, by safeguarded Newton iteration on
/// [`t_cdf`] (closed forms for `nu = 1` and `nu = 2`).
pub fn t_quantile(tau: f64, nu: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidLevel(tau));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::invalid(format!("degrees of freedom {nu} must be positive")));
    }
    if tau == 0.5 {
        return Ok(0.0);
    }
    if tau > 0.5 {
        return t_quantile(1.0 - tau, nu).map(|q| -q);
    }
    if nu == 1.0 {
        return Ok((PI * (tau - 0.5)).tan());
    }
    if nu == 2.0 {
        return Ok((2.0 * tau - 1.0) / (2.0 * tau * (1.0 - tau)).sqrt());
    }

    // lower tail: root lies in (lo, 0)
    let mut hi = 0.0;
    let mut lo = -1.0;
    while t_cdf(lo, nu) > tau {
        hi = lo;
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::BracketFailure { level: tau });
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = t_cdf(x, nu) - tau;
        if f == 0.0 {
            return Ok(x);
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = t_pdf(x, nu);
        let mut next = x - f / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || hi - lo <= 4.0 * f64::EPSILON * x.abs()
        {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// `E[Z; Z <= z]` for a standard Student-t, finite for `nu > 1`.
pub fn t_partial_expectation(z: f64, nu: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    -(nu + z * z) / (nu - 1.0) * t_pdf(z, nu)
}

/// Lower-tail expected shortfall of the standard Student-t at level `tau`:
/// the mean of `Z` conditional on `Z <= t_quantile(tau, nu)`.
pub fn t_es(tau: f64, nu: f64) -> Result<f64> {
    if !(nu > 1.0) {
        return Err(Error::EsUndefined(nu));
    }
    let q = t_quantile(tau, nu)?;
    Ok(t_partial_expectation(q, nu) / tau)
}

/// Location-scale univariate Student-t; `scale` is a standard deviation-like
/// scale, not a variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniT {
    pub loc: f64,
    pub scale: f64,
    pub nu: f64,
}

impl UniT {
    pub fn new(loc: f64, scale: f64, nu: f64) -> Self {
        Self { loc, scale, nu }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        t_cdf((x - self.loc) / self.scale, self.nu)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        t_pdf((x - self.loc) / self.scale, self.nu) / self.scale
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        Ok(self.loc + self.scale * t_quantile(tau, self.nu)?)
    }

    /// `E[X; X <= x]`.
    pub fn partial_expectation(&self, x: f64) -> f64 {
        let z = (x - self.loc) / self.scale;
        self.loc * t_cdf(z, self.nu) + self.scale * t_partial_expectation(z, self.nu)
    }
}

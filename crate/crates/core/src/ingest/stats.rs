use serde::{Deserialize, Serialize};

use super::ReturnPanel;
use crate::error::{Error, Result};

/// Descriptive statistics of one return series.
///
/// `kurtosis` is the raw fourth standardized moment (about 3 for Gaussian
/// data); `jarque_bera` uses `kurtosis - 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std_dev: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub alpha: f64,
    pub quantile: f64,
    pub jarque_bera: f64,
}

/// Per-series summary of a panel; `alpha` is the empirical-quantile level.
pub fn summary_stats(panel: &ReturnPanel, alpha: f64) -> Result<Vec<SeriesStats>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidLevel(alpha));
    }
    if panel.len() < 8 {
        return Err(Error::invalid(format!(
            "summary statistics need at least 8 observations, found {}",
            panel.len()
        )));
    }
    panel
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| series_stats(name, &panel.column(j), alpha))
        .collect()
}

fn series_stats(name: &str, xs: &[f64], alpha: f64) -> Result<SeriesStats> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return Err(Error::DegenerateSeries(name.to_string()));
    }
    let skewness = m3 / m2.powf(1.5);
    let kurtosis = m4 / (m2 * m2);
    let jarque_bera = n / 6.0 * (skewness * skewness + (kurtosis - 3.0).powi(2) / 4.0);
    let std_dev = (m2 * n / (n - 1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SeriesStats {
        name: name.to_string(),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        mean,
        std_dev,
        skewness,
        kurtosis,
        alpha,
        quantile: quantile_sorted(&sorted, alpha),
        jarque_bera,
    })
}

/// Type-7 (linear interpolation between order statistics) sample quantile.
pub fn empirical_quantile(xs: &[f64], alpha: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, alpha)
}

fn quantile_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * alpha;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

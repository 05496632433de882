//! Shapley allocation of a target's delta co-risk across the other sectors.
//!
//! The game for target `i` has the other `p - 1` sectors as players; a
//! coalition `S` is worth the delta measure of `i` with exactly `S`
//! distressed, and the empty coalition is worth 0.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corisk::{multiple_measure_with_levels, ConditioningLevels, Measure, RiskOptions};
use crate::error::{Error, Result};
use crate::msmodel::FitResult;
use crate::predictive::{build_predictive, PredictiveMixture};

/// Largest number of players the exact enumeration accepts.
pub const MAX_PLAYERS: usize = 20;

/// Coalition values for one target, indexed by bitmask over `players`
/// (bit `k` set means `players[k]` is in the coalition).
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicMap {
    pub target: usize,
    pub players: Vec<usize>,
    values: Vec<f64>,
}

impl CharacteristicMap {
    /// Fails with `IncompleteMap` unless `values` covers all `2^n` coalitions
    /// with a finite value and `values[0] == 0`.
    pub fn from_values(target: usize, players: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n = players.len();
        if n > MAX_PLAYERS {
            return Err(Error::TooLarge(format!("{n} players exceed the limit of {MAX_PLAYERS}")));
        }
        if values.len() != 1 << n {
            return Err(Error::IncompleteMap(format!(
                "{} values for {} coalitions",
                values.len(),
                1u64 << n
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::IncompleteMap("empty coalition must be worth 0".into()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::IncompleteMap(format!("coalition {k:#b} has no finite value")));
        }
        Ok(Self {
            target,
            players,
            values,
        })
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn value(&self, mask: usize) -> f64 {
        self.values[mask]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grand_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Coalition values of `target` on one predictive mixture.
pub fn characteristic_values_for_mixture(
    mix: &PredictiveMixture,
    levels: &ConditioningLevels,
    target: usize,
    measure: Measure,
    opts: &RiskOptions,
) -> Result<CharacteristicMap> {
    let p = mix.dim();
    if target >= p {
        return Err(Error::IndexOutOfRange { index: target, len: p });
    }
    let players: Vec<usize> = (0..p).filter(|&j| j != target).collect();
    let n = players.len();
    if n == 0 {
        return Err(Error::invalid("attribution needs at least two sectors"));
    }
    if n > MAX_PLAYERS {
        return Err(Error::TooLarge(format!("{n} players exceed the limit of {MAX_PLAYERS}")));
    }
    let eval = |sector_mask: u64| {
        multiple_measure_with_levels(mix, levels, target, sector_mask, measure, opts.tau1, opts.coes_threshold)
    };
    let base = eval(0)?;
    let mut values = vec![0.0; 1 << n];
    let rest: Vec<f64> = (1..1usize << n)
        .into_par_iter()
        .map(|m| {
            let sector_mask = (0..n)
                .filter(|k| m & (1 << k) != 0)
                .fold(0u64, |acc, k| acc | (1 << players[k]));
            eval(sector_mask).map(|v| v - base)
        })
        .collect::<Result<_>>()?;
    values[1..].copy_from_slice(&rest);
    CharacteristicMap::from_values(target, players, values)
}

/// Coalition values of `target` on the predictive mixture at index `t`.
pub fn characteristic_values(
    fit: &FitResult,
    t: usize,
    target: usize,
    measure: Measure,
    opts: &RiskOptions,
) -> Result<CharacteristicMap> {
    let mix = build_predictive(fit, t, opts.horizon, opts.probs)?;
    let levels = ConditioningLevels::new(&mix, opts.tau2)?;
    characteristic_values_for_mixture(&mix, &levels, target, measure, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub target: usize,
    pub contributors: Vec<usize>,
    /// Aligned with `contributors`.
    pub shares: Vec<f64>,
    pub grand_value: f64,
}

impl ShapleyReport {
    pub fn share_of(&self, contributor: usize) -> Option<f64> {
        self.contributors
            .iter()
            .position(|&c| c == contributor)
            .map(|k| self.shares[k])
    }
}

/// Exact Shapley values:
/// `phi_j = sum_{S not containing j} |S|! (n-|S|-1)! / n! (v(S+j) - v(S))`.
pub fn shapley(map: &CharacteristicMap) -> ShapleyReport {
    let n = map.n_players();
    let mut fact = vec![1.0f64; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect();
    let shares = (0..n)
        .map(|j| {
            let bit = 1usize << j;
            (0..1usize << n)
                .filter(|m| m & bit == 0)
                .map(|m| weight[m.count_ones() as usize] * (map.value(m | bit) - map.value(m)))
                .sum()
        })
        .collect();
    ShapleyReport {
        target: map.target,
        contributors: map.players.clone(),
        shares,
        grand_value: map.grand_value(),
    }
}

/// Shapley reports for every target at every date.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionSeries {
    pub measure: Measure,
    pub opts: RiskOptions,
    /// `reports[t][i]`, target `i` at index `t`.
    pub reports: Vec<Vec<ShapleyReport>>,
}

impl AttributionSeries {
    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Share of `contributor` in `target`'s delta over time.
    pub fn share_series(&self, target: usize, contributor: usize) -> Result<Vec<f64>> {
        self.reports
            .iter()
            .map(|row| {
                row.get(target)
                    .and_then(|r| r.share_of(contributor))
                    .ok_or_else(|| Error::invalid(format!("no share of {contributor} in target {target}")))
            })
            .collect()
    }

    pub fn grand_series(&self, target: usize) -> Result<Vec<f64>> {
        self.reports
            .iter()
            .map(|row| {
                row.get(target)
                    .map(|r| r.grand_value)
                    .ok_or(Error::IndexOutOfRange {
                        index: target,
                        len: row.len(),
                    })
            })
            .collect()
    }

    /// `(share of b in a, share of a in b)` over time.
    pub fn vis_a_vis(&self, a: usize, b: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if a == b {
            return Err(Error::invalid("vis-a-vis needs two distinct sectors"));
        }
        Ok((self.share_series(a, b)?, self.share_series(b, a)?))
    }
}

fn attribution_for_targets(
    fit: &FitResult,
    targets: &[usize],
    measure: Measure,
    opts: &RiskOptions,
) -> Result<Vec<Vec<ShapleyReport>>> {
    (0..fit.n_obs)
        .into_par_iter()
        .map(|t| {
            let mix = build_predictive(fit, t, opts.horizon, opts.probs)?;
            let levels = ConditioningLevels::new(&mix, opts.tau2)?;
            targets
                .iter()
                .map(|&i| Ok(shapley(&characteristic_values_for_mixture(&mix, &levels, i, measure, opts)?)))
                .collect()
        })
        .collect()
}

/// Shapley shares of every (target, contributor) pair at every date.
pub fn attribution_series(fit: &FitResult, measure: Measure, opts: &RiskOptions) -> Result<AttributionSeries> {
    let targets: Vec<usize> = (0..fit.model.dim()).collect();
    Ok(AttributionSeries {
        measure,
        opts: *opts,
        reports: attribution_for_targets(fit, &targets, measure, opts)?,
    })
}

/// `(share of b in a, share of a in b)` over time, computing only the two
/// targets involved.
pub fn vis_a_vis(
    fit: &FitResult,
    pair: (usize, usize),
    measure: Measure,
    opts: &RiskOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (a, b) = pair;
    let p = fit.model.dim();
    if a == b || a >= p || b >= p {
        return Err(Error::invalid(format!("invalid pair ({a}, {b}) for {p} sectors")));
    }
    let rows = attribution_for_targets(fit, &[a, b], measure, opts)?;
    let pick = |k: usize, c: usize| -> Vec<f64> { rows.iter().map(|r| r[k].share_of(c).unwrap_or(f64::NAN)).collect() };
    Ok((pick(0, b), pick(1, a)))
}

fn delta_name(m: Measure) -> &'static str {
    match m {
        Measure::CoVaR => "DeltaCoVaR",
        Measure::CoES => "DeltaCoES",
    }
}

/// Long-format rows `date,target,contributor,measure,share,grand_value`.
pub fn write_attribution_csv<W: Write>(
    out: W,
    series: &AttributionSeries,
    dates: &[NaiveDate],
    names: &[String],
) -> Result<()> {
    let mut out = out;
    crate::write_schema_line(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "target", "contributor", "measure", "share", "grand_value"])?;
    for (t, row) in series.reports.iter().enumerate() {
        for r in row {
            for (&c, share) in r.contributors.iter().zip(&r.shares) {
                w.write_record([
                    dates[t].to_string(),
                    names[r.target].clone(),
                    names[c].clone(),
                    delta_name(series.measure).to_string(),
                    share.to_string(),
                    r.grand_value.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<attribution csv>", e))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AttributionDocument {
    pub schema_version: u32,
    pub measure: String,
    pub tau1: f64,
    pub tau2: f64,
    pub records: Vec<DateRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DateRecord {
    pub date: NaiveDate,
    pub targets: Vec<TargetRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TargetRecord {
    pub target: String,
    pub grand_value: f64,
    pub shares: Vec<ShareRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ShareRecord {
    pub contributor: String,
    pub share: f64,
}

impl AttributionDocument {
    pub fn new(series: &AttributionSeries, dates: &[NaiveDate], names: &[String]) -> Self {
        let records = series
            .reports
            .iter()
            .enumerate()
            .map(|(t, row)| DateRecord {
                date: dates[t],
                targets: row
                    .iter()
                    .map(|r| TargetRecord {
                        target: names[r.target].clone(),
                        grand_value: r.grand_value,
                        shares: r
                            .contributors
                            .iter()
                            .zip(&r.shares)
                            .map(|(&c, &share)| ShareRecord {
                                contributor: names[c].clone(),
                                share,
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        Self {
            schema_version: crate::SCHEMA_VERSION,
            measure: delta_name(series.measure).to_string(),
            tau1: series.opts.tau1,
            tau2: series.opts.tau2,
            records,
        }
    }
}

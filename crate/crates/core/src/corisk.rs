//! Marginal VaR/ES and the Multiple-CoVaR/CoES family on a predictive
//! mixture.
//!
//! A query fixes a target sector `i`, a distress set `J_d` and two levels.
//! Every other sector is pinned to a point: sectors in `J_d` at their
//! marginal `tau2` level, the rest at their marginal median (VaR) or median
//! ES (ES). Each mixture component is conditioned on that point, components
//! are reweighted by their marginal density there, and the target's VaR or
//! ES is read off the resulting univariate mixture.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::msmodel::FitResult;
use crate::predictive::{build_predictive, PredictiveMixture, ProbFlavor};
use crate::tdist::{condition_mvt, marginal_mvt, mixture_es, mixture_quantile, mixture_tail_mean, UniT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    CoVaR,
    CoES,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::CoVaR => "CoVaR",
            Measure::CoES => "CoES",
        }
    }
}

/// Truncation point for CoES.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoesThreshold {
    /// The conditional law's own `tau1`-quantile.
    #[default]
    ConditionalQuantile,
    /// The target's unconditional (marginal) `tau1`-VaR.
    UnconditionalVar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskQuery {
    pub target: usize,
    /// Distressed sectors; order is irrelevant.
    pub distress: Vec<usize>,
    pub tau1: f64,
    pub tau2: f64,
}

impl RiskQuery {
    pub fn new(target: usize, distress: Vec<usize>, tau1: f64, tau2: f64) -> Self {
        Self {
            target,
            distress,
            tau1,
            tau2,
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        for tau in [self.tau1, self.tau2] {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::InvalidLevel(tau));
            }
        }
        if p < 2 {
            return Err(Error::invalid("co-risk needs at least two sectors"));
        }
        for &j in std::iter::once(&self.target).chain(&self.distress) {
            if j >= p {
                return Err(Error::IndexOutOfRange { index: j, len: p });
            }
        }
        if self.distress.contains(&self.target) {
            return Err(Error::invalid("target cannot be in its own distress set"));
        }
        let mut d = self.distress.clone();
        d.sort_unstable();
        d.dedup();
        if d.len() != self.distress.len() {
            return Err(Error::invalid("distress set has repeated entries"));
        }
        Ok(())
    }

    fn mask(&self) -> u64 {
        self.distress.iter().fold(0, |m, &j| m | (1 << j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskOptions {
    pub tau1: f64,
    pub tau2: f64,
    pub horizon: usize,
    pub probs: ProbFlavor,
    pub coes_threshold: CoesThreshold,
}

impl Default for RiskOptions {
    fn default() -> Self {
        Self {
            tau1: 0.05,
            tau2: 0.05,
            horizon: 1,
            probs: ProbFlavor::Filtered,
            coes_threshold: CoesThreshold::ConditionalQuantile,
        }
    }
}

fn marginal_components(mix: &PredictiveMixture, i: usize) -> Result<Vec<UniT>> {
    if i >= mix.dim() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: mix.dim(),
        });
    }
    Ok(mix.components().iter().map(|c| c.coordinate(i)).collect())
}

/// `tau`-quantile of sector `i`'s marginal predictive mixture.
pub fn marginal_var(mix: &PredictiveMixture, i: usize, tau: f64) -> Result<f64> {
    mixture_quantile(mix.weights(), &marginal_components(mix, i)?, tau)
}

/// Lower-tail expected shortfall of sector `i`'s marginal predictive mixture.
pub fn marginal_es(mix: &PredictiveMixture, i: usize, tau: f64) -> Result<f64> {
    mixture_es(mix.weights(), &marginal_components(mix, i)?, tau)
}

/// Marginal VaR and ES of every sector at the distress level and at the
/// median; the conditioning points of all queries sharing `tau2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningLevels {
    pub tau2: f64,
    pub var_distress: Vec<f64>,
    pub var_normal: Vec<f64>,
    pub es_distress: Vec<f64>,
    pub es_normal: Vec<f64>,
}

impl ConditioningLevels {
    pub fn new(mix: &PredictiveMixture, tau2: f64) -> Result<Self> {
        if !(tau2 > 0.0 && tau2 < 1.0) {
            return Err(Error::InvalidLevel(tau2));
        }
        let p = mix.dim();
        let mut out = Self {
            tau2,
            var_distress: Vec::with_capacity(p),
            var_normal: Vec::with_capacity(p),
            es_distress: Vec::with_capacity(p),
            es_normal: Vec::with_capacity(p),
        };
        for i in 0..p {
            let comps = marginal_components(mix, i)?;
            out.var_distress.push(mixture_quantile(mix.weights(), &comps, tau2)?);
            out.var_normal.push(mixture_quantile(mix.weights(), &comps, 0.5)?);
            out.es_distress.push(mixture_es(mix.weights(), &comps, tau2)?);
            out.es_normal.push(mixture_es(mix.weights(), &comps, 0.5)?);
        }
        Ok(out)
    }

    /// Level at which sector `j` is pinned for `measure`.
    pub fn point(&self, measure: Measure, j: usize, distressed: bool) -> f64 {
        match (measure, distressed) {
            (Measure::CoVaR, true) => self.var_distress[j],
            (Measure::CoVaR, false) => self.var_normal[j],
            (Measure::CoES, true) => self.es_distress[j],
            (Measure::CoES, false) => self.es_normal[j],
        }
    }
}

/// Univariate law of the target after pinning every other sector.
#[derive(Debug, Clone)]
pub struct ConditionalMixture {
    pub weights: Vec<f64>,
    pub components: Vec<UniT>,
}

impl ConditionalMixture {
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        mixture_quantile(&self.weights, &self.components, tau)
    }
}

/// Law of `Y[target]` given `Y[cond_idx] = cond_values`: each component is
/// marginalized onto the target and conditioning coordinates (when they do
/// not already cover everything), conditioned, and reweighted by
/// `pi_l f_l(cond_values)` in log space.
pub fn conditional_mixture(
    mix: &PredictiveMixture,
    target: usize,
    cond_idx: &[usize],
    cond_values: &[f64],
) -> Result<ConditionalMixture> {
    if target >= mix.dim() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: mix.dim(),
        });
    }
    if cond_idx.contains(&target) {
        return Err(Error::invalid("target cannot be a conditioning coordinate"));
    }
    let covers_all = cond_idx.len() + 1 == mix.dim();
    let keep: Vec<usize> = std::iter::once(target).chain(cond_idx.iter().copied()).collect();
    let local: Vec<usize> = (1..keep.len()).collect();
    let mut log_w = Vec::with_capacity(mix.weights().len());
    let mut components = Vec::with_capacity(mix.weights().len());
    for (w, c) in mix.weights().iter().zip(mix.components()) {
        let cond = if covers_all {
            condition_mvt(c, cond_idx, cond_values)?
        } else {
            condition_mvt(&marginal_mvt(c, &keep)?, &local, cond_values)?
        };
        let uni = cond.univariate().expect("one free coordinate");
        let lw = if *w > 0.0 {
            w.ln() + marginal_mvt(c, cond_idx)?.logpdf(cond_values)
        } else {
            f64::NEG_INFINITY
        };
        log_w.push(lw);
        components.push(uni);
    }
    let norm = log_sum_exp(&log_w);
    if !norm.is_finite() {
        return Err(Error::Underflow(mix.as_of()));
    }
    let weights = log_w.iter().map(|lw| (lw - norm).exp()).collect();
    Ok(ConditionalMixture { weights, components })
}

/// Evaluates one Multiple measure from precomputed levels. `distress` is a
/// bitmask over sector indices.
pub fn multiple_measure_with_levels(
    mix: &PredictiveMixture,
    levels: &ConditioningLevels,
    target: usize,
    distress: u64,
    measure: Measure,
    tau1: f64,
    threshold: CoesThreshold,
) -> Result<f64> {
    let p = mix.dim();
    let cond_idx: Vec<usize> = (0..p).filter(|&j| j != target).collect();
    let cond_values: Vec<f64> = cond_idx
        .iter()
        .map(|&j| levels.point(measure, j, distress & (1 << j) != 0))
        .collect();
    let cm = conditional_mixture(mix, target, &cond_idx, &cond_values)?;
    match measure {
        Measure::CoVaR => cm.quantile(tau1),
        Measure::CoES => match threshold {
            CoesThreshold::ConditionalQuantile => mixture_es(&cm.weights, &cm.components, tau1),
            CoesThreshold::UnconditionalVar => {
                let cut = marginal_var(mix, target, tau1)?;
                mixture_tail_mean(&cm.weights, &cm.components, cut)
            }
        },
    }
}

fn prepare(mix: &PredictiveMixture, q: &RiskQuery) -> Result<ConditioningLevels> {
    q.validate(mix.dim())?;
    ConditioningLevels::new(mix, q.tau2)
}

/// `tau1`-VaR of the target given distressed sectors at their `tau2`-VaR and
/// the remaining sectors at their medians.
pub fn multiple_covar(mix: &PredictiveMixture, q: &RiskQuery) -> Result<f64> {
    let levels = prepare(mix, q)?;
    multiple_measure_with_levels(mix, &levels, q.target, q.mask(), Measure::CoVaR, q.tau1, CoesThreshold::default())
}

/// `tau1`-ES of the target given distressed sectors at their `tau2`-ES and
/// the remaining sectors at their median ES.
pub fn multiple_coes(mix: &PredictiveMixture, q: &RiskQuery) -> Result<f64> {
    multiple_coes_with(mix, q, CoesThreshold::default())
}

pub fn multiple_coes_with(mix: &PredictiveMixture, q: &RiskQuery, threshold: CoesThreshold) -> Result<f64> {
    let levels = prepare(mix, q)?;
    multiple_measure_with_levels(mix, &levels, q.target, q.mask(), Measure::CoES, q.tau1, threshold)
}

/// Distressed measure minus the measure with every conditioner at its
/// normal level.
pub fn delta_with_levels(
    mix: &PredictiveMixture,
    levels: &ConditioningLevels,
    target: usize,
    distress: u64,
    measure: Measure,
    tau1: f64,
    threshold: CoesThreshold,
) -> Result<f64> {
    if distress == 0 {
        return Err(Error::invalid("delta measures need a nonempty distress set"));
    }
    let stressed = multiple_measure_with_levels(mix, levels, target, distress, measure, tau1, threshold)?;
    let normal = multiple_measure_with_levels(mix, levels, target, 0, measure, tau1, threshold)?;
    Ok(stressed - normal)
}

pub fn delta_m_covar(mix: &PredictiveMixture, q: &RiskQuery) -> Result<f64> {
    let levels = prepare(mix, q)?;
    delta_with_levels(mix, &levels, q.target, q.mask(), Measure::CoVaR, q.tau1, CoesThreshold::default())
}

pub fn delta_m_coes(mix: &PredictiveMixture, q: &RiskQuery) -> Result<f64> {
    delta_m_coes_with(mix, q, CoesThreshold::default())
}

pub fn delta_m_coes_with(mix: &PredictiveMixture, q: &RiskQuery, threshold: CoesThreshold) -> Result<f64> {
    let levels = prepare(mix, q)?;
    delta_with_levels(mix, &levels, q.target, q.mask(), Measure::CoES, q.tau1, threshold)
}

/// The six quantities reported per date for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub var: f64,
    pub es: f64,
    pub covar: f64,
    pub coes: f64,
    pub delta_covar: f64,
    pub delta_coes: f64,
}

impl RiskRecord {
    pub fn evaluate(mix: &PredictiveMixture, q: &RiskQuery, threshold: CoesThreshold) -> Result<Self> {
        let levels = prepare(mix, q)?;
        Self::with_levels(mix, &levels, q, threshold)
    }

    fn with_levels(
        mix: &PredictiveMixture,
        levels: &ConditioningLevels,
        q: &RiskQuery,
        threshold: CoesThreshold,
    ) -> Result<Self> {
        let mask = q.mask();
        let m = |measure, d| multiple_measure_with_levels(mix, levels, q.target, d, measure, q.tau1, threshold);
        let covar = m(Measure::CoVaR, mask)?;
        let coes = m(Measure::CoES, mask)?;
        let (delta_covar, delta_coes) = if mask == 0 {
            (0.0, 0.0)
        } else {
            (covar - m(Measure::CoVaR, 0)?, coes - m(Measure::CoES, 0)?)
        };
        Ok(Self {
            var: marginal_var(mix, q.target, q.tau1)?,
            es: marginal_es(mix, q.target, q.tau1)?,
            covar,
            coes,
            delta_covar,
            delta_coes,
        })
    }

    pub fn get(&self, field: RiskField) -> f64 {
        match field {
            RiskField::Var => self.var,
            RiskField::Es => self.es,
            RiskField::CoVaR => self.covar,
            RiskField::CoES => self.coes,
            RiskField::DeltaCoVaR => self.delta_covar,
            RiskField::DeltaCoES => self.delta_coes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskField {
    Var,
    Es,
    CoVaR,
    CoES,
    DeltaCoVaR,
    DeltaCoES,
}

impl RiskField {
    pub fn name(self) -> &'static str {
        match self {
            RiskField::Var => "VaR",
            RiskField::Es => "ES",
            RiskField::CoVaR => "CoVaR",
            RiskField::CoES => "CoES",
            RiskField::DeltaCoVaR => "DeltaCoVaR",
            RiskField::DeltaCoES => "DeltaCoES",
        }
    }

    /// Fields belonging to one measure family.
    pub fn for_measure(m: Measure) -> [RiskField; 3] {
        match m {
            Measure::CoVaR => [RiskField::Var, RiskField::CoVaR, RiskField::DeltaCoVaR],
            Measure::CoES => [RiskField::Es, RiskField::CoES, RiskField::DeltaCoES],
        }
    }

    fn is_marginal(self) -> bool {
        matches!(self, RiskField::Var | RiskField::Es)
    }
}

/// One query evaluated at every date; `records[t]` is the forecast made with
/// information up to index `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSeries {
    pub query: RiskQuery,
    pub records: Vec<RiskRecord>,
}

impl RiskSeries {
    pub fn values(&self, field: RiskField) -> Vec<f64> {
        self.records.iter().map(|r| r.get(field)).collect()
    }
}

/// Evaluates `queries` at every date of `fit`, in parallel over dates.
pub fn risk_series(fit: &FitResult, queries: &[RiskQuery], opts: &RiskOptions) -> Result<Vec<RiskSeries>> {
    let p = fit.model.dim();
    for q in queries {
        q.validate(p)?;
        if q.tau1 != opts.tau1 || q.tau2 != opts.tau2 {
            return Err(Error::invalid("query levels must match the options"));
        }
    }
    let per_t: Vec<Vec<RiskRecord>> = (0..fit.n_obs)
        .into_par_iter()
        .map(|t| {
            let mix = build_predictive(fit, t, opts.horizon, opts.probs)?;
            let levels = ConditioningLevels::new(&mix, opts.tau2)?;
            queries
                .iter()
                .map(|q| RiskRecord::with_levels(&mix, &levels, q, opts.coes_threshold))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(queries
        .iter()
        .enumerate()
        .map(|(k, q)| RiskSeries {
            query: q.clone(),
            records: per_t.iter().map(|row| row[k]).collect(),
        })
        .collect())
}

/// Total risk of every sector: each sector's measures with all other
/// sectors distressed.
pub fn total_risk_series(fit: &FitResult, opts: &RiskOptions) -> Result<Vec<RiskSeries>> {
    let p = fit.model.dim();
    let queries: Vec<RiskQuery> = (0..p)
        .map(|i| RiskQuery::new(i, (0..p).filter(|&j| j != i).collect(), opts.tau1, opts.tau2))
        .collect();
    risk_series(fit, &queries, opts)
}

/// Delta series of `i` given `j` on a two-sector fit.
pub fn standard_pairwise_delta(
    fit_bivariate: &FitResult,
    i: usize,
    j: usize,
    measure: Measure,
    opts: &RiskOptions,
) -> Result<Vec<f64>> {
    if fit_bivariate.model.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: fit_bivariate.model.dim(),
        });
    }
    if i == j || i > 1 || j > 1 {
        return Err(Error::invalid("pair indices must be 0 and 1"));
    }
    let q = RiskQuery::new(i, vec![j], opts.tau1, opts.tau2);
    let s = risk_series(fit_bivariate, &[q], opts)?;
    Ok(s[0].values(match measure {
        Measure::CoVaR => RiskField::DeltaCoVaR,
        Measure::CoES => RiskField::DeltaCoES,
    }))
}

/// Writes long-format rows `date,target,distress_set,measure,tau1,tau2,value`.
/// `distress_set` is empty for the marginal VaR and ES rows.
pub fn write_risk_csv<W: Write>(
    out: W,
    series: &[RiskSeries],
    dates: &[NaiveDate],
    names: &[String],
    fields: &[RiskField],
) -> Result<()> {
    let mut out = out;
    crate::write_schema_line(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "target", "distress_set", "measure", "tau1", "tau2", "value"])?;
    for s in series {
        let q = &s.query;
        let mut dset: Vec<&str> = q.distress.iter().map(|&j| names[j].as_str()).collect();
        dset.sort_unstable();
        let dset = dset.join("+");
        for &field in fields {
            for (t, r) in s.records.iter().enumerate() {
                w.write_record([
                    dates[t].to_string(),
                    names[q.target].clone(),
                    if field.is_marginal() { String::new() } else { dset.clone() },
                    field.name().to_string(),
                    q.tau1.to_string(),
                    q.tau2.to_string(),
                    r.get(field).to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<risk csv>", e))?;
    Ok(())
}

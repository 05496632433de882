//! Command-line driver: `stats | select | fit | risk | shapley | simulate`.
//!
//! Settings come from flags, optionally layered over a JSON file given with
//! `--config`; flags win. Every CSV output starts with a
//! `# schema-version` comment line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::attribution::{attribution_series, write_attribution_csv, AttributionDocument, AttributionSeries};
use crate::corisk::{standard_pairwise_delta, total_risk_series, write_risk_csv, CoesThreshold, Measure, RiskField, RiskOptions};
use crate::error::{Error, Result};
use crate::ingest::{load_csv, prices_to_log_returns, summary_stats, CsvLayout, ReturnPanel};
use crate::msmodel::{fit_restarts, select_l, Criterion, FitResult, ModelDocument};
use crate::predictive::ProbFlavor;
use crate::sim::{sample_path, SimSpec};

#[derive(Parser, Debug)]
#[command(name = "msrisk", version, about = "Markov-switching Student-t co-risk toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Summary statistics per series
    Stats(CommonArgs),
    /// Fit a range of state counts and tabulate loglik / AIC / BIC
    Select(CommonArgs),
    /// Fit one model; writes the model JSON and state probabilities
    Fit(CommonArgs),
    /// Total-risk CoVaR / CoES series per sector
    Risk(CommonArgs),
    /// Shapley attribution of delta co-risk
    Shapley(CommonArgs),
    /// Simulate a panel from a model JSON
    Simulate(CommonArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureSet {
    Covar,
    Coes,
    Both,
}

impl MeasureSet {
    fn measures(self) -> Vec<Measure> {
        match self {
            MeasureSet::Covar => vec![Measure::CoVaR],
            MeasureSet::Coes => vec![Measure::CoES],
            MeasureSet::Both => vec![Measure::CoVaR, Measure::CoES],
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProbsArg {
    Filtered,
    Smoothed,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Aic,
    Bic,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ThresholdArg {
    Conditional,
    Unconditional,
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// JSON file with any of the settings below; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV: a date column followed by one column per series
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Treat the input as price levels and convert to log returns
    #[arg(long)]
    pub prices: bool,
    /// Name of the date column (default: first column)
    #[arg(long)]
    pub date_column: Option<String>,
    /// Comma-separated series to keep (default: all)
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    /// Number of hidden states
    #[arg(long = "L")]
    pub l: Option<usize>,
    /// Inclusive state-count range, e.g. 2..6
    #[arg(long = "L-range")]
    pub l_range: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tau1: Option<f64>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_enum)]
    pub measure: Option<MeasureSet>,
    #[arg(long, value_enum)]
    pub probs: Option<ProbsArg>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also emit standard bivariate delta series next to the Shapley shares
    #[arg(long)]
    pub compare_standard: bool,
    /// Model JSON (risk, shapley, simulate)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Empirical quantile level for `stats`
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    /// CoES truncation point
    #[arg(long, value_enum)]
    pub coes_threshold: Option<ThresholdArg>,
    /// Simulation length
    #[arg(long = "T")]
    pub t: Option<usize>,
}

/// Resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub prices: bool,
    pub date_column: Option<String>,
    pub columns: Option<Vec<String>>,
    #[serde(rename = "L")]
    pub l: Option<usize>,
    #[serde(rename = "L_range")]
    pub l_range: Option<String>,
    pub restarts: usize,
    pub seed: u64,
    pub tau1: f64,
    pub tau2: f64,
    pub horizon: usize,
    pub measure: MeasureSet,
    pub probs: ProbFlavor,
    pub out: PathBuf,
    pub compare_standard: bool,
    pub model: Option<PathBuf>,
    pub alpha: f64,
    pub criterion: Criterion,
    pub coes_threshold: CoesThreshold,
    #[serde(rename = "T")]
    pub t: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            prices: false,
            date_column: None,
            columns: None,
            l: None,
            l_range: None,
            restarts: 10,
            seed: 0,
            tau1: 0.05,
            tau2: 0.05,
            horizon: 1,
            measure: MeasureSet::Both,
            probs: ProbFlavor::Filtered,
            out: PathBuf::from("."),
            compare_standard: false,
            model: None,
            alpha: 0.01,
            criterion: Criterion::Aic,
            coes_threshold: CoesThreshold::ConditionalQuantile,
            t: None,
        }
    }
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut c = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text)?
            }
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &args.$field {
                    c.$field = v.clone().into();
                }
            )*};
        }
        take!(input, date_column, columns, l, l_range, model, t);
        macro_rules! take_plain {
            ($($field:ident),*) => {$(
                if let Some(v) = args.$field {
                    c.$field = v;
                }
            )*};
        }
        take_plain!(restarts, seed, tau1, tau2, horizon, measure, alpha);
        if let Some(o) = &args.out {
            c.out = o.clone();
        }
        if args.prices {
            c.prices = true;
        }
        if args.compare_standard {
            c.compare_standard = true;
        }
        if let Some(p) = args.probs {
            c.probs = match p {
                ProbsArg::Filtered => ProbFlavor::Filtered,
                ProbsArg::Smoothed => ProbFlavor::Smoothed,
            };
        }
        if let Some(k) = args.criterion {
            c.criterion = match k {
                CriterionArg::Aic => Criterion::Aic,
                CriterionArg::Bic => Criterion::Bic,
            };
        }
        if let Some(t) = args.coes_threshold {
            c.coes_threshold = match t {
                ThresholdArg::Conditional => CoesThreshold::ConditionalQuantile,
                ThresholdArg::Unconditional => CoesThreshold::UnconditionalVar,
            };
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        for tau in [self.tau1, self.tau2, self.alpha] {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::InvalidLevel(tau));
            }
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if let Some(r) = &self.l_range {
            parse_l_range(r)?;
        }
        Ok(())
    }

    fn risk_options(&self) -> RiskOptions {
        RiskOptions {
            tau1: self.tau1,
            tau2: self.tau2,
            horizon: self.horizon,
            probs: self.probs,
            coes_threshold: self.coes_threshold,
        }
    }

    fn layout(&self) -> CsvLayout {
        CsvLayout {
            date_column: self.date_column.clone(),
            value_columns: self.columns.clone(),
        }
    }

    fn panel(&self) -> Result<ReturnPanel> {
        let path = self
            .input
            .as_ref()
            .ok_or_else(|| Error::invalid("--input is required"))?;
        let raw = load_csv(path, &self.layout())?;
        if self.prices {
            prices_to_log_returns(&raw)
        } else {
            Ok(raw)
        }
    }

    fn out_file(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(self.out.join(name))
    }
}

/// Parses `a..b`, `a..=b`, `a-b`, `a:b` (all inclusive) or `a,b,c`.
pub fn parse_l_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::invalid(format!("cannot parse state-count range {s:?}"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let s = s.trim();
    let values: Vec<usize> = if s.contains(',') {
        s.split(',').map(num).collect::<Result<_>>()?
    } else if let Some((a, b)) = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .or_else(|| s.split_once('-'))
        .or_else(|| s.split_once(':'))
    {
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        vec![num(s)?]
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs one subcommand; returns the paths written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    match &cli.command {
        Command::Stats(a) => cmd_stats(&RunConfig::resolve(a)?),
        Command::Select(a) => cmd_select(&RunConfig::resolve(a)?),
        Command::Fit(a) => cmd_fit(&RunConfig::resolve(a)?),
        Command::Risk(a) => cmd_risk(&RunConfig::resolve(a)?),
        Command::Shapley(a) => cmd_shapley(&RunConfig::resolve(a)?),
        Command::Simulate(a) => cmd_simulate(&RunConfig::resolve(a)?),
    }
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let panel = cfg.panel()?;
    let stats = summary_stats(&panel, cfg.alpha)?;
    let path = cfg.out_file("stats.csv")?;
    let mut f = create(&path)?;
    crate::write_schema_line(&mut f)?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        w.write_record(["series", "min", "max", "mean", "std_dev", "skewness", "kurtosis", "alpha", "quantile", "jarque_bera"])?;
        for s in &stats {
            w.write_record([
                s.name.clone(),
                s.min.to_string(),
                s.max.to_string(),
                s.mean.to_string(),
                s.std_dev.to_string(),
                s.skewness.to_string(),
                s.kurtosis.to_string(),
                s.alpha.to_string(),
                s.quantile.to_string(),
                s.jarque_bera.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    finish(f, &path)?;
    Ok(vec![path])
}

pub fn cmd_select(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let panel = cfg.panel()?;
    let ls = match (&cfg.l_range, cfg.l) {
        (Some(r), _) => parse_l_range(r)?,
        (None, Some(l)) => vec![l],
        (None, None) => (2..=6).collect(),
    };
    let table = select_l(&panel, &ls, cfg.criterion, cfg.restarts, cfg.seed)?;
    let path = cfg.out_file("selection.csv")?;
    let mut f = create(&path)?;
    crate::write_schema_line(&mut f)?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        w.write_record(["L", "k", "loglik", "aic", "bic", "underdetermined", "chosen", "error"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &table.rows {
            w.write_record([
                r.l.to_string(),
                r.k.to_string(),
                opt(r.loglik),
                opt(r.aic),
                opt(r.bic),
                r.underdetermined.to_string(),
                (table.chosen == Some(r.l)).to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    finish(f, &path)?;
    if table.chosen.is_none() {
        return Err(Error::invalid("no state count could be fitted"));
    }
    Ok(vec![path])
}

fn write_probs(path: &Path, dates: &[NaiveDate], probs: &nalgebra::DMatrix<f64>) -> Result<()> {
    let mut f = create(path)?;
    crate::write_schema_line(&mut f)?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        let mut header = vec!["date".to_string()];
        header.extend((1..=probs.ncols()).map(|l| format!("state_{l}")));
        w.write_record(&header)?;
        for (t, d) in dates.iter().enumerate() {
            let mut row = vec![d.to_string()];
            row.extend(probs.row(t).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    finish(f, path)
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let panel = cfg.panel()?;
    let fit = match (cfg.l, &cfg.l_range) {
        (Some(l), _) => fit_restarts(&panel, l, cfg.restarts, cfg.seed)?,
        (None, Some(r)) => {
            let table = select_l(&panel, &parse_l_range(r)?, cfg.criterion, cfg.restarts, cfg.seed)?;
            table
                .chosen_fit()
                .cloned()
                .ok_or_else(|| Error::invalid("no state count could be fitted"))?
        }
        (None, None) => return Err(Error::invalid("--L or --L-range is required")),
    };
    let model_path = cfg.out_file("model.json")?;
    let doc = ModelDocument::from_fit(&fit, panel.names());
    let text = doc.to_json()?;
    if ModelDocument::from_json(&text)?.to_model()? != fit.model {
        return Err(Error::invalid("model JSON failed to round-trip"));
    }
    write_json(&model_path, &text)?;
    let smoothed_path = cfg.out_file("smoothed.csv")?;
    write_probs(&smoothed_path, panel.dates(), &fit.smoothed)?;
    let filtered_path = cfg.out_file("filtered.csv")?;
    write_probs(&filtered_path, panel.dates(), &fit.filtered)?;

    println!("L = {}, loglik = {:.3}, AIC = {:.3}, BIC = {:.3}", fit.model.n_states(), fit.loglik, fit.aic(), fit.bic());
    let nus: Vec<String> = fit.model.nus().iter().map(|v| format!("{v:.4}")).collect();
    println!("nu: {}", nus.join(" "));
    println!("Q:");
    for row in fit.model.transition().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        println!("  {}", cells.join(" "));
    }
    Ok(vec![model_path, smoothed_path, filtered_path])
}

/// Panel and fit for the risk commands: a stored model is re-filtered on the
/// input, otherwise a model is estimated.
fn model_and_panel(cfg: &RunConfig) -> Result<(ReturnPanel, FitResult)> {
    let mut panel = cfg.panel()?;
    match &cfg.model {
        Some(path) => {
            let doc = ModelDocument::read(path)?;
            if !doc.labels.is_empty() && doc.labels.as_slice() != panel.names() {
                let idx = doc
                    .labels
                    .iter()
                    .map(|l| {
                        panel
                            .names()
                            .iter()
                            .position(|n| n == l)
                            .ok_or_else(|| Error::invalid(format!("model series {l:?} not in input")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                panel = panel.select_columns(&idx)?;
            }
            let fit = FitResult::from_model(doc.to_model()?, &panel)?;
            Ok((panel, fit))
        }
        None => {
            let l = cfg
                .l
                .ok_or_else(|| Error::invalid("--model or --L is required"))?;
            let fit = fit_restarts(&panel, l, cfg.restarts, cfg.seed)?;
            Ok((panel, fit))
        }
    }
}

fn measure_tag(m: Measure) -> &'static str {
    match m {
        Measure::CoVaR => "covar",
        Measure::CoES => "coes",
    }
}

pub fn cmd_risk(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (panel, fit) = model_and_panel(cfg)?;
    let opts = cfg.risk_options();
    let series = total_risk_series(&fit, &opts)?;
    let mut written = Vec::new();
    for m in cfg.measure.measures() {
        let fields = RiskField::for_measure(m);
        for s in &series {
            for &f in &fields {
                if s.values(f).iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("non-finite {} value", f.name())));
                }
            }
        }
        let path = cfg.out_file(&format!("risk_{}.csv", measure_tag(m)))?;
        let mut f = create(&path)?;
        write_risk_csv(&mut f, &series, panel.dates(), panel.names(), &fields)?;
        finish(f, &path)?;
        written.push(path);
    }
    Ok(written)
}

fn check_efficiency(series: &AttributionSeries) -> Result<()> {
    for (t, row) in series.reports.iter().enumerate() {
        for r in row {
            let sum: f64 = r.shares.iter().sum();
            if (sum - r.grand_value).abs() > 1e-9 * r.grand_value.abs().max(1.0) {
                return Err(Error::invalid(format!(
                    "shares of target {} at index {t} sum to {sum}, grand value {}",
                    r.target, r.grand_value
                )));
            }
        }
    }
    Ok(())
}

pub fn cmd_shapley(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (panel, fit) = model_and_panel(cfg)?;
    let opts = cfg.risk_options();
    let mut written = Vec::new();
    let p = panel.dim();
    let measures = cfg.measure.measures();
    let pair_fits = if cfg.compare_standard {
        let mut fits = Vec::new();
        for a in 0..p {
            for b in a + 1..p {
                let sub = panel.select_columns(&[a, b])?;
                let l = fit.model.n_states();
                fits.push(((a, b), fit_restarts(&sub, l, cfg.restarts, cfg.seed)?));
            }
        }
        fits
    } else {
        Vec::new()
    };
    for m in measures {
        let series = attribution_series(&fit, m, &opts)?;
        check_efficiency(&series)?;
        let tag = measure_tag(m);
        let csv_path = cfg.out_file(&format!("shapley_{tag}.csv"))?;
        let mut f = create(&csv_path)?;
        write_attribution_csv(&mut f, &series, panel.dates(), panel.names())?;
        finish(f, &csv_path)?;
        let json_path = cfg.out_file(&format!("shapley_{tag}.json"))?;
        let doc = AttributionDocument::new(&series, panel.dates(), panel.names());
        write_json(&json_path, &serde_json::to_string_pretty(&doc)?)?;
        written.push(csv_path);
        written.push(json_path);

        if cfg.compare_standard {
            let path = cfg.out_file(&format!("standard_{tag}.csv"))?;
            let mut f = create(&path)?;
            crate::write_schema_line(&mut f)?;
            {
                let mut w = csv::Writer::from_writer(&mut f);
                w.write_record(["date", "target", "contributor", "measure", "standard_delta", "shapley_share"])?;
                for ((a, b), pf) in &pair_fits {
                    for (i, j, bi, bj) in [(*a, *b, 0, 1), (*b, *a, 1, 0)] {
                        let standard = standard_pairwise_delta(pf, bi, bj, m, &opts)?;
                        let shares = series.share_series(i, j)?;
                        for t in 0..panel.len() {
                            w.write_record([
                                panel.dates()[t].to_string(),
                                panel.names()[i].clone(),
                                panel.names()[j].clone(),
                                format!("Delta{}", m.name()),
                                standard[t].to_string(),
                                shares[t].to_string(),
                            ])?;
                        }
                    }
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
            }
            finish(f, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Writes a panel as `date,<names...>` with the schema line on top.
pub fn write_panel_csv<W: Write>(out: W, panel: &ReturnPanel) -> Result<()> {
    let mut out = out;
    crate::write_schema_line(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string()];
    header.extend(panel.names().iter().cloned());
    w.write_record(&header)?;
    for t in 0..panel.len() {
        let mut row = vec![panel.dates()[t].to_string()];
        row.extend(panel.row(t).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<panel csv>", e))?;
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let model_path = cfg
        .model
        .as_ref()
        .ok_or_else(|| Error::invalid("--model is required"))?;
    let doc = ModelDocument::read(model_path)?;
    let model = doc.to_model()?;
    let t = cfg.t.ok_or_else(|| Error::invalid("--T is required"))?;
    let (states, raw) = sample_path(&SimSpec {
        model: model.clone(),
        t,
        seed: cfg.seed,
    })?;
    let names: Vec<String> = if doc.labels.len() == model.dim() {
        doc.labels.clone()
    } else {
        (1..=model.dim()).map(|j| format!("s{j}")).collect()
    };
    let panel = ReturnPanel::new(raw.dates().to_vec(), names.clone(), raw.returns().clone())?;
    let panel_path = cfg.out_file("panel.csv")?;
    let mut f = create(&panel_path)?;
    write_panel_csv(&mut f, &panel)?;
    finish(f, &panel_path)?;

    let states_path = cfg.out_file("states.csv")?;
    let mut f = create(&states_path)?;
    crate::write_schema_line(&mut f)?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        w.write_record(["date", "state"])?;
        for (d, s) in panel.dates().iter().zip(&states) {
            w.write_record([d.to_string(), (s + 1).to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&states_path, e))?;
    }
    finish(f, &states_path)?;

    let truth_path = cfg.out_file("truth.json")?;
    write_json(&truth_path, &ModelDocument::from_model(&model, &names).to_json()?)?;
    Ok(vec![panel_path, states_path, truth_path])
}

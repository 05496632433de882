//! Return panels: CSV ingestion, price differencing and descriptive statistics.
//!
//! Input files carry an ISO-8601 date in one column and numeric series in the
//! others. Missing or unparseable cells are rejected, never imputed.

mod stats;

use std::collections::HashSet;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use stats::{empirical_quantile, summary_stats, SeriesStats};

/// Dated `T x p` matrix of log-returns, one named column per sector.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    returns: DMatrix<f64>,
}

impl ReturnPanel {
    /// Builds a panel, checking date order, shape and finiteness.
    ///
    /// Programmatic panels may have a single column; files loaded through
    /// [`load_csv`] must have at least two.
    pub fn new(dates: Vec<NaiveDate>, names: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        if returns.nrows() == 0 || returns.ncols() == 0 {
            return Err(Error::Empty("panel has no observations".into()));
        }
        if dates.len() != returns.nrows() {
            return Err(Error::DimensionMismatch {
                expected: returns.nrows(),
                found: dates.len(),
            });
        }
        if names.len() != returns.ncols() {
            return Err(Error::DimensionMismatch {
                expected: returns.ncols(),
                found: names.len(),
            });
        }
        check_dates(&dates)?;
        if let Some(pos) = returns.iter().position(|v| !v.is_finite()) {
            let row = pos % returns.nrows();
            return Err(Error::Unparseable {
                rows: vec![row + 1],
                detail: "non-finite value".into(),
            });
        }
        Ok(Self {
            dates,
            names,
            returns,
        })
    }

    /// Panel with synthetic consecutive weekly dates starting 2000-01-03.
    pub fn from_matrix(names: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
        let dates = (0..returns.nrows())
            .map(|t| start + chrono::Duration::weeks(t as i64))
            .collect();
        Self::new(dates, names, returns)
    }

    /// Panel with default names `s1..sp` and synthetic weekly dates.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::RaggedRow {
                row: i + 1,
                expected: p,
                found: r.len(),
            });
        }
        let m = DMatrix::from_fn(t, p, |i, j| rows[i][j]);
        let names = (1..=p).map(|j| format!("s{j}")).collect();
        Self::from_matrix(names, m)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.returns.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.nrows() == 0
    }

    /// Number of series `p`.
    pub fn dim(&self) -> usize {
        self.returns.ncols()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.returns.row(t).iter().copied().collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.returns.column(j).iter().copied().collect()
    }

    /// Sub-panel with the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        for &c in cols {
            if c >= self.dim() {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    len: self.dim(),
                });
            }
        }
        let m = DMatrix::from_fn(self.len(), cols.len(), |i, j| self.returns[(i, cols[j])]);
        let names = cols.iter().map(|&c| self.names[c].clone()).collect();
        Self::new(self.dates.clone(), names, m)
    }

    /// Applies `y -> scale * y + shift` to every cell.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        let mut out = self.clone();
        out.returns.apply(|v| *v = scale * *v + shift);
        out
    }
}

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    let mut seen = HashSet::with_capacity(dates.len());
    for (i, d) in dates.iter().enumerate() {
        if !seen.insert(*d) {
            return Err(Error::DuplicateDate(d.to_string()));
        }
        if i > 0 && *d <= dates[i - 1] {
            return Err(Error::NonMonotoneDates {
                row: i + 1,
                date: d.to_string(),
                previous: dates[i - 1].to_string(),
            });
        }
    }
    Ok(())
}

/// Which CSV columns hold the date and the series.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CsvLayout {
    /// Header name of the date column; the first column when `None`.
    pub date_column: Option<String>,
    /// Header names of the series to keep; every other column when `None`.
    pub value_columns: Option<Vec<String>>,
}

/// Reads a dated numeric CSV into a panel.
///
/// Row numbers in errors are 1-based file lines, so the first data row is 2.
pub fn load_csv(path: impl AsRef<Path>, layout: &CsvLayout) -> Result<ReturnPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, layout)
}

/// Same as [`load_csv`] over any reader.
pub fn load_csv_reader<R: std::io::Read>(reader: R, layout: &CsvLayout) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Empty("missing header row".into()));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("column {name:?} not in header")))
    };
    let date_col = match &layout.date_column {
        Some(name) => find(name)?,
        None => 0,
    };
    let value_cols: Vec<usize> = match &layout.value_columns {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&c| c != date_col).collect(),
    };
    if value_cols.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least two value columns, found {}",
            value_cols.len()
        )));
    }
    let names: Vec<String> = value_cols.iter().map(|&c| headers[c].to_string()).collect();

    let mut dates = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut bad_rows = Vec::new();
    let mut first_detail = None;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(Error::RaggedRow {
                row: line,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let date = NaiveDate::parse_from_str(&record[date_col], "%Y-%m-%d");
        let nums: Vec<std::result::Result<f64, _>> =
            value_cols.iter().map(|&c| record[c].parse::<f64>()).collect();
        let row_ok = date.is_ok() && nums.iter().all(|v| matches!(v, Ok(x) if x.is_finite()));
        if !row_ok {
            if first_detail.is_none() {
                first_detail = Some(if date.is_err() {
                    format!("bad date {:?}", &record[date_col])
                } else {
                    "bad numeric cell".to_string()
                });
            }
            bad_rows.push(line);
            continue;
        }
        dates.push(date.expect("checked"));
        values.extend(nums.into_iter().map(|v| v.expect("checked")));
    }
    if !bad_rows.is_empty() {
        return Err(Error::Unparseable {
            rows: bad_rows,
            detail: first_detail.unwrap_or_default(),
        });
    }
    if dates.is_empty() {
        return Err(Error::Empty("no data rows".into()));
    }
    let p = names.len();
    let m = DMatrix::from_row_slice(dates.len(), p, &values);
    ReturnPanel::new(dates, names, m)
}

/// Treats the panel's values as prices and returns log-differences.
///
/// The first date is dropped; each remaining date carries the return earned
/// over the preceding interval.
pub fn prices_to_log_returns(prices: &ReturnPanel) -> Result<ReturnPanel> {
    let m = prices.returns();
    for (j, col) in m.column_iter().enumerate() {
        if let Some((i, &v)) = col.iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(Error::NonPositivePrice {
                row: i + 1,
                column: j,
                value: v,
            });
        }
    }
    if m.nrows() < 2 {
        return Err(Error::Empty("need at least two price rows".into()));
    }
    let t = m.nrows() - 1;
    let r = DMatrix::from_fn(t, m.ncols(), |i, j| m[(i + 1, j)].ln() - m[(i, j)].ln());
    ReturnPanel::new(prices.dates()[1..].to_vec(), prices.names().to_vec(), r)
}

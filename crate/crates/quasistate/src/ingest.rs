//! Price panels, returns and local normalization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: non-positive price {value} for {ticker}")]
    NonPositivePrice {
        line: usize,
        ticker: String,
        value: f64,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate variance for ticker {ticker} at row {index}: window is constant")]
    DegenerateVariance { ticker: String, index: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Aligned panel of strictly positive close prices, one column per ticker.
#[derive(Debug, Clone)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// Row-major `len() x tickers.len()` matrix.
    values: Vec<f64>,
}

impl PricePanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, IngestError> {
        if values.len() != dates.len() * tickers.len() {
            return Err(IngestError::Invalid(format!(
                "value count {} does not match {} dates x {} tickers",
                values.len(),
                dates.len(),
                tickers.len()
            )));
        }
        if dates.len() < 2 {
            return Err(IngestError::InsufficientData(format!(
                "need at least 2 timestamps, got {}",
                dates.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IngestError::Invalid(
                "timestamps must be strictly increasing".into(),
            ));
        }
        if let Some(bad) = values.iter().position(|&v| v.is_nan() || v <= 0.0) {
            let (t, k) = (bad / tickers.len(), bad % tickers.len());
            return Err(IngestError::NonPositivePrice {
                line: 0,
                ticker: tickers[k].clone(),
                value: values[t * tickers.len() + k],
            });
        }
        Ok(Self {
            dates,
            tickers,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn value(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.tickers.len() + k]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let k = self.tickers.len();
        &self.values[t * k..(t + 1) * k]
    }
}

/// Panel of returns, optionally locally normalized.
#[derive(Debug, Clone)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// Row-major `len() x tickers.len()` matrix.
    values: Vec<f64>,
    /// Return horizon in trading days.
    pub horizon: usize,
    /// Window length of the local normalization, if applied.
    pub normalized: Option<usize>,
}

impl ReturnPanel {
    pub fn from_parts(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        values: Vec<f64>,
        horizon: usize,
        normalized: Option<usize>,
    ) -> Result<Self, IngestError> {
        if values.len() != dates.len() * tickers.len() {
            return Err(IngestError::Invalid(format!(
                "value count {} does not match {} dates x {} tickers",
                values.len(),
                dates.len(),
                tickers.len()
            )));
        }
        Ok(Self {
            dates,
            tickers,
            values,
            horizon,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn value(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.tickers.len() + k]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let k = self.tickers.len();
        &self.values[t * k..(t + 1) * k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.value(t, k)).collect()
    }
}

/// Ticker-to-sector assignment with a fixed sector ordering.
///
/// Sector order is the sorted list of distinct labels; the embedding of
/// sector matrices follows this order.
#[derive(Debug, Clone)]
pub struct SectorMap {
    pub assignments: BTreeMap<String, String>,
    pub sectors: Vec<String>,
}

impl SectorMap {
    pub fn new(assignments: BTreeMap<String, String>) -> Result<Self, IngestError> {
        if assignments.is_empty() {
            return Err(IngestError::Invalid("sector map is empty".into()));
        }
        let sectors: BTreeSet<&String> = assignments.values().collect();
        Ok(Self {
            sectors: sectors.into_iter().cloned().collect(),
            assignments,
        })
    }

    pub fn sector_of(&self, ticker: &str) -> Option<&str> {
        self.assignments.get(ticker).map(|s| s.as_str())
    }
}

/// Outcome of loading a price file: the aligned panel plus the tickers that
/// were dropped because they were not present at every timestamp.
#[derive(Debug)]
pub struct LoadReport {
    pub panel: PricePanel,
    pub dropped: Vec<String>,
}

/// Load a long-format price CSV (`date,ticker,close`, ISO-8601 dates).
///
/// Only instruments present at every timestamp are kept; everything else is
/// reported in [`LoadReport::dropped`].
pub fn load_prices(path: &Path) -> Result<LoadReport, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_prices_str(&text)
}

pub fn load_prices_str(text: &str) -> Result<LoadReport, IngestError> {
    // date -> ticker -> (price, line)
    let mut by_date: BTreeMap<NaiveDate, BTreeMap<String, f64>> = BTreeMap::new();
    let mut all_tickers: BTreeSet<String> = BTreeSet::new();
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, header)) if header.trim() == "date,ticker,close" => {}
        Some((_, header)) => {
            return Err(IngestError::Parse {
                line: 1,
                msg: format!("expected header `date,ticker,close`, got `{}`", header.trim()),
            })
        }
        None => {
            return Err(IngestError::InsufficientData("price file is empty".into()));
        }
    }

    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let mut parts = row.split(',');
        let (date_s, ticker, close_s) = match (parts.next(), parts.next(), parts.next()) {
            (Some(d), Some(t), Some(c)) if parts.next().is_none() => (d, t, c),
            _ => {
                return Err(IngestError::Parse {
                    line,
                    msg: format!("expected 3 comma-separated fields, got `{row}`"),
                })
            }
        };
        let date = NaiveDate::parse_from_str(date_s.trim(), "%Y-%m-%d").map_err(|e| {
            IngestError::Parse {
                line,
                msg: format!("bad date `{}`: {e}", date_s.trim()),
            }
        })?;
        let close: f64 = close_s.trim().parse().map_err(|e| IngestError::Parse {
            line,
            msg: format!("bad price `{}`: {e}", close_s.trim()),
        })?;
        if !close.is_finite() || close <= 0.0 {
            return Err(IngestError::NonPositivePrice {
                line,
                ticker: ticker.trim().to_string(),
                value: close,
            });
        }
        let ticker = ticker.trim().to_string();
        let day = by_date.entry(date).or_default();
        if day.insert(ticker.clone(), close).is_some() {
            return Err(IngestError::Parse {
                line,
                msg: format!("duplicate row for {} on {}", ticker, date),
            });
        }
        all_tickers.insert(ticker);
    }

    if by_date.len() < 2 {
        return Err(IngestError::InsufficientData(format!(
            "need at least 2 timestamps, got {}",
            by_date.len()
        )));
    }

    // Keep only tickers quoted on every date.
    let kept: Vec<String> = all_tickers
        .iter()
        .filter(|t| by_date.values().all(|day| day.contains_key(*t)))
        .cloned()
        .collect();
    let dropped: Vec<String> = all_tickers
        .iter()
        .filter(|t| !kept.contains(t))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(IngestError::InsufficientData(
            "no ticker is present at every timestamp".into(),
        ));
    }

    let dates: Vec<NaiveDate> = by_date.keys().cloned().collect();
    let mut values = Vec::with_capacity(dates.len() * kept.len());
    for day in by_date.values() {
        for t in &kept {
            values.push(day[t]);
        }
    }
    Ok(LoadReport {
        panel: PricePanel::new(dates, kept, values)?,
        dropped,
    })
}

/// Load a sector CSV (`ticker,sector`).
pub fn load_sectors(path: &Path) -> Result<SectorMap, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_sectors_str(&text)
}

pub fn load_sectors_str(text: &str) -> Result<SectorMap, IngestError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "ticker,sector" => {}
        Some((_, header)) => {
            return Err(IngestError::Parse {
                line: 1,
                msg: format!("expected header `ticker,sector`, got `{}`", header.trim()),
            })
        }
        None => return Err(IngestError::InsufficientData("sector file is empty".into())),
    }
    let mut assignments = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let mut parts = row.split(',');
        let (ticker, sector) = match (parts.next(), parts.next()) {
            (Some(t), Some(s)) if parts.next().is_none() => {
                (t.trim().to_string(), s.trim().to_string())
            }
            _ => {
                return Err(IngestError::Parse {
                    line,
                    msg: format!("expected 2 comma-separated fields, got `{row}`"),
                })
            }
        };
        if assignments.insert(ticker.clone(), sector).is_some() {
            return Err(IngestError::Parse {
                line,
                msg: format!("duplicate sector assignment for {ticker}"),
            });
        }
    }
    SectorMap::new(assignments)
}

/// Relative price changes over a horizon of `delta_t` trading days:
/// `r_k(t) = (S_k(t + delta_t) - S_k(t)) / S_k(t)`.
pub fn compute_returns(panel: &PricePanel, delta_t: usize) -> Result<ReturnPanel, IngestError> {
    if delta_t == 0 {
        return Err(IngestError::Invalid("return horizon must be positive".into()));
    }
    if panel.len() <= delta_t {
        return Err(IngestError::InsufficientData(format!(
            "panel length {} does not exceed horizon {}",
            panel.len(),
            delta_t
        )));
    }
    let n = panel.len() - delta_t;
    let k = panel.n_tickers();
    let mut values = Vec::with_capacity(n * k);
    for t in 0..n {
        for j in 0..k {
            let s0 = panel.value(t, j);
            let s1 = panel.value(t + delta_t, j);
            values.push((s1 - s0) / s0);
        }
    }
    ReturnPanel::from_parts(
        panel.dates[..n].to_vec(),
        panel.tickers.clone(),
        values,
        delta_t,
        None,
    )
}

/// Local normalization with a trailing window of `n` points:
/// `r~(t) = (r(t) - m(t)) / s(t)` where `m`, `s` are the mean and population
/// standard deviation of the `n` most recent values up to and including `t`.
/// The first `n - 1` rows are dropped.
pub fn local_normalize(panel: &ReturnPanel, n: usize) -> Result<ReturnPanel, IngestError> {
    if panel.normalized.is_some() {
        return Err(IngestError::Invalid("panel is already normalized".into()));
    }
    if n < 2 {
        return Err(IngestError::Invalid(format!(
            "normalization window must be at least 2, got {n}"
        )));
    }
    if panel.len() < n {
        return Err(IngestError::InsufficientData(format!(
            "panel length {} is shorter than normalization window {}",
            panel.len(),
            n
        )));
    }
    let out_len = panel.len() - (n - 1);
    let k = panel.n_tickers();
    let mut values = vec![0.0; out_len * k];
    for j in 0..k {
        for t in (n - 1)..panel.len() {
            let mut sum = 0.0;
            for i in (t + 1 - n)..=t {
                sum += panel.value(i, j);
            }
            let mean = sum / n as f64;
            let mut ss = 0.0;
            let mut max_abs: f64 = 0.0;
            for i in (t + 1 - n)..=t {
                let v = panel.value(i, j);
                let d = v - mean;
                ss += d * d;
                max_abs = max_abs.max(v.abs());
            }
            let sd = (ss / n as f64).sqrt();
            // A window whose spread is at rounding level of its magnitude is
            // constant for all practical purposes.
            if sd <= 1e-12 * max_abs {
                return Err(IngestError::DegenerateVariance {
                    ticker: panel.tickers[j].clone(),
                    index: t,
                });
            }
            values[(t - (n - 1)) * k + j] = (panel.value(t, j) - mean) / sd;
        }
    }
    ReturnPanel::from_parts(
        panel.dates[(n - 1)..].to_vec(),
        panel.tickers.clone(),
        values,
        panel.horizon,
        Some(n),
    )
}
